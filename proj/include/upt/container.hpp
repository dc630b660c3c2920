#pragma once

// Sectioned binary container shared by checkpoints ("UPTC") and trajectory
// files ("UPTD"). Layout, all integers little-endian:
//   magic[4] | u32 version | u64 json_len | json | u64 n_arrays |
//   n_arrays x (u32 name_len | name | u8 dtype | u32 ndim | u64 extents[ndim] | payload)
// dtype 1 = f32, 2 = f64. Files are written to a temporary name and renamed.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "upt/tensor.hpp"

namespace upt {

inline constexpr std::uint32_t kContainerVersion = 1;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class BadMagicError : public FormatError {
 public:
  using FormatError::FormatError;
};
class VersionMismatchError : public FormatError {
 public:
  using FormatError::FormatError;
};
class TruncatedError : public FormatError {
 public:
  using FormatError::FormatError;
};

struct Array {
  enum class DType : std::uint8_t { kF32 = 1, kF64 = 2 };
  std::string name;
  DType dtype = DType::kF64;
  Shape shape;
  std::vector<float> f32;
  std::vector<double> f64;

  template <class T>
  static Array from(std::string name, const Tensor<T>& t) {
    Array a;
    a.name = std::move(name);
    a.shape = t.shape();
    if constexpr (std::is_same_v<T, float>) {
      a.dtype = DType::kF32;
      a.f32 = t.storage();
    } else {
      a.dtype = DType::kF64;
      a.f64.assign(t.values().begin(), t.values().end());
    }
    return a;
  }

  template <class T>
  Tensor<T> to() const {
    std::vector<T> data;
    if (dtype == DType::kF32)
      data.assign(f32.begin(), f32.end());
    else
      data.assign(f64.begin(), f64.end());
    return Tensor<T>(shape, std::move(data));
  }
};

struct Container {
  std::string magic;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<Array> arrays;

  const Array& array(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return a;
    throw FormatError("container has no array named '" + name + "'");
  }
  bool has(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return true;
    return false;
  }
};

namespace detail {

template <class U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::string& buf, std::string path) : buf_(buf), path_(std::move(path)) {}

  template <class U>
  U get() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      v |= static_cast<U>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }

  std::string bytes(std::uint64_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > buf_.size() - pos_) throw TruncatedError(path_ + ": file is truncated");
  }
  const std::string& buf_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_container(const Container& c) {
  if (c.magic.size() != 4) throw ValueError("container magic must be 4 bytes");
  std::string out = c.magic;
  detail::put_le<std::uint32_t>(out, kContainerVersion);
  const std::string js = c.meta.dump();
  detail::put_le<std::uint64_t>(out, js.size());
  out += js;
  detail::put_le<std::uint64_t>(out, c.arrays.size());
  for (const auto& a : c.arrays) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.name.size()));
    out += a.name;
    out.push_back(static_cast<char>(a.dtype));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.shape.size()));
    for (auto e : a.shape) detail::put_le<std::uint64_t>(out, e);
    const std::size_t n = shape_numel(a.shape);
    if (a.dtype == Array::DType::kF32) {
      if (a.f32.size() != n) throw DimensionError("array '" + a.name + "' payload does not match its shape");
      for (float v : a.f32) detail::put_le(out, std::bit_cast<std::uint32_t>(v));
    } else {
      if (a.f64.size() != n) throw DimensionError("array '" + a.name + "' payload does not match its shape");
      for (double v : a.f64) detail::put_le(out, std::bit_cast<std::uint64_t>(v));
    }
  }
  return out;
}

inline Container decode_container(const std::string& buf, const std::string& expected_magic,
                                  const std::string& path = "<buffer>") {
  if (buf.size() < 4 || buf.compare(0, 4, expected_magic) != 0) {
    if (buf.size() < 4 && expected_magic.compare(0, buf.size(), buf) == 0)
      throw TruncatedError(path + ": file is truncated");
    throw BadMagicError(path + ": not a " + expected_magic + " file (bad magic)");
  }
  detail::Reader r(buf, path);
  Container c;
  c.magic = r.bytes(4);
  const auto version = r.get<std::uint32_t>();
  if (version != kContainerVersion)
    throw VersionMismatchError(path + ": format version " + std::to_string(version) + ", expected " +
                               std::to_string(kContainerVersion));
  const auto js_len = r.get<std::uint64_t>();
  try {
    c.meta = nlohmann::json::parse(r.bytes(js_len));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path + ": corrupt metadata section: " + e.what());
  }
  const auto n = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < n; ++i) {
    Array a;
    a.name = r.bytes(r.get<std::uint32_t>());
    const auto dt = r.get<std::uint8_t>();
    if (dt != 1 && dt != 2) throw FormatError(path + ": array '" + a.name + "' has unknown dtype");
    a.dtype = static_cast<Array::DType>(dt);
    const auto ndim = r.get<std::uint32_t>();
    for (std::uint32_t d = 0; d < ndim; ++d) a.shape.push_back(r.get<std::uint64_t>());
    const std::size_t count = shape_numel(a.shape);
    if (a.dtype == Array::DType::kF32) {
      a.f32.resize(count);
      for (auto& v : a.f32) v = std::bit_cast<float>(r.get<std::uint32_t>());
    } else {
      a.f64.resize(count);
      for (auto& v : a.f64) v = std::bit_cast<double>(r.get<std::uint64_t>());
    }
    c.arrays.push_back(std::move(a));
  }
  if (!r.done()) throw FormatError(path + ": trailing bytes after last array");
  return c;
}

inline void write_container(const Container& c, const std::filesystem::path& path) {
  const std::string bytes = encode_container(c);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Container read_container(const std::filesystem::path& path, const std::string& expected_magic) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_container(buf, expected_magic, path.string());
}

}  // namespace upt
