#pragma once

// Run configuration: one JSON document with model/train/data/eval sections.
// Every field has a default that depends on data.task; unknown keys and
// type mismatches are reported with their JSON path.

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "upt/rollout.hpp"
#include "upt/train.hpp"

namespace upt {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct DataConfig {
  std::string task = "diffusion2d";  // tgv2d | diffusion2d
  TaskSpec spec;
  std::size_t trajectories = 200;
  std::array<double, 3> split{100, 50, 50};
  std::size_t k = 1024;
  std::size_t steps = 24;
  double dt = 0.5;
  double nu = 0.01;      // tgv2d
  std::size_t substeps = 2;
  double kappa = 0.005;  // diffusion2d
  std::size_t n_blobs = 2;
  std::uint64_t seed = 0;
};

struct EvalSection {
  EvalConfig one_step;
  RolloutSettings rollout;
  double corr_threshold = 0.8;
  long corr_channel = -1;  // -1 = all channels jointly
  std::vector<double> sweep_multipliers{0.5, 1.0, 1.5};
  std::vector<double> sweep_supernode_factors{0.5, 1.0, 2.0};
};

struct RunConfig {
  UptConfig model;
  TrainConfig train;
  DataConfig data;
  EvalSection eval;

  void validate() const {
    if (data.task != "tgv2d" && data.task != "diffusion2d")
      throw ConfigError("data.task must be tgv2d or diffusion2d, got '" + data.task + "'");
    data.spec.validate();
    train.validate();
    if (data.k < 1) throw ConfigError("data.k must be >= 1");
    if (data.steps < 2) throw ConfigError("data.steps must be >= 2");
    if (!(data.dt > 0)) throw ConfigError("data.dt must be positive");
    if (!(data.nu > 0)) throw ConfigError("data.nu must be positive");
    if (!(data.kappa > 0)) throw ConfigError("data.kappa must be positive");
    if (data.n_blobs < 1) throw ConfigError("data.n_blobs must be >= 1");
    if (data.substeps < 1) throw ConfigError("data.substeps must be >= 1");
    if (data.trajectories < 1) throw ConfigError("data.trajectories must be >= 1");
    if (data.split[0] < 0 || data.split[1] < 0 || data.split[2] < 0 || !(data.split[0] + data.split[1] + data.split[2] > 0))
      throw ConfigError("data.split needs non-negative weights with a positive sum");
    if (!(eval.corr_threshold > -1 && eval.corr_threshold < 1)) throw ConfigError("eval.corr_threshold must lie in (-1, 1)");
  }
};

// ------------------------------------------------------------------ JSON

#define UPT_TRAIN_FIELDS(X)                                                                                      \
  X(epochs) X(batch_size) X(warmup_epochs) X(lr) X(weight_decay) X(seed) X(queries) X(inv_dec_queries)        \
  X(subsample_lo) X(subsample_hi) X(inverse_losses) X(samples_per_trajectory)

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json::object();
#define X(f) j[#f] = c.f;
  UPT_TRAIN_FIELDS(X)
#undef X
  j["weights"] = {{"next", c.weights.next}, {"inv_dec", c.weights.inv_dec}, {"inv_enc", c.weights.inv_enc}};
}
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
#define X(f) \
  if (j.contains(#f)) j.at(#f).get_to(c.f);
  UPT_TRAIN_FIELDS(X)
#undef X
  if (j.contains("weights")) {
    const auto& w = j.at("weights");
    c.weights.next = w.value("next", c.weights.next);
    c.weights.inv_dec = w.value("inv_dec", c.weights.inv_dec);
    c.weights.inv_enc = w.value("inv_enc", c.weights.inv_enc);
  }
}
#undef UPT_TRAIN_FIELDS

#define UPT_DATA_FIELDS(X) \
  X(task) X(trajectories) X(split) X(k) X(steps) X(dt) X(nu) X(substeps) X(kappa) X(n_blobs) X(seed)

inline void to_json(nlohmann::json& j, const DataConfig& c) {
  j = nlohmann::json::object();
#define X(f) j[#f] = c.f;
  UPT_DATA_FIELDS(X)
#undef X
  j["history"] = c.spec.history;
  j["delta_frames"] = c.spec.delta_frames;
  j["log_scale"] = c.spec.log_scale;
  j["lagrangian"] = c.spec.lagrangian;
}
inline void from_json(const nlohmann::json& j, DataConfig& c) {
#define X(f) \
  if (j.contains(#f)) j.at(#f).get_to(c.f);
  UPT_DATA_FIELDS(X)
#undef X
  c.spec.history = j.value("history", c.spec.history);
  c.spec.delta_frames = j.value("delta_frames", c.spec.delta_frames);
  c.spec.log_scale = j.value("log_scale", c.spec.log_scale);
  c.spec.lagrangian = j.value("lagrangian", c.spec.lagrangian);
}
#undef UPT_DATA_FIELDS

inline void to_json(nlohmann::json& j, const EvalSection& e) {
  j = {{"input_points", e.one_step.input_points},
       {"samples_per_trajectory", e.one_step.samples_per_trajectory},
       {"queries", e.one_step.queries},
       {"seed", e.one_step.seed},
       {"rollout_steps", e.rollout.steps},
       {"rollout_input_points", e.rollout.input_points},
       {"rollout_queries", e.rollout.queries},
       {"rollout_seed", e.rollout.seed},
       {"corr_threshold", e.corr_threshold},
       {"corr_channel", e.corr_channel},
       {"sweep_multipliers", e.sweep_multipliers},
       {"sweep_supernode_factors", e.sweep_supernode_factors}};
}
inline void from_json(const nlohmann::json& j, EvalSection& e) {
  e.one_step.input_points = j.value("input_points", e.one_step.input_points);
  e.one_step.samples_per_trajectory = j.value("samples_per_trajectory", e.one_step.samples_per_trajectory);
  e.one_step.queries = j.value("queries", e.one_step.queries);
  e.one_step.seed = j.value("seed", e.one_step.seed);
  e.rollout.steps = j.value("rollout_steps", e.rollout.steps);
  e.rollout.input_points = j.value("rollout_input_points", e.rollout.input_points);
  e.rollout.queries = j.value("rollout_queries", e.rollout.queries);
  e.rollout.seed = j.value("rollout_seed", e.rollout.seed);
  e.corr_threshold = j.value("corr_threshold", e.corr_threshold);
  e.corr_channel = j.value("corr_channel", e.corr_channel);
  e.sweep_multipliers = j.value("sweep_multipliers", e.sweep_multipliers);
  e.sweep_supernode_factors = j.value("sweep_supernode_factors", e.sweep_supernode_factors);
}

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"model", c.model}, {"train", c.train}, {"data", c.data}, {"eval", c.eval}};
}

/// Defaults for a task. Model channel counts, dim and condition bounds are
/// left at 0 / empty so they resolve from the data.
inline RunConfig default_run_config(const std::string& task) {
  RunConfig c;
  c.data.task = task;
  auto& m = c.model;
  m.dim = m.in_channels = m.out_channels = 0;
  m.conditions.clear();
  m.radius = 0;  // calibrate from the first training frame
  if (task == "tgv2d") {
    c.data.spec = {2, 10, false, true};
    c.data.k = 2500;
    c.data.steps = 126;
    c.data.dt = 0.04;
    m.enc_dim = 64;
    m.latent_dim = 96;
    m.n_supernodes = 256;
    m.n_latent = 32;
    m.enc_blocks = 2;
    m.app_blocks = 2;
    m.enc_heads = 2;
    m.enc_perceiver_heads = 2;
    m.app_heads = 2;
    m.dec_heads = 2;
    m.cond_dim = 96;
    m.cond_embed_dim = 32;
    c.train.batch_size = 8;
    c.train.queries = 1024;
    c.train.samples_per_trajectory = 4;
    c.eval.one_step.samples_per_trajectory = 2;
    c.eval.rollout.steps = 12;
    c.eval.rollout.queries = 0;
  } else if (task == "diffusion2d") {
    c.data.spec = {1, 1, true, false};
    c.data.k = 1024;
    c.data.steps = 24;
    c.data.dt = 0.5;
    m.enc_dim = 64;
    m.latent_dim = 96;
    m.n_supernodes = 128;
    m.n_latent = 32;
    m.enc_blocks = 2;
    m.app_blocks = 2;
    m.enc_heads = 2;
    m.enc_perceiver_heads = 2;
    m.app_heads = 2;
    m.dec_heads = 2;
    m.cond_dim = 96;
    m.cond_embed_dim = 32;
    c.train.batch_size = 8;
    c.train.queries = 512;
    c.train.samples_per_trajectory = 4;
    c.eval.one_step.input_points = 512;
    c.eval.one_step.samples_per_trajectory = 4;
    c.eval.rollout.steps = 20;
  } else {
    throw ConfigError("data.task must be tgv2d or diffusion2d, got '" + task + "'");
  }
  return c;
}

namespace detail {

inline const char* kind(const nlohmann::json& j) {
  if (j.is_object()) return "object";
  if (j.is_array()) return "array";
  if (j.is_boolean()) return "boolean";
  if (j.is_number_unsigned()) return "unsigned integer";
  if (j.is_number_integer()) return "integer";
  if (j.is_number()) return "number";
  if (j.is_string()) return "string";
  return "null";
}

inline bool compatible(const nlohmann::json& def, const nlohmann::json& v) {
  if (def.is_number_unsigned()) return v.is_number_unsigned();
  if (def.is_number_integer()) return v.is_number_integer();
  if (def.is_number_float()) return v.is_number();
  if (def.is_boolean()) return v.is_boolean();
  if (def.is_string()) return v.is_string();
  if (def.is_array()) return v.is_array();
  if (def.is_object()) return v.is_object();
  return true;
}

/// Overlays user onto defaults, rejecting unknown keys and mismatched types.
inline void overlay(nlohmann::json& def, const nlohmann::json& user, const std::string& path) {
  if (!user.is_object()) throw ConfigError(path + ": expected an object, found " + kind(user));
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string p = path.empty() ? it.key() : path + "." + it.key();
    if (!def.contains(it.key())) throw ConfigError(p + ": unknown key");
    auto& d = def[it.key()];
    if (!compatible(d, it.value()))
      throw ConfigError(p + ": expected " + std::string(kind(d)) + ", found " + kind(it.value()));
    if (d.is_object())
      overlay(d, it.value(), p);
    else
      d = it.value();
  }
}

}  // namespace detail

/// Applies "a.b.c=value" to a JSON document. The value is parsed as JSON
/// when possible and kept as a string otherwise.
inline void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not of the form key=value");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  nlohmann::json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    if (!node->is_object()) throw ConfigError("override key '" + key + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = nlohmann::json::object();
    start = dot + 1;
  }
}

/// Resolves a user document (possibly partial) against the task defaults.
inline RunConfig parse_run_config(const nlohmann::json& user) {
  if (!user.is_object()) throw ConfigError("config: expected an object, found " + std::string(detail::kind(user)));
  std::string task = "diffusion2d";
  if (user.contains("data") && user["data"].is_object() && user["data"].contains("task")) {
    if (!user["data"]["task"].is_string()) throw ConfigError("data.task: expected string");
    task = user["data"]["task"].get<std::string>();
  }
  nlohmann::json doc = default_run_config(task);
  detail::overlay(doc, user, "");
  RunConfig c;
  try {
    c.model = doc.at("model").get<UptConfig>();
    c.train = doc.at("train").get<TrainConfig>();
    c.data = doc.at("data").get<DataConfig>();
    c.eval = doc.at("eval").get<EvalSection>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  try {
    c.validate();
  } catch (const ValueError& e) {
    throw ConfigError(e.what());
  }
  return c;
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path.string());
  auto j = nlohmann::json::parse(f, nullptr, false);
  if (j.is_discarded()) throw ConfigError(path.string() + ": not valid JSON");
  return j;
}

}  // namespace upt
