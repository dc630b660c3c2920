#include <gtest/gtest.h>

#include "upt/config.hpp"

using namespace upt;
using nlohmann::json;

TEST(RunConfig, DefaultsPerTask) {
  auto d = parse_run_config(json::object());
  EXPECT_EQ(d.data.task, "diffusion2d");
  EXPECT_EQ(d.data.spec.history, 1u);
  EXPECT_TRUE(d.data.spec.log_scale);
  auto t = parse_run_config({{"data", {{"task", "tgv2d"}}}});
  EXPECT_EQ(t.data.spec.history, 2u);
  EXPECT_EQ(t.data.spec.delta_frames, 10u);
  EXPECT_TRUE(t.data.spec.lagrangian);
  EXPECT_EQ(t.data.k, 2500u);
  EXPECT_EQ(t.train.epochs, 50u);
  EXPECT_EQ(t.train.warmup_epochs, 10u);
  EXPECT_DOUBLE_EQ(t.train.lr, 1e-3);
  EXPECT_DOUBLE_EQ(t.train.weight_decay, 0.05);
}

TEST(RunConfig, RoundTripIsStable) {
  auto c = parse_run_config({{"train", {{"lr", 2e-4}, {"weights", {{"inv_enc", 0.5}}}}}});
  json j = c;
  auto again = parse_run_config(j);
  EXPECT_EQ(json(again), j);
  EXPECT_DOUBLE_EQ(again.train.weights.inv_enc, 0.5);
  EXPECT_DOUBLE_EQ(again.train.weights.next, 1.0);
}

TEST(RunConfig, UnknownKeysReportPath) {
  try {
    parse_run_config({{"train", {{"weights", {{"bogus", 1}}}}}});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("train.weights.bogus"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_run_config({{"extra", {}}}), ConfigError);
  EXPECT_THROW(parse_run_config({{"model", {{"n_latnet", 4}}}}), ConfigError);
}

TEST(RunConfig, TypeMismatchReportsPath) {
  try {
    parse_run_config({{"train", {{"epochs", "many"}}}});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("train.epochs"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_run_config({{"train", {{"epochs", -3}}}}), ConfigError);
  EXPECT_THROW(parse_run_config({{"train", {{"warmup_epochs", 80}}}}), ConfigError);
  EXPECT_THROW(parse_run_config({{"data", {{"task", "ahmed"}}}}), ConfigError);
}

TEST(RunConfig, DottedOverrides) {
  json doc = json::object();
  apply_override(doc, "train.lr=0.0005");
  apply_override(doc, "data.task=tgv2d");
  apply_override(doc, "train.inverse_losses=false");
  auto c = parse_run_config(doc);
  EXPECT_DOUBLE_EQ(c.train.lr, 5e-4);
  EXPECT_EQ(c.data.task, "tgv2d");
  EXPECT_FALSE(c.train.inverse_losses);
  EXPECT_THROW(apply_override(doc, "novalue"), ConfigError);
  EXPECT_THROW(apply_override(doc, "train..lr=1"), ConfigError);
  apply_override(doc, "train.lrr=1");
  EXPECT_THROW(parse_run_config(doc), ConfigError);
}
