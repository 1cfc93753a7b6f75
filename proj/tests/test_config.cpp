// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "celora/config.hpp"

using namespace celora;

namespace {

ScenarioConfig apply(const std::string& text) {
  ScenarioConfig c;
  apply_json(c, parse_json_text(text));
  return c;
}

}  // namespace

TEST(Config, DefaultsValidate) {
  const ScenarioConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.nodes, 300);
  EXPECT_EQ(c.gateways, 3);
  EXPECT_EQ(c.variant, Variant::kHeatLdl);
}

TEST(Config, CommentsAndOverrides) {
  const auto c = apply(R"({
    // line comment
    "scenario": {"nodes": 50, "variant": "only-ly", "seed": 9},
    /* block */
    "channel": {"capture_enabled": false, "path_loss_exponent": 3.1},
    "node": {"initial_combo": {"uplink_sf": 9, "tx_power_dbm": 8, "downlink_sf": 10, "window": 3}},
    "distill": {"mode": "fixed-T", "student_hidden": [8, 8]},
    "scheduler": {"load_transform": "log", "use_lyapunov": false},
    "edge": {"prior_sign": "raw"}
  })");
  EXPECT_EQ(c.nodes, 50);
  EXPECT_EQ(c.variant, Variant::kOnlyLy);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_FALSE(c.channel.capture_enabled);
  EXPECT_DOUBLE_EQ(c.channel.path_loss.exponent, 3.1);
  EXPECT_EQ(c.node.initial, (ActionCombo{9, 8.0, 10, 3}));
  EXPECT_EQ(c.distill.options.mode, distill::mode_from_string("fixed-T"));
  EXPECT_EQ(c.distill.student_hidden, (std::vector<std::size_t>{8, 8}));
  EXPECT_EQ(c.scheduler.reward.load_transform, sched::LoadTransform::kLog);
  EXPECT_FALSE(c.scheduler.learner.use_lyapunov);
  EXPECT_EQ(c.edge.prior_sign, edge::PriorSign::kRaw);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, UnknownKeysAndBadValuesRejected) {
  EXPECT_THROW(apply(R"({"scenaryo": {}})"), ConfigError);
  EXPECT_THROW(apply(R"({"scenario": {"nodez": 3}})"), ConfigError);
  EXPECT_THROW(apply(R"({"scenario": {"nodes": "many"}})"), ConfigError);
  EXPECT_THROW(apply(R"({"scenario": {"variant": "best"}})"), ConfigError);
  EXPECT_THROW(apply(R"({"distill": {"mode": "nope"}})"), ConfigError);
  EXPECT_THROW(apply(R"({"sf_table": {"sensitivity_dbm": [1, 2]}})"), ConfigError);
  EXPECT_THROW(apply(R"({"action_space": {"windows": 3}})"), ConfigError);
  EXPECT_THROW(parse_json_text("{ not json"), ConfigError);
}

TEST(Config, ValidationCatchesRanges) {
  auto expect_invalid = [](auto mutate) {
    ScenarioConfig c;
    mutate(c);
    EXPECT_THROW(c.validate(), ConfigError);
  };
  expect_invalid([](ScenarioConfig& c) { c.nodes = 0; });
  expect_invalid([](ScenarioConfig& c) { c.traffic_intensity = 0.0; });
  expect_invalid([](ScenarioConfig& c) { c.radio.bandwidth_hz = 1.0; });
  expect_invalid([](ScenarioConfig& c) { c.edge.rho = 1.0; });
  expect_invalid([](ScenarioConfig& c) { c.scheduler.learner.gamma = 1.0; });
  expect_invalid([](ScenarioConfig& c) { c.scheduler.reward.delta_clamp = 2.0; });
  expect_invalid([](ScenarioConfig& c) { c.node.initial.window = 9; });
  expect_invalid([](ScenarioConfig& c) { c.traffic.duty_cycle = 0.0; });
}

TEST(Config, VariantNamesRoundTrip) {
  for (Variant v : kAllVariants) EXPECT_EQ(variant_from_string(to_string(v)), v);
  EXPECT_TRUE(flags_of(Variant::kHeatLdl).lyapunov);
  EXPECT_FALSE(flags_of(Variant::kOnlyLy).distill);
  EXPECT_TRUE(flags_of(Variant::kAdrLike).downlink_control());
  EXPECT_FALSE(flags_of(Variant::kStatic).downlink_control());
}

TEST(Config, ShippedExampleLoads) {
  const auto c = load_config(std::string(CELORA_SOURCE_DIR) + "/configs/scenario.jsonc");
  EXPECT_NO_THROW(c.validate());
  EXPECT_THROW(load_config(std::string(CELORA_SOURCE_DIR) + "/configs/does-not-exist.jsonc"), ConfigError);
}
