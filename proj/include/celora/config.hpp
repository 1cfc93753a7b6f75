// SPDX-License-Identifier: Apache-2.0
//
// Scenario configuration: defaults, JSON (with comments) loading, validation.
#pragma once

#include <fstream>
#include <initializer_list>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "celora/action_space.hpp"
#include "celora/common.hpp"
#include "celora/distill.hpp"
#include "celora/edge_decider.hpp"
#include "celora/phy.hpp"
#include "celora/scheduler.hpp"
#include "celora/teacher.hpp"

namespace celora {

using Json = nlohmann::json;

enum class Variant { kHeatLdl, kOnlyLocal, kOnlyDistill, kOnlyLy, kLocalDistill, kStatic, kAdrLike, kRandom };

inline constexpr Variant kAllVariants[] = {Variant::kHeatLdl,      Variant::kOnlyLocal, Variant::kOnlyDistill,
                                           Variant::kOnlyLy,       Variant::kLocalDistill, Variant::kStatic,
                                           Variant::kAdrLike,      Variant::kRandom};

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::kHeatLdl: return "heat-ldl";
    case Variant::kOnlyLocal: return "only-local";
    case Variant::kOnlyDistill: return "only-distill";
    case Variant::kOnlyLy: return "only-ly";
    case Variant::kLocalDistill: return "local+distill";
    case Variant::kStatic: return "static-baseline";
    case Variant::kAdrLike: return "adr-like";
    case Variant::kRandom: return "random";
  }
  return "?";
}

inline Variant variant_from_string(const std::string& s) {
  for (Variant v : kAllVariants)
    if (to_string(v) == s) return v;
  throw ConfigError("unknown variant '" + s + "'");
}

enum class Baseline { kNone, kStatic, kAdrLike, kRandom };

/// Which modules a variant switches on.
struct VariantFlags {
  bool teacher_control = false;  // cloud proposals sent as downlinks
  bool local = false;            // terminal-side history decider
  bool distill = false;          // student trained from teacher logits
  bool lyapunov = false;         // learned gateway dispatch; greedy otherwise
  Baseline baseline = Baseline::kNone;

  bool downlink_control() const { return teacher_control || baseline == Baseline::kAdrLike; }
};

inline VariantFlags flags_of(Variant v) {
  switch (v) {
    case Variant::kHeatLdl: return {true, true, true, true, Baseline::kNone};
    case Variant::kOnlyLocal: return {true, true, false, false, Baseline::kNone};
    case Variant::kOnlyDistill: return {true, false, true, false, Baseline::kNone};
    case Variant::kOnlyLy: return {true, false, false, true, Baseline::kNone};
    case Variant::kLocalDistill: return {true, true, true, false, Baseline::kNone};
    case Variant::kStatic: return {false, false, false, false, Baseline::kStatic};
    case Variant::kAdrLike: return {false, false, false, false, Baseline::kAdrLike};
    case Variant::kRandom: return {false, false, false, false, Baseline::kRandom};
  }
  return {};
}

struct ChannelConfig {
  phy::PathLossModel path_loss;
  double noise_figure_db = 6.0;
  bool capture_enabled = true;
  double capture_margin_db = 6.0;
  int uplink_channels = 8;
  int demodulators = 8;
  double gateway_power_dbm = 14.0;

  double effective_capture_margin() const {
    return capture_enabled ? capture_margin_db : std::numeric_limits<double>::infinity();
  }
};

struct TrafficConfig {
  int payload_bytes = 20;
  int downlink_payload_bytes = 12;
  bool duty_cycle_enabled = true;
  double duty_cycle = 0.01;
  double duty_window_s = 3600.0;
  // Downlink airtime cap per gateway over the same sliding window.
  bool gateway_duty_cycle_enabled = true;
  double gateway_duty_cycle = 0.1;
};

struct NodeConfig {
  double rx_delay_s = 1.0;
  double window_unit_s = 1.0;
  double rx_listen_mw = 2.0;
  ActionCombo initial{12, 14.0, 12, 2};
  double pdr_smoothing = 0.9;
  int backoff_uplinks = 8;  // 0 disables the firmware fallback
};

struct EdgeConfig {
  double rho = 0.5;
  double rho_tx = 0.05;
  double rho_rx = 0.05;
  int slice_length = 20;
  int trigger_k = 3;
  edge::PriorSign prior_sign = edge::PriorSign::kMagnitude;
};

struct DistillConfig {
  distill::Options options;
  std::vector<std::size_t> student_hidden{16};
  int step_threshold = 20;
  int recent_states = 4;
};

struct SchedulerConfig {
  double slot_s = 10.0;
  std::vector<std::size_t> hidden{32};
  std::size_t replay_capacity = 10000;
  std::size_t batch_size = 32;
  sched::LearnerConfig learner;
  sched::RewardConfig reward;
  double value_tradeoff = 0.0;
  double tracker_smoothing = 0.99;
  bool explore = true;
};

struct ScenarioConfig {
  int nodes = 300;
  int gateways = 3;
  double traffic_intensity = 2.0;
  double reference_period_s = 600.0;
  double horizon_s = 21600.0;
  std::uint64_t seed = 1;
  Variant variant = Variant::kHeatLdl;
  double radius_m = 10000.0;
  double gateway_ring_m = 4000.0;  // gateway distance from the centroid (G > 1)

  phy::RadioParams radio;
  phy::SfTable sf_table = phy::SfTable::sx127x();
  ChannelConfig channel;
  TrafficConfig traffic;
  NodeConfig node;
  ActionSpace actions;
  EdgeConfig edge;
  DistillConfig distill;
  teacher::TeacherConfig teacher;
  SchedulerConfig scheduler;
  double eer_scale = 0.1;

  void validate() const {
    if (nodes < 1) throw ConfigError("scenario.nodes must be >= 1");
    if (gateways < 1) throw ConfigError("scenario.gateways must be >= 1");
    if (!(traffic_intensity > 0.0)) throw ConfigError("scenario.traffic_intensity must be > 0");
    if (!(reference_period_s > 0.0)) throw ConfigError("scenario.reference_period_s must be > 0");
    if (!(horizon_s > 0.0)) throw ConfigError("scenario.horizon_s must be > 0");
    if (!(radius_m > 0.0)) throw ConfigError("scenario.radius_m must be > 0");
    if (!(gateway_ring_m >= 0.0)) throw ConfigError("scenario.gateway_ring_m must be >= 0");
    try {
      radio.validate();
      sf_table.validate();
    } catch (const ParameterError& e) {
      throw ConfigError(e.what());
    }
    actions.validate();
    if (!actions.contains(node.initial)) throw ConfigError("node.initial combo lies outside the action space");
    if (channel.uplink_channels < 1) throw ConfigError("channel.uplink_channels must be >= 1");
    if (channel.demodulators < 1) throw ConfigError("channel.demodulators must be >= 1");
    if (!(channel.path_loss.exponent > 0.0)) throw ConfigError("channel.path_loss_exponent must be > 0");
    if (!(channel.path_loss.shadowing_sigma_db >= 0.0)) throw ConfigError("channel.shadowing_sigma_db must be >= 0");
    if (traffic.payload_bytes < 0 || traffic.downlink_payload_bytes < 0)
      throw ConfigError("traffic payload sizes must be >= 0");
    if (!(traffic.duty_cycle > 0.0 && traffic.duty_cycle <= 1.0)) throw ConfigError("traffic.duty_cycle must be in (0, 1]");
    if (!(traffic.gateway_duty_cycle > 0.0 && traffic.gateway_duty_cycle <= 1.0))
      throw ConfigError("traffic.gateway_duty_cycle must be in (0, 1]");
    if (!(traffic.duty_window_s > 0.0)) throw ConfigError("traffic.duty_window_s must be > 0");
    if (!(node.rx_delay_s >= 0.0)) throw ConfigError("node.rx_delay_s must be >= 0");
    if (!(node.window_unit_s > 0.0)) throw ConfigError("node.window_unit_s must be > 0");
    if (!(node.rx_listen_mw >= 0.0)) throw ConfigError("node.rx_listen_mw must be >= 0");
    if (!(node.pdr_smoothing >= 0.0 && node.pdr_smoothing < 1.0)) throw ConfigError("node.pdr_smoothing must be in [0, 1)");
    if (!(edge.rho >= 0.0 && edge.rho < 1.0)) throw ConfigError("edge.rho must be in [0, 1)");
    if (edge.slice_length < 1) throw ConfigError("edge.slice_length must be >= 1");
    if (edge.trigger_k < 1) throw ConfigError("edge.trigger_k must be >= 1");
    if (!(distill.options.temperature > 0.0)) throw ConfigError("distill.temperature must be > 0");
    if (!(distill.options.learning_rate > 0.0)) throw ConfigError("distill.learning_rate must be > 0");
    if (distill.step_threshold < 0) throw ConfigError("distill.step_threshold must be >= 0");
    if (distill.recent_states < 1) throw ConfigError("distill.recent_states must be >= 1");
    if (!(scheduler.slot_s > 0.0)) throw ConfigError("scheduler.slot_s must be > 0");
    if (!(scheduler.learner.gamma >= 0.0 && scheduler.learner.gamma < 1.0))
      throw ConfigError("scheduler.gamma must be in [0, 1)");
    if (scheduler.batch_size == 0 || scheduler.replay_capacity == 0)
      throw ConfigError("scheduler batch and replay sizes must be positive");
    if (!(scheduler.reward.delta_clamp > 0.0 && scheduler.reward.delta_clamp < 1.5707963267948966))
      throw ConfigError("scheduler.delta_clamp must be in (0, pi/2)");
    if (!(scheduler.tracker_smoothing > 0.0 && scheduler.tracker_smoothing < 1.0))
      throw ConfigError("scheduler.tracker_smoothing must be in (0, 1)");
    if (!(scheduler.value_tradeoff >= 0.0)) throw ConfigError("scheduler.value_tradeoff must be >= 0");
    if (teacher.batch_size == 0 || teacher.replay_capacity == 0)
      throw ConfigError("teacher batch and replay sizes must be positive");
    if (!(teacher.epsilon >= 0.0 && teacher.epsilon <= 1.0)) throw ConfigError("teacher.epsilon must be in [0, 1]");
    if (!(teacher.policy_temperature > 0.0)) throw ConfigError("teacher.policy_temperature must be > 0");
    if (!(eer_scale > 0.0)) throw ConfigError("metrics.eer_scale must be > 0");
  }
};

namespace detail {

inline void check_keys(const Json& j, const std::string& section, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError("'" + section + "' must be an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("unknown key '" + section + "." + key + "'");
  }
}

template <typename T>
void read(const Json& j, const char* key, T& out, const std::string& section) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const Json::exception&) {
    throw ConfigError("bad value for '" + section + "." + key + "'");
  }
}

template <typename T>
void read_vector(const Json& j, const char* key, std::vector<T>& out, const std::string& section) {
  if (!j.contains(key)) return;
  if (!j.at(key).is_array()) throw ConfigError("'" + section + "." + key + "' must be an array");
  read(j, key, out, section);
}

inline ActionCombo read_combo(const Json& j, const std::string& section) {
  check_keys(j, section, {"uplink_sf", "tx_power_dbm", "downlink_sf", "window"});
  ActionCombo c;
  read(j, "uplink_sf", c.uplink_sf, section);
  read(j, "tx_power_dbm", c.tx_power_dbm, section);
  read(j, "downlink_sf", c.downlink_sf, section);
  read(j, "window", c.window, section);
  return c;
}

}  // namespace detail

/// Applies every key present in `j` on top of `cfg`. Unknown keys are errors.
inline void apply_json(ScenarioConfig& cfg, const Json& j) {
  using detail::check_keys;
  using detail::read;
  check_keys(j, "<root>",
             {"scenario", "radio", "sf_table", "channel", "traffic", "node", "action_space", "edge", "distill",
              "teacher", "scheduler", "metrics"});

  if (j.contains("scenario")) {
    const auto& s = j["scenario"];
    check_keys(s, "scenario",
               {"nodes", "gateways", "traffic_intensity", "reference_period_s", "horizon_s", "seed", "variant",
                "radius_m", "gateway_ring_m"});
    read(s, "nodes", cfg.nodes, "scenario");
    read(s, "gateways", cfg.gateways, "scenario");
    read(s, "traffic_intensity", cfg.traffic_intensity, "scenario");
    read(s, "reference_period_s", cfg.reference_period_s, "scenario");
    read(s, "horizon_s", cfg.horizon_s, "scenario");
    read(s, "seed", cfg.seed, "scenario");
    read(s, "radius_m", cfg.radius_m, "scenario");
    read(s, "gateway_ring_m", cfg.gateway_ring_m, "scenario");
    if (s.contains("variant")) {
      std::string v;
      read(s, "variant", v, "scenario");
      cfg.variant = variant_from_string(v);
    }
  }
  if (j.contains("radio")) {
    const auto& r = j["radio"];
    check_keys(r, "radio",
               {"bandwidth_hz", "coding_rate_denominator", "preamble_symbols", "header_enabled", "crc_enabled",
                "low_data_rate_optimize"});
    read(r, "bandwidth_hz", cfg.radio.bandwidth_hz, "radio");
    read(r, "coding_rate_denominator", cfg.radio.coding_rate_denominator, "radio");
    read(r, "preamble_symbols", cfg.radio.preamble_symbols, "radio");
    read(r, "header_enabled", cfg.radio.header_enabled, "radio");
    read(r, "crc_enabled", cfg.radio.crc_enabled, "radio");
    read(r, "low_data_rate_optimize", cfg.radio.low_data_rate_optimize, "radio");
  }
  if (j.contains("sf_table")) {
    const auto& t = j["sf_table"];
    check_keys(t, "sf_table", {"sensitivity_dbm", "snr_threshold_db"});
    std::vector<double> sens, snr;
    detail::read_vector(t, "sensitivity_dbm", sens, "sf_table");
    detail::read_vector(t, "snr_threshold_db", snr, "sf_table");
    if (!sens.empty()) {
      if (sens.size() != phy::kSfCount) throw ConfigError("sf_table.sensitivity_dbm needs one entry per SF 7..12");
      std::copy(sens.begin(), sens.end(), cfg.sf_table.sensitivity_dbm.begin());
    }
    if (!snr.empty()) {
      if (snr.size() != phy::kSfCount) throw ConfigError("sf_table.snr_threshold_db needs one entry per SF 7..12");
      std::copy(snr.begin(), snr.end(), cfg.sf_table.snr_threshold_db.begin());
    }
  }
  if (j.contains("channel")) {
    const auto& c = j["channel"];
    check_keys(c, "channel",
               {"reference_loss_db", "reference_distance_m", "path_loss_exponent", "shadowing_sigma_db",
                "noise_figure_db", "capture_enabled", "capture_margin_db", "uplink_channels", "demodulators",
                "gateway_power_dbm"});
    read(c, "reference_loss_db", cfg.channel.path_loss.reference_loss_db, "channel");
    read(c, "reference_distance_m", cfg.channel.path_loss.reference_distance_m, "channel");
    read(c, "path_loss_exponent", cfg.channel.path_loss.exponent, "channel");
    read(c, "shadowing_sigma_db", cfg.channel.path_loss.shadowing_sigma_db, "channel");
    read(c, "noise_figure_db", cfg.channel.noise_figure_db, "channel");
    read(c, "capture_enabled", cfg.channel.capture_enabled, "channel");
    read(c, "capture_margin_db", cfg.channel.capture_margin_db, "channel");
    read(c, "uplink_channels", cfg.channel.uplink_channels, "channel");
    read(c, "demodulators", cfg.channel.demodulators, "channel");
    read(c, "gateway_power_dbm", cfg.channel.gateway_power_dbm, "channel");
  }
  if (j.contains("traffic")) {
    const auto& t = j["traffic"];
    check_keys(t, "traffic",
               {"payload_bytes", "downlink_payload_bytes", "duty_cycle_enabled", "duty_cycle", "duty_window_s",
                "gateway_duty_cycle_enabled", "gateway_duty_cycle"});
    read(t, "payload_bytes", cfg.traffic.payload_bytes, "traffic");
    read(t, "downlink_payload_bytes", cfg.traffic.downlink_payload_bytes, "traffic");
    read(t, "duty_cycle_enabled", cfg.traffic.duty_cycle_enabled, "traffic");
    read(t, "duty_cycle", cfg.traffic.duty_cycle, "traffic");
    read(t, "duty_window_s", cfg.traffic.duty_window_s, "traffic");
    read(t, "gateway_duty_cycle_enabled", cfg.traffic.gateway_duty_cycle_enabled, "traffic");
    read(t, "gateway_duty_cycle", cfg.traffic.gateway_duty_cycle, "traffic");
  }
  if (j.contains("node")) {
    const auto& n = j["node"];
    check_keys(n, "node", {"rx_delay_s", "window_unit_s", "rx_listen_mw", "initial_combo", "pdr_smoothing",
                            "backoff_uplinks"});
    read(n, "backoff_uplinks", cfg.node.backoff_uplinks, "node");
    read(n, "rx_delay_s", cfg.node.rx_delay_s, "node");
    read(n, "window_unit_s", cfg.node.window_unit_s, "node");
    read(n, "rx_listen_mw", cfg.node.rx_listen_mw, "node");
    read(n, "pdr_smoothing", cfg.node.pdr_smoothing, "node");
    if (n.contains("initial_combo")) cfg.node.initial = detail::read_combo(n["initial_combo"], "node.initial_combo");
  }
  if (j.contains("action_space")) {
    const auto& a = j["action_space"];
    check_keys(a, "action_space", {"uplink_sfs", "tx_powers_dbm", "downlink_sfs", "windows"});
    detail::read_vector(a, "uplink_sfs", cfg.actions.uplink_sfs, "action_space");
    detail::read_vector(a, "tx_powers_dbm", cfg.actions.tx_powers_dbm, "action_space");
    detail::read_vector(a, "downlink_sfs", cfg.actions.downlink_sfs, "action_space");
    detail::read_vector(a, "windows", cfg.actions.windows, "action_space");
  }
  if (j.contains("edge")) {
    const auto& e = j["edge"];
    check_keys(e, "edge", {"rho", "rho_tx", "rho_rx", "slice_length", "trigger_k", "prior_sign"});
    read(e, "rho", cfg.edge.rho, "edge");
    read(e, "rho_tx", cfg.edge.rho_tx, "edge");
    read(e, "rho_rx", cfg.edge.rho_rx, "edge");
    read(e, "slice_length", cfg.edge.slice_length, "edge");
    read(e, "trigger_k", cfg.edge.trigger_k, "edge");
    if (e.contains("prior_sign")) {
      std::string m;
      read(e, "prior_sign", m, "edge");
      if (m == "magnitude") cfg.edge.prior_sign = edge::PriorSign::kMagnitude;
      else if (m == "raw") cfg.edge.prior_sign = edge::PriorSign::kRaw;
      else throw ConfigError("edge.prior_sign must be magnitude or raw");
    }
  }
  if (j.contains("distill")) {
    const auto& d = j["distill"];
    check_keys(d, "distill",
               {"mode", "temperature", "learning_rate", "clip_norm", "student_hidden", "step_threshold",
                "recent_states"});
    if (d.contains("mode")) {
      std::string m;
      read(d, "mode", m, "distill");
      try {
        cfg.distill.options.mode = distill::mode_from_string(m);
      } catch (const ParameterError& e) {
        throw ConfigError(e.what());
      }
    }
    read(d, "temperature", cfg.distill.options.temperature, "distill");
    read(d, "learning_rate", cfg.distill.options.learning_rate, "distill");
    read(d, "clip_norm", cfg.distill.options.clip_norm, "distill");
    detail::read_vector(d, "student_hidden", cfg.distill.student_hidden, "distill");
    read(d, "step_threshold", cfg.distill.step_threshold, "distill");
    read(d, "recent_states", cfg.distill.recent_states, "distill");
  }
  if (j.contains("teacher")) {
    const auto& t = j["teacher"];
    check_keys(t, "teacher",
               {"model_hidden", "learning_rate", "clip_norm", "batch_size", "replay_capacity", "epsilon",
                "explore_margin_db", "min_margin_db", "updates_per_slot", "energy_weight", "policy_temperature",
                "downlink_margin_db", "proposal_window"});
    detail::read_vector(t, "model_hidden", cfg.teacher.model_hidden, "teacher");
    read(t, "learning_rate", cfg.teacher.learning_rate, "teacher");
    read(t, "clip_norm", cfg.teacher.clip_norm, "teacher");
    read(t, "batch_size", cfg.teacher.batch_size, "teacher");
    read(t, "replay_capacity", cfg.teacher.replay_capacity, "teacher");
    read(t, "epsilon", cfg.teacher.epsilon, "teacher");
    read(t, "explore_margin_db", cfg.teacher.explore_margin_db, "teacher");
    read(t, "min_margin_db", cfg.teacher.min_margin_db, "teacher");
    read(t, "updates_per_slot", cfg.teacher.updates_per_slot, "teacher");
    read(t, "energy_weight", cfg.teacher.energy_weight, "teacher");
    read(t, "policy_temperature", cfg.teacher.policy_temperature, "teacher");
    read(t, "downlink_margin_db", cfg.teacher.downlink_margin_db, "teacher");
    read(t, "proposal_window", cfg.teacher.proposal_window, "teacher");
  }
  if (j.contains("scheduler")) {
    const auto& s = j["scheduler"];
    check_keys(s, "scheduler",
               {"slot_s", "hidden", "replay_capacity", "batch_size", "gamma", "learning_rate", "clip_norm",
                "lyapunov_weight", "use_lyapunov", "load_sign", "load_weight", "load_transform", "delta_clamp",
                "value_tradeoff", "tracker_smoothing", "explore"});
    read(s, "slot_s", cfg.scheduler.slot_s, "scheduler");
    detail::read_vector(s, "hidden", cfg.scheduler.hidden, "scheduler");
    read(s, "replay_capacity", cfg.scheduler.replay_capacity, "scheduler");
    read(s, "batch_size", cfg.scheduler.batch_size, "scheduler");
    read(s, "gamma", cfg.scheduler.learner.gamma, "scheduler");
    read(s, "learning_rate", cfg.scheduler.learner.learning_rate, "scheduler");
    read(s, "clip_norm", cfg.scheduler.learner.clip_norm, "scheduler");
    read(s, "lyapunov_weight", cfg.scheduler.learner.lyapunov_weight, "scheduler");
    read(s, "use_lyapunov", cfg.scheduler.learner.use_lyapunov, "scheduler");
    read(s, "load_sign", cfg.scheduler.reward.load_sign, "scheduler");
    read(s, "load_weight", cfg.scheduler.reward.load_weight, "scheduler");
    read(s, "delta_clamp", cfg.scheduler.reward.delta_clamp, "scheduler");
    read(s, "value_tradeoff", cfg.scheduler.value_tradeoff, "scheduler");
    read(s, "tracker_smoothing", cfg.scheduler.tracker_smoothing, "scheduler");
    read(s, "explore", cfg.scheduler.explore, "scheduler");
    if (s.contains("load_transform")) {
      std::string m;
      read(s, "load_transform", m, "scheduler");
      if (m == "linear") cfg.scheduler.reward.load_transform = sched::LoadTransform::kLinear;
      else if (m == "log") cfg.scheduler.reward.load_transform = sched::LoadTransform::kLog;
      else throw ConfigError("scheduler.load_transform must be linear or log");
    }
  }
  if (j.contains("metrics")) {
    const auto& m = j["metrics"];
    check_keys(m, "metrics", {"eer_scale"});
    read(m, "eer_scale", cfg.eer_scale, "metrics");
  }
}

/// Parses JSON text; '//' and '/* */' comments are allowed.
inline Json parse_json_text(const std::string& text, const std::string& origin = "<config>") {
  try {
    return Json::parse(text, nullptr, true, true);
  } catch (const Json::parse_error& e) {
    throw ConfigError(origin + ": " + e.what());
  }
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_json_text(ss.str(), path);
}

inline ScenarioConfig load_config(const std::string& path) {
  ScenarioConfig cfg;
  apply_json(cfg, read_json_file(path));
  cfg.validate();
  return cfg;
}

}  // namespace celora
