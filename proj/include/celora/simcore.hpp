// SPDX-License-Identifier: Apache-2.0
//
// Deterministic discrete-event LoRaWAN simulator: Class-A nodes, multi-channel
// gateways with a single half-duplex downlink radio, a network server hosting
// the cloud teacher and the downlink dispatcher, duty cycle and energy
// accounting.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <numbers>
#include <optional>
#include <queue>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "celora/action_space.hpp"
#include "celora/approximator.hpp"
#include "celora/common.hpp"
#include "celora/config.hpp"
#include "celora/distill.hpp"
#include "celora/edge_decider.hpp"
#include "celora/phy.hpp"
#include "celora/scheduler.hpp"
#include "celora/teacher.hpp"

namespace celora::sim {

struct Position {
  double x = 0.0;
  double y = 0.0;
};

inline double distance(Position a, Position b) { return std::hypot(a.x - b.x, a.y - b.y); }

/// Independent, reproducible stream for (seed, purpose, index).
inline Rng make_rng(std::uint64_t seed, std::uint32_t stream, std::uint32_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), stream, index};
  return Rng(seq);
}

// ---------------------------------------------------------------------------
// Duty cycle

/// Airtime budget over a sliding window. A transmission starting at s with
/// airtime A is admitted iff the airtime of earlier starts in (s - W, s] plus
/// A stays within cap * W.
class DutyCycleLedger {
 public:
  DutyCycleLedger(double cap_fraction = 0.01, double window_s = 3600.0, bool enabled = true)
      : cap_(cap_fraction), window_(window_s), enabled_(enabled) {
    if (!(cap_fraction > 0.0 && cap_fraction <= 1.0)) throw ParameterError("duty cycle cap must be in (0, 1]");
    if (!(window_s > 0.0)) throw ParameterError("duty cycle window must be positive");
  }

  double budget() const { return cap_ * window_; }
  bool enabled() const { return enabled_; }

  /// Airtime of recorded starts still inside the window ending at s.
  double used_at(double s) const {
    double used = 0.0;
    for (const auto& e : entries_)
      if (e.start + window_ > s) used += e.airtime;
    return used;
  }

  bool allows(double s, double airtime) const { return !enabled_ || used_at(s) + airtime <= budget(); }

  /// Earliest start >= t that the ledger admits.
  double earliest_start(double t, double airtime) const {
    if (!enabled_) return t;
    if (airtime > budget()) throw ParameterError("single transmission exceeds the duty-cycle budget");
    double s = t;
    for (const auto& e : entries_) {
      if (used_at(s) + airtime <= budget()) return s;
      if (e.start + window_ > s) s = e.start + window_;
    }
    return s;
  }

  void record(double start, double airtime) {
    if (!entries_.empty() && start < entries_.back().start)
      throw InvariantViolation("duty-cycle ledger: starts must be recorded in time order");
    if (!allows(start, airtime)) throw InvariantViolation("duty-cycle ledger: cap exceeded");
    while (!entries_.empty() && entries_.front().start + window_ <= start) entries_.pop_front();
    entries_.push_back({start, airtime});
  }

 private:
  struct Entry {
    double start;
    double airtime;
  };
  double cap_;
  double window_;
  bool enabled_;
  std::deque<Entry> entries_;
};

/// Post-hoc check over a full transmission record (start, airtime), sorted by
/// start. Returns the worst window usage.
inline double max_window_usage(std::span<const std::pair<double, double>> starts, double window_s) {
  double worst = 0.0, used = 0.0;
  std::size_t lo = 0;
  for (std::size_t j = 0; j < starts.size(); ++j) {
    used += starts[j].second;
    while (starts[lo].first + window_s <= starts[j].first) used -= starts[lo++].second;
    worst = std::max(worst, used);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Traffic and energy

/// Next uplink: exponential gap with mean reference_period / delta after
/// `now`, then deferred past `busy_until` and into the duty-cycle budget.
inline double generate_traffic(double now, double delta, double reference_period, Rng& rng,
                               const DutyCycleLedger& ledger, double airtime, double busy_until = 0.0) {
  if (!(delta > 0.0)) throw ParameterError("traffic intensity must be positive");
  if (!(reference_period > 0.0)) throw ParameterError("reference period must be positive");
  std::exponential_distribution<double> gap(delta / reference_period);
  const double t = std::max(now + gap(rng), busy_until);
  return ledger.earliest_start(t, airtime);
}

class EnergyLedger {
 public:
  /// P_mW(p) * airtime, in joules.
  double add_transmission(double tx_power_dbm, double airtime_s) {
    return add(dbm_to_mw(tx_power_dbm) * airtime_s * 1e-3);
  }
  double add_listening(double power_mw, double duration_s) { return add(power_mw * duration_s * 1e-3); }
  double joules() const { return joules_; }

 private:
  double add(double j) {
    if (!(j >= 0.0) || !std::isfinite(j)) throw InvariantViolation("energy ledger: increment must be finite and >= 0");
    joules_ += j;
    return j;
  }
  double joules_ = 0.0;
};

// ---------------------------------------------------------------------------
// Downlink delivery

struct ReceiveWindow {
  double open = 0.0;
  double close = 0.0;  // exclusive
};

enum class DownlinkResult { kDelivered, kMissed };

struct DownlinkChannel {
  double busy_until = 0.0;
  std::vector<std::pair<double, double>> transmissions;
};

/// Transmits a downlink that starts at `start` on a gateway's half-duplex
/// channel. Delivered iff it starts inside the window, uses the node's
/// downlink SF and the link is receivable. A start while the channel is
/// still busy is an internal error.
inline DownlinkResult deliver_downlink(DownlinkChannel& channel, const ReceiveWindow& window, int node_downlink_sf,
                                       int message_sf, double start, double airtime, bool link_receivable) {
  if (start < channel.busy_until) throw InvariantViolation("downlink channel is half-duplex: overlapping transmission");
  channel.busy_until = start + airtime;
  channel.transmissions.emplace_back(start, start + airtime);
  const bool in_window = start >= window.open && start < window.close;
  return in_window && message_sf == node_downlink_sf && link_receivable ? DownlinkResult::kDelivered
                                                                        : DownlinkResult::kMissed;
}

// ---------------------------------------------------------------------------
// Results

struct Metrics {
  std::uint64_t generated = 0;
  std::uint64_t delivered = 0;
  std::uint64_t lost = 0;
  std::uint64_t in_flight = 0;
  std::uint64_t lost_out_of_range = 0;  // no gateway could receive it at all
  std::uint64_t lost_collision = 0;     // receivable somewhere, lost to interference or busy demodulators
  double energy_j = 0.0;
  double pdr = 0.0;
  double eer = 0.0;
  double offered_load = 0.0;  // sum of uplink airtime / horizon

  std::uint64_t dl_proposals = 0;  // control messages generated
  std::uint64_t dl_dropped = 0;    // dispatcher chose not to send
  std::uint64_t dl_unfit = 0;      // no gateway could start inside the window
  std::uint64_t dl_sent = 0;
  std::uint64_t dl_received = 0;
  std::vector<double> gateway_dl_airtime;
  std::vector<double> gateway_load_share;

  std::uint64_t slots = 0;
  double mean_backlog = 0.0;
  double final_max_backlog = 0.0;

  std::uint64_t edge_decisions = 0;
  std::uint64_t student_decisions = 0;
  std::uint64_t distill_steps = 0;
  std::uint64_t distill_logit_bytes = 0;
  std::uint64_t distill_full_model_bytes = 0;
  std::uint64_t dispatcher_decisions = 0;
  std::uint64_t teacher_train_steps = 0;

  std::uint64_t events = 0;
  std::uint64_t log_hash = 0;

  friend bool operator==(const Metrics&, const Metrics&) = default;
};

struct DistillLogRow {
  double time = 0.0;
  std::uint32_t node = 0;
  double loss = 0.0;
  bool agree = false;
  bool degenerate = false;
  std::uint64_t logit_bytes = 0;
};

struct RunOptions {
  bool keep_event_log = false;
  bool keep_slot_log = false;
  bool keep_distill_log = false;
};

struct RunResult {
  Metrics metrics;
  std::vector<std::string> event_log;
  std::vector<sched::SlotLog> slot_log;
  std::vector<DistillLogRow> distill_log;
  std::vector<std::string> violations;
};

// ---------------------------------------------------------------------------
// Simulator

class Simulator {
 public:
  explicit Simulator(ScenarioConfig cfg, RunOptions opt = {})
      : cfg_(std::move(cfg)), opt_(opt), flags_(flags_of(cfg_.variant)) {
    cfg_.validate();
    setup();
  }

  RunResult run() {
    while (!events_.empty()) {
      const Event ev = events_.top();
      if (ev.time >= cfg_.horizon_s) break;
      events_.pop();
      if (ev.time < now_) throw InvariantViolation("event time regression");
      now_ = ev.time;
      ++metrics_.events;
      switch (ev.kind) {
        case Kind::kUplinkEnd: on_uplink_end(ev.aux); break;
        case Kind::kDownlinkStart: on_downlink_start(ev.aux); break;
        case Kind::kDownlinkEnd: on_downlink_end(ev.aux); break;
        case Kind::kSlot: on_slot(); break;
        case Kind::kUplinkStart: on_uplink_start(ev.entity); break;
      }
    }
    finish();
    return std::move(result_);
  }

  const ScenarioConfig& config() const { return cfg_; }

 private:
  // Tie order at equal times: kind, then entity, then insertion order.
  enum class Kind : std::uint8_t { kUplinkEnd = 0, kDownlinkStart = 1, kDownlinkEnd = 2, kSlot = 3, kUplinkStart = 4 };

  struct Event {
    double time;
    Kind kind;
    std::uint32_t entity;
    std::uint64_t seq;
    std::uint64_t aux;
  };
  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      if (a.time != b.time) return a.time > b.time;
      if (a.kind != b.kind) return a.kind > b.kind;
      if (a.entity != b.entity) return a.entity > b.entity;
      return a.seq > b.seq;
    }
  };

  struct StateRecord {
    std::vector<double> features;
    distill::StateBucket bucket;
  };

  struct Outcome {
    StateRecord state;
    std::size_t tx_class = 0;
    bool delivered = false;
  };

  struct Node {
    std::uint32_t id = 0;
    Position pos;
    std::vector<double> path_loss;  // per gateway, shadowing included
    double best_path_loss = 0.0;
    double best_distance = 0.0;
    ActionCombo combo;
    std::optional<ActionCombo> deferred;  // chosen combo waiting for its start
    DutyCycleLedger duty;
    EnergyLedger energy;
    std::optional<edge::HistoryTable> history;
    nn::Mlp student;
    std::uint64_t student_steps = 0;
    std::uint64_t generated = 0, delivered = 0, lost = 0, dl_received = 0;
    int missed_downlinks = 0;
    double recent_pdr = 1.0;
    double busy_until = 0.0;
    Rng traffic_rng;
    Rng channel_rng;
    std::deque<StateRecord> recent_states;
    std::vector<Outcome> unreported;  // lost uplinks the server learns of later
    std::vector<std::pair<double, double>> tx_record;
  };

  struct Transmission {
    std::uint32_t node = 0;
    double start = 0.0, end = 0.0;
    ActionCombo combo;
    int channel = 0;
    std::size_t tx_class = 0;
    StateRecord state;
    std::vector<double> rx_power;
    std::vector<std::uint8_t> receivable, granted;
    bool resolved = false;
  };

  struct Gateway {
    Position pos;
    std::deque<std::uint64_t> recent;  // receivable transmissions, by start
    double reserved_until = 0.0;
    int pending = 0;  // reserved downlinks not yet started
    DownlinkChannel downlink;
    DutyCycleLedger duty;
    double dl_airtime = 0.0;
  };

  struct Reservation {
    std::uint32_t node = 0;
    std::uint32_t gateway = 0;
    double start = 0.0, end = 0.0;
    ReceiveWindow window;
    int sf = 12;
    ActionCombo proposal;
    std::vector<distill::Sample> samples;
    bool delivered = false;
  };

  // ---- setup --------------------------------------------------------------

  void setup() {
    const auto G = static_cast<std::size_t>(cfg_.gateways);
    noise_floor_ = phy::thermal_noise_dbm(cfg_.radio.bandwidth_hz, cfg_.channel.noise_figure_db);
    for (int sf = phy::kMinSf; sf <= phy::kMaxSf; ++sf) {
      up_airtime_[static_cast<std::size_t>(sf - phy::kMinSf)] = phy::airtime(cfg_.traffic.payload_bytes, sf, cfg_.radio);
      dl_airtime_[static_cast<std::size_t>(sf - phy::kMinSf)] =
          phy::airtime(cfg_.traffic.downlink_payload_bytes, sf, cfg_.radio);
    }

    gateways_.resize(G);
    for (Gateway& gw : gateways_)
      gw.duty = DutyCycleLedger(cfg_.traffic.gateway_duty_cycle, cfg_.traffic.duty_window_s,
                                cfg_.traffic.gateway_duty_cycle_enabled);
    for (std::size_t g = 0; g < G; ++g) {
      if (G == 1) break;
      const double a = 2.0 * std::numbers::pi * static_cast<double>(g) / static_cast<double>(G);
      gateways_[g].pos = {cfg_.gateway_ring_m * std::cos(a), cfg_.gateway_ring_m * std::sin(a)};
    }

    Rng place = make_rng(cfg_.seed, 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> shadow(0.0, 1.0);
    nodes_.resize(static_cast<std::size_t>(cfg_.nodes));
    feature_size_ = 2 + G + cfg_.actions.uplink_sfs.size() + cfg_.actions.tx_powers_dbm.size() +
                    cfg_.actions.downlink_sfs.size() + cfg_.actions.windows.size() + 1;
    distance_scale_ = cfg_.radius_m + cfg_.gateway_ring_m;

    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      Node& n = nodes_[i];
      n.id = static_cast<std::uint32_t>(i);
      const double r = cfg_.radius_m * std::sqrt(unit(place));
      const double th = 2.0 * std::numbers::pi * unit(place);
      n.pos = {r * std::cos(th), r * std::sin(th)};
      n.path_loss.resize(G);
      n.best_path_loss = std::numeric_limits<double>::infinity();
      for (std::size_t g = 0; g < G; ++g) {
        const double s = cfg_.channel.path_loss.shadowing_sigma_db * shadow(place);
        n.path_loss[g] = cfg_.channel.path_loss.mean_loss(distance(n.pos, gateways_[g].pos)) + s;
        if (n.path_loss[g] < n.best_path_loss) {
          n.best_path_loss = n.path_loss[g];
          n.best_distance = distance(n.pos, gateways_[g].pos);
        }
      }
      n.combo = initial_combo();
      n.duty = DutyCycleLedger(cfg_.traffic.duty_cycle, cfg_.traffic.duty_window_s, cfg_.traffic.duty_cycle_enabled);
      n.traffic_rng = make_rng(cfg_.seed, 2, n.id);
      n.channel_rng = make_rng(cfg_.seed, 3, n.id);
      if (flags_.local) n.history.emplace(cfg_.actions, cfg_.edge.rho, cfg_.edge.slice_length);
      if (flags_.distill) {
        Rng init = make_rng(cfg_.seed, 4, n.id);
        std::vector<std::size_t> sizes{feature_size_};
        sizes.insert(sizes.end(), cfg_.distill.student_hidden.begin(), cfg_.distill.student_hidden.end());
        sizes.push_back(cfg_.actions.tx_count());
        n.student = nn::Mlp(sizes, nn::Activation::kTanh, init);
      }
    }

    policy_rng_ = make_rng(cfg_.seed, 5);
    prior_.rho_tx = cfg_.edge.rho_tx;
    prior_.rho_rx = cfg_.edge.rho_rx;
    prior_.table = cfg_.sf_table;
    prior_.sign = cfg_.edge.prior_sign;

    if (flags_.teacher_control) {
      Rng init = make_rng(cfg_.seed, 6);
      teacher_.emplace(cfg_.actions, cfg_.radio, cfg_.sf_table, noise_floor_,
                       cfg_.channel.gateway_power_dbm, cfg_.traffic.payload_bytes, cfg_.teacher, init);
    }
    if (flags_.distill) rates_.emplace(cfg_.actions.tx_count());
    if (flags_.lyapunov) {
      Rng init = make_rng(cfg_.seed, 7);
      sched::DispatcherConfig dc;
      dc.gateways = G;
      dc.state_size = feature_size_ + 4 + G + 1;
      dc.hidden = cfg_.scheduler.hidden;
      // T_l: the downlink airtime a gateway can sustain per slot.
      dc.slot_capacity = cfg_.scheduler.slot_s *
                         (cfg_.traffic.gateway_duty_cycle_enabled ? cfg_.traffic.gateway_duty_cycle : 1.0);
      dc.replay_capacity = cfg_.scheduler.replay_capacity;
      dc.batch_size = cfg_.scheduler.batch_size;
      dc.learner = cfg_.scheduler.learner;
      dc.reward = cfg_.scheduler.reward;
      dc.value_tradeoff = cfg_.scheduler.value_tradeoff;
      dispatcher_.emplace(dc, init);
      tracker_.emplace(cfg_.actions.tx_count(), cfg_.scheduler.tracker_smoothing);
    }

    metrics_.gateway_dl_airtime.assign(G, 0.0);
    for (Node& n : nodes_) schedule_next_uplink(n, 0.0);
    if (flags_.teacher_control || flags_.lyapunov || flags_.distill) push(cfg_.scheduler.slot_s, Kind::kSlot, 0, 0);
  }

  ActionCombo initial_combo() const {
    if (flags_.baseline == Baseline::kStatic)
      return {cfg_.actions.uplink_sfs.front(), cfg_.actions.tx_powers_dbm.back(), cfg_.node.initial.downlink_sf,
              cfg_.node.initial.window};
    return cfg_.node.initial;
  }

  void push(double t, Kind k, std::uint32_t entity, std::uint64_t aux) {
    events_.push({t, k, entity, seq_++, aux});
  }

  double up_airtime(int sf) const { return up_airtime_[static_cast<std::size_t>(sf - phy::kMinSf)]; }
  double dl_airtime(int sf) const { return dl_airtime_[static_cast<std::size_t>(sf - phy::kMinSf)]; }

  void log(const std::string& line) {
    hash_ = fnv1a(line, hash_);
    hash_ = fnv1a("\n", hash_);
    if (opt_.keep_event_log) result_.event_log.push_back(line);
  }

  // ---- node state ---------------------------------------------------------

  double uplink_margin_db(const Node& n, const ActionCombo& c) const {
    return phy::link_margin_db({c.tx_power_dbm, n.best_path_loss, noise_floor_}, c.uplink_sf, cfg_.sf_table);
  }

  StateRecord snapshot(const Node& n) const {
    StateRecord s;
    auto& x = s.features;
    x.reserve(feature_size_);
    const double margin = uplink_margin_db(n, n.combo);
    x.push_back(std::clamp(margin, -40.0, 40.0) / 20.0);
    // Link SNR at full power towards the best gateway, independent of the combo.
    const double headroom = cfg_.actions.tx_powers_dbm.back() - n.best_path_loss - noise_floor_;
    x.push_back(std::clamp(headroom, -40.0, 40.0) / 20.0);
    for (std::size_t g = 0; g < gateways_.size(); ++g) x.push_back(distance(n.pos, gateways_[g].pos) / distance_scale_);
    auto one_hot = [&x](const auto& values, auto v) {
      for (const auto& e : values) x.push_back(e == v ? 1.0 : 0.0);
    };
    one_hot(cfg_.actions.uplink_sfs, n.combo.uplink_sf);
    one_hot(cfg_.actions.tx_powers_dbm, n.combo.tx_power_dbm);
    one_hot(cfg_.actions.downlink_sfs, n.combo.downlink_sf);
    one_hot(cfg_.actions.windows, n.combo.window);
    x.push_back(n.recent_pdr);
    s.bucket = distill::StateBucket::of(n.best_distance / distance_scale_, margin);
    return s;
  }

  void set_combo(Node& n, const ActionCombo& c) {
    if (!cfg_.actions.contains(c)) throw InvariantViolation("node combo left the action space");
    n.combo = c;
  }

  /// Parameters for the next uplink. Autonomy applies once k consecutive
  /// uplinks went without a downlink.
  ActionCombo choose_combo(Node& n) {
    switch (flags_.baseline) {
      case Baseline::kStatic: return n.combo;
      case Baseline::kRandom: {
        auto pick = [&](const auto& v) {
          std::uniform_int_distribution<std::size_t> d(0, v.size() - 1);
          return v[d(n.channel_rng)];
        };
        ActionCombo c;
        c.uplink_sf = pick(cfg_.actions.uplink_sfs);
        c.tx_power_dbm = pick(cfg_.actions.tx_powers_dbm);
        c.downlink_sf = pick(cfg_.actions.downlink_sfs);
        c.window = pick(cfg_.actions.windows);
        return c;
      }
      case Baseline::kAdrLike: return backoff(n);
      case Baseline::kNone: break;
    }
    if (n.missed_downlinks < cfg_.edge.trigger_k) return n.combo;
    const bool student_ready =
        flags_.distill && n.student_steps >= static_cast<std::uint64_t>(cfg_.distill.step_threshold);
    ActionCombo c = n.combo;
    if (student_ready) {
      const auto z = n.student.forward(snapshot(n).features);
      const TxChoice t = cfg_.actions.tx_at(nn::argmax(z));
      c.uplink_sf = t.uplink_sf;
      c.tx_power_dbm = t.tx_power_dbm;
      ++metrics_.student_decisions;
    } else if (flags_.local) {
      const TxChoice t = edge::decide(*n.history, prior_, n.combo.downlink_sf, n.combo.window);
      c.uplink_sf = t.uplink_sf;
      c.tx_power_dbm = t.tx_power_dbm;
      ++metrics_.edge_decisions;
    } else {
      c = backoff(n);
    }
    return c;
  }

  /// Firmware fallback when no autonomy module is available: after
  /// `backoff_uplinks` silent uplinks raise power, then SF.
  ActionCombo backoff(Node& n) {
    ActionCombo c = n.combo;
    if (cfg_.node.backoff_uplinks <= 0 || n.missed_downlinks < cfg_.node.backoff_uplinks) return c;
    n.missed_downlinks = 0;
    if (c.tx_power_dbm < cfg_.actions.tx_powers_dbm.back()) {
      c.tx_power_dbm = cfg_.actions.tx_powers_dbm.back();
    } else {
      const auto& sfs = cfg_.actions.uplink_sfs;
      auto it = std::upper_bound(sfs.begin(), sfs.end(), c.uplink_sf);
      if (it != sfs.end()) c.uplink_sf = *it;
    }
    return c;
  }

  // ---- uplinks ------------------------------------------------------------

  void schedule_next_uplink(Node& n, double after) {
    const double t = generate_traffic(after, cfg_.traffic_intensity, cfg_.reference_period_s, n.traffic_rng, n.duty,
                                      up_airtime(n.combo.uplink_sf), n.busy_until);
    if (t < cfg_.horizon_s) push(t, Kind::kUplinkStart, n.id, 0);
  }

  void on_uplink_start(std::uint32_t id) {
    Node& n = nodes_[id];
    if (!n.deferred) n.deferred = choose_combo(n);
    const ActionCombo c = *n.deferred;
    const double a = up_airtime(c.uplink_sf);
    const double s = n.duty.earliest_start(std::max(now_, n.busy_until), a);
    if (s > now_) {
      if (s < cfg_.horizon_s) push(s, Kind::kUplinkStart, id, 0);
      return;
    }
    n.deferred.reset();
    set_combo(n, c);

    Transmission tx;
    tx.node = id;
    tx.start = now_;
    tx.end = now_ + a;
    tx.combo = c;
    std::uniform_int_distribution<int> ch(0, cfg_.channel.uplink_channels - 1);
    tx.channel = ch(n.channel_rng);
    tx.tx_class = cfg_.actions.tx_index(tx_of(c));
    tx.state = snapshot(n);
    const std::size_t G = gateways_.size();
    tx.rx_power.resize(G);
    tx.receivable.assign(G, 0);
    tx.granted.assign(G, 0);
    const std::uint64_t tx_id = txs_.size();
    for (std::size_t g = 0; g < G; ++g) {
      phy::LinkBudget lb{c.tx_power_dbm, n.path_loss[g], noise_floor_};
      tx.rx_power[g] = lb.received_dbm();
      if (!phy::receivable(lb, c.uplink_sf, cfg_.sf_table)) continue;
      tx.receivable[g] = 1;
      Gateway& gw = gateways_[g];
      prune(gw);
      int busy = 0;
      for (std::uint64_t o : gw.recent)
        if (txs_[o].granted[g] && txs_[o].end > now_) ++busy;
      tx.granted[g] = busy < cfg_.channel.demodulators ? 1 : 0;
      gw.recent.push_back(tx_id);
    }

    n.duty.record(now_, a);
    n.tx_record.emplace_back(now_, a);
    n.energy.add_transmission(c.tx_power_dbm, a);
    n.busy_until = tx.end + cfg_.node.rx_delay_s + c.window * cfg_.node.window_unit_s;
    ++n.generated;
    ++metrics_.generated;
    offered_airtime_ += a;

    n.recent_states.push_back(tx.state);
    while (n.recent_states.size() > static_cast<std::size_t>(cfg_.distill.recent_states)) n.recent_states.pop_front();

    log(format_double(now_) + " up-start n" + std::to_string(id) + " " + to_string(c) + " ch" +
        std::to_string(tx.channel));
    txs_.push_back(std::move(tx));
    push(txs_.back().end, Kind::kUplinkEnd, id, tx_id);
    schedule_next_uplink(n, now_);
  }

  void prune(Gateway& gw) {
    while (!gw.recent.empty() && txs_[gw.recent.front()].end + kPruneSlack < now_) gw.recent.pop_front();
  }

  void on_uplink_end(std::uint64_t tx_id) {
    Transmission& tx = txs_[tx_id];
    Node& n = nodes_[tx.node];
    const std::size_t G = gateways_.size();
    std::vector<std::uint8_t> heard(G, 0);
    bool delivered = false;
    for (std::size_t g = 0; g < G; ++g) {
      if (!tx.receivable[g] || !tx.granted[g]) continue;
      const phy::Reception r{tx_id, tx.channel, tx.combo.uplink_sf, tx.start, tx.end, tx.rx_power[g]};
      std::vector<phy::Reception> others;
      for (std::uint64_t o : gateways_[g].recent) {
        if (o == tx_id) continue;
        const Transmission& q = txs_[o];
        others.push_back({o, q.channel, q.combo.uplink_sf, q.start, q.end, q.rx_power[g]});
      }
      if (phy::collision_outcome(r, others, cfg_.channel.effective_capture_margin()) == phy::Outcome::kDelivered) {
        heard[g] = 1;
        delivered = true;
      }
    }
    tx.resolved = true;
    if (delivered) {
      ++n.delivered;
      ++metrics_.delivered;
    } else {
      ++n.lost;
      ++metrics_.lost;
      const bool any = std::any_of(tx.receivable.begin(), tx.receivable.end(), [](auto r) { return r != 0; });
      ++(any ? metrics_.lost_collision : metrics_.lost_out_of_range);
    }
    n.energy.add_listening(cfg_.node.rx_listen_mw, tx.combo.window * cfg_.node.window_unit_s);
    n.recent_pdr = cfg_.node.pdr_smoothing * n.recent_pdr + (1.0 - cfg_.node.pdr_smoothing) * (delivered ? 1.0 : 0.0);
    if (n.history) n.history->record(tx.combo, delivered);

    std::string heard_s;
    for (auto h : heard) heard_s += h ? '1' : '0';
    log(format_double(now_) + " up-end n" + std::to_string(tx.node) + " " + heard_s);

    const Outcome outcome{tx.state, tx.tx_class, delivered};
    bool reserved = false;
    if (!delivered) {
      if (flags_.downlink_control()) n.unreported.push_back(outcome);
    } else {
      for (const Outcome& o : n.unreported) learn(n, o);
      n.unreported.clear();
      learn(n, outcome);
      if (flags_.downlink_control()) reserved = server_reply(n, tx, heard);
    }
    if (!reserved) ++n.missed_downlinks;
  }

  /// Cloud-side bookkeeping of one uplink outcome.
  void learn(const Node& n, const Outcome& o) {
    if (teacher_) teacher_->observe(n.best_path_loss, o.tx_class, o.delivered);
    if (rates_) rates_->record(n.id, o.state.bucket, o.tx_class, o.delivered);
    if (tracker_) tracker_->observe(o.tx_class, o.delivered);
  }

  // ---- network server -----------------------------------------------------

  int downlink_sf_for(double path_loss) const {
    const double margin = cfg_.teacher.downlink_margin_db;
    for (int d : cfg_.actions.downlink_sfs) {
      const double rx = cfg_.channel.gateway_power_dbm - path_loss;
      if (rx - cfg_.sf_table.sensitivity(d) >= margin && rx - noise_floor_ - cfg_.sf_table.snr_threshold(d) >= margin)
        return d;
    }
    return cfg_.actions.downlink_sfs.back();
  }

  ActionCombo adr_proposal(const Node& n, const Transmission& tx, std::span<const std::uint8_t> heard) const {
    double best_snr = -std::numeric_limits<double>::infinity();
    for (std::size_t g = 0; g < heard.size(); ++g)
      if (heard[g]) best_snr = std::max(best_snr, tx.rx_power[g] - noise_floor_);
    ActionCombo c = tx.combo;
    int steps = static_cast<int>(
        std::floor((best_snr - cfg_.sf_table.snr_threshold(c.uplink_sf) - kAdrInstallMargin) / kAdrStepDb));
    const auto& sfs = cfg_.actions.uplink_sfs;
    const auto& pw = cfg_.actions.tx_powers_dbm;
    auto sf_it = std::find(sfs.begin(), sfs.end(), c.uplink_sf);
    auto p_it = std::find(pw.begin(), pw.end(), c.tx_power_dbm);
    while (steps > 0 && sf_it != sfs.begin()) --sf_it, --steps;
    while (steps > 0 && p_it != pw.begin()) --p_it, --steps;
    while (steps < 0 && std::next(p_it) != pw.end()) ++p_it, ++steps;
    c.uplink_sf = *sf_it;
    c.tx_power_dbm = *p_it;
    c.downlink_sf = downlink_sf_for(n.best_path_loss);
    return c;
  }

  static std::vector<double> proposal_features(const ActionCombo& a) {
    return {(a.uplink_sf - phy::kMinSf) / 5.0, a.tx_power_dbm / 14.0, (a.downlink_sf - phy::kMinSf) / 5.0,
            a.window / 4.0};
  }

  /// Builds the control message for a delivered uplink and dispatches it.
  /// Returns true when a downlink was reserved.
  bool server_reply(Node& n, const Transmission& tx, std::span<const std::uint8_t> heard) {
    ActionCombo proposal;
    std::vector<distill::Sample> samples;
    if (teacher_) {
      proposal = teacher_->propose({tx.state.features, n.best_path_loss}, policy_rng_);
      if (flags_.distill) {
        for (const StateRecord& s : n.recent_states) {
          distill::Sample smp;
          smp.input = s.features;
          smp.teacher_logits = teacher_->logits({s.features, n.best_path_loss});
          if (cfg_.distill.options.mode == distill::Mode::kSuccessInformed) smp.success_rates = rates_->rates(s.bucket);
          samples.push_back(std::move(smp));
        }
      }
    } else {
      proposal = adr_proposal(n, tx, heard);
    }
    ++metrics_.dl_proposals;

    const ReceiveWindow win{tx.end + cfg_.node.rx_delay_s,
                            tx.end + cfg_.node.rx_delay_s + tx.combo.window * cfg_.node.window_unit_s};
    const int sf = n.combo.downlink_sf;
    const double a = dl_airtime(sf);
    const std::size_t G = gateways_.size();
    auto fits = [&](std::size_t g) {
      const double start = std::max(win.open, gateways_[g].reserved_until);
      return start < win.close && gateways_[g].duty.allows(start, a);
    };

    std::optional<std::size_t> chosen;
    if (dispatcher_) {
      sched::PendingDownlink m;
      m.id = metrics_.dl_proposals;
      m.node_features = tx.state.features;
      m.proposal_features = proposal_features(proposal);
      m.candidates.assign(heard.begin(), heard.end());
      m.queue_lengths.resize(G);
      for (std::size_t g = 0; g < G; ++g) m.queue_lengths[g] = gateways_[g].pending;
      m.airtime = a;
      const std::size_t k_now = cfg_.actions.tx_index(tx_of(tx.combo));
      const std::size_t k_new = cfg_.actions.tx_index(tx_of(proposal));
      m.delta_h = tracker_->delta_h(k_now, k_new);
      const sched::Decision d = dispatcher_->decide(m, policy_rng_, cfg_.scheduler.explore);
      ++metrics_.dispatcher_decisions;
      if (d.dropped) {
        ++metrics_.dl_dropped;
        return false;
      }
      const auto g = static_cast<std::size_t>(d.action);
      if (!fits(g)) {
        ++metrics_.dl_unfit;
        return false;
      }
      dispatcher_->commit(d);
      chosen = g;
    } else {
      std::vector<std::size_t> order;
      for (std::size_t g = 0; g < G; ++g)
        if (heard[g]) order.push_back(g);
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t x, std::size_t y) { return n.path_loss[x] < n.path_loss[y]; });
      for (std::size_t g : order)
        if (fits(g)) {
          chosen = g;
          break;
        }
      if (!chosen) {
        ++metrics_.dl_unfit;
        return false;
      }
    }

    Gateway& gw = gateways_[*chosen];
    Reservation r;
    r.node = n.id;
    r.gateway = static_cast<std::uint32_t>(*chosen);
    r.start = std::max(win.open, gw.reserved_until);
    r.end = r.start + a;
    r.window = win;
    r.sf = sf;
    r.proposal = proposal;
    r.samples = std::move(samples);
    gw.reserved_until = r.end;
    gw.duty.record(r.start, a);
    ++gw.pending;
    n.busy_until = std::max(n.busy_until, r.end);
    const std::uint64_t rid = reservations_.size();
    reservations_.push_back(std::move(r));
    push(reservations_.back().start, Kind::kDownlinkStart, static_cast<std::uint32_t>(*chosen), rid);
    return true;
  }

  void on_downlink_start(std::uint64_t rid) {
    Reservation& r = reservations_[rid];
    Gateway& gw = gateways_[r.gateway];
    Node& n = nodes_[r.node];
    --gw.pending;
    const phy::LinkBudget lb{cfg_.channel.gateway_power_dbm, n.path_loss[r.gateway], noise_floor_};
    const auto res = deliver_downlink(gw.downlink, r.window, n.combo.downlink_sf, r.sf, now_, dl_airtime(r.sf),
                                      phy::receivable(lb, r.sf, cfg_.sf_table));
    r.delivered = res == DownlinkResult::kDelivered;
    gw.dl_airtime += r.end - r.start;
    metrics_.gateway_dl_airtime[r.gateway] += r.end - r.start;
    ++metrics_.dl_sent;
    log(format_double(now_) + " dl-start g" + std::to_string(r.gateway) + " n" + std::to_string(r.node) +
        (r.delivered ? " ok" : " miss"));
    push(r.end, Kind::kDownlinkEnd, r.node, rid);
  }

  void on_downlink_end(std::uint64_t rid) {
    Reservation& r = reservations_[rid];
    Node& n = nodes_[r.node];
    if (!r.delivered) {
      ++n.missed_downlinks;
      return;
    }
    ++n.dl_received;
    ++metrics_.dl_received;
    n.missed_downlinks = 0;
    set_combo(n, r.proposal);
    if (flags_.distill && !r.samples.empty()) {
      const std::uint64_t bytes = r.samples.size() * cfg_.actions.tx_count() * distill::kBytesPerLogit;
      metrics_.distill_logit_bytes += bytes;
      // Alternative: ship the retrained student parameters instead of logits.
      metrics_.distill_full_model_bytes += n.student.snapshot_bytes();
      for (const distill::Sample& s : r.samples) {
        const auto step = distill::distill_step(n.student, s, cfg_.distill.options);
        ++n.student_steps;
        ++metrics_.distill_steps;
        if (opt_.keep_distill_log) {
          const bool agree = nn::argmax(n.student.forward(s.input)) == nn::argmax(s.teacher_logits);
          result_.distill_log.push_back(
              {now_, n.id, step.loss, agree, step.degenerate, cfg_.actions.tx_count() * distill::kBytesPerLogit});
        }
      }
    }
    log(format_double(now_) + " dl-end n" + std::to_string(r.node) + " " + to_string(r.proposal));
  }

  // ---- slots --------------------------------------------------------------

  void on_slot() {
    ++metrics_.slots;
    if (teacher_ && teacher_->train(policy_rng_).trained) ++metrics_.teacher_train_steps;
    if (rates_) rates_->refresh();
    if (dispatcher_) {
      auto sl = dispatcher_->end_slot(policy_rng_, true);
      double mean = 0.0;
      for (double o : sl.backlog) mean += o;
      backlog_sum_ += mean / static_cast<double>(sl.backlog.size());
      std::string line = format_double(now_) + " slot";
      for (double o : sl.backlog) line += " " + format_double(o);
      log(line);
      if (opt_.keep_slot_log) result_.slot_log.push_back(std::move(sl));
    }
    push(now_ + cfg_.scheduler.slot_s, Kind::kSlot, 0, 0);
  }

  // ---- wrap-up ------------------------------------------------------------

  void finish() {
    Metrics& m = metrics_;
    for (const Transmission& tx : txs_)
      if (!tx.resolved) ++m.in_flight;
    for (const Node& n : nodes_) m.energy_j += n.energy.joules();
    m.pdr = m.generated ? static_cast<double>(m.delivered) / static_cast<double>(m.generated) : 0.0;
    m.eer = m.energy_j > 0.0 ? cfg_.eer_scale * static_cast<double>(m.delivered) / m.energy_j : 0.0;
    m.offered_load = offered_airtime_ / cfg_.horizon_s;
    double total = 0.0;
    for (double a : m.gateway_dl_airtime) total += a;
    m.gateway_load_share.resize(m.gateway_dl_airtime.size(), 0.0);
    for (std::size_t g = 0; g < m.gateway_dl_airtime.size(); ++g)
      m.gateway_load_share[g] = total > 0.0 ? m.gateway_dl_airtime[g] / total : 0.0;
    if (dispatcher_) {
      m.mean_backlog = m.slots ? backlog_sum_ / static_cast<double>(m.slots) : 0.0;
      for (double o : dispatcher_->queues().backlog()) m.final_max_backlog = std::max(m.final_max_backlog, o);
    }
    if (teacher_) m.teacher_train_steps = teacher_->train_steps();
    m.log_hash = hash_;
    result_.violations = check();
    result_.metrics = m;
  }

  std::vector<std::string> check() const {
    std::vector<std::string> v;
    const Metrics& m = metrics_;
    if (m.generated != m.delivered + m.lost + m.in_flight) v.push_back("conservation: generated != delivered + lost + in-flight");
    if (m.delivered > m.generated) v.push_back("delivered exceeds generated");
    if (m.dl_received > m.dl_sent) v.push_back("received downlinks exceed sent downlinks");
    if (!(m.pdr >= 0.0 && m.pdr <= 1.0)) v.push_back("PDR outside [0, 1]");
    if (!(m.eer >= 0.0)) v.push_back("negative EER");
    std::vector<std::uint64_t> in_flight(nodes_.size(), 0);
    for (const Transmission& tx : txs_)
      if (!tx.resolved) ++in_flight[tx.node];
    for (const Node& n : nodes_) {
      if (n.generated != n.delivered + n.lost + in_flight[n.id])
        v.push_back("conservation violated at node " + std::to_string(n.id));
      if (cfg_.traffic.duty_cycle_enabled &&
          max_window_usage(n.tx_record, cfg_.traffic.duty_window_s) >
              cfg_.traffic.duty_cycle * cfg_.traffic.duty_window_s * (1.0 + 1e-12))
        v.push_back("duty cycle exceeded at node " + std::to_string(n.id));
      if (!cfg_.actions.contains(n.combo)) v.push_back("combo outside action space at node " + std::to_string(n.id));
    }
    for (std::size_t g = 0; g < gateways_.size(); ++g) {
      const auto& t = gateways_[g].downlink.transmissions;
      for (std::size_t i = 1; i < t.size(); ++i)
        if (t[i].first < t[i - 1].second) v.push_back("downlink overlap at gateway " + std::to_string(g));
      if (cfg_.traffic.gateway_duty_cycle_enabled) {
        std::vector<std::pair<double, double>> rec;
        for (const auto& [s0, s1] : t) rec.emplace_back(s0, s1 - s0);
        if (max_window_usage(rec, cfg_.traffic.duty_window_s) >
            cfg_.traffic.gateway_duty_cycle * cfg_.traffic.duty_window_s * (1.0 + 1e-12))
          v.push_back("downlink duty cycle exceeded at gateway " + std::to_string(g));
      }
    }
    if (dispatcher_)
      for (double o : dispatcher_->queues().backlog())
        if (!(o >= 0.0)) v.push_back("negative overload backlog");
    return v;
  }

  static constexpr double kPruneSlack = 5.0;
  static constexpr double kAdrInstallMargin = 10.0;
  static constexpr double kAdrStepDb = 3.0;

  ScenarioConfig cfg_;
  RunOptions opt_;
  VariantFlags flags_;
  double noise_floor_ = 0.0;
  std::array<double, phy::kSfCount> up_airtime_{};
  std::array<double, phy::kSfCount> dl_airtime_{};
  std::size_t feature_size_ = 0;
  double distance_scale_ = 1.0;

  std::vector<Node> nodes_;
  std::vector<Gateway> gateways_;
  std::vector<Transmission> txs_;
  std::vector<Reservation> reservations_;
  std::priority_queue<Event, std::vector<Event>, Later> events_;
  std::uint64_t seq_ = 0;
  double now_ = 0.0;

  Rng policy_rng_;
  edge::PriorModel prior_;
  std::optional<teacher::Teacher> teacher_;
  std::optional<distill::SuccessRateTable> rates_;
  std::optional<sched::LyapunovDispatcher> dispatcher_;
  std::optional<sched::GlobalPdrTracker> tracker_;

  Metrics metrics_;
  double offered_airtime_ = 0.0;
  double backlog_sum_ = 0.0;
  std::uint64_t hash_ = 1469598103934665603ULL;
  RunResult result_;
};

/// Runs one scenario. Deterministic in (config, seed).
inline RunResult run(const ScenarioConfig& cfg, RunOptions opt = {}) { return Simulator(cfg, opt).run(); }

}  // namespace celora::sim
