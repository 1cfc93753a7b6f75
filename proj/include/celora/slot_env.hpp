// SPDX-License-Identifier: Apache-2.0
//
// Synthetic slotted downlink environment for exercising the dispatcher
// without the full simulator. Each slot brings a Poisson batch of control
// messages; every message is heard by a random non-empty gateway subset and
// carries a random airtime and value. The offered airtime per gateway per
// slot is `load_factor * T_l` in expectation.
#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <vector>

#include "celora/common.hpp"
#include "celora/scheduler.hpp"

namespace celora::sched {

struct SlotEnvConfig {
  std::size_t gateways = 3;
  double slot_capacity = 1.0;  // T_l
  double load_factor = 0.8;
  double messages_per_slot = 6.0;
  double hear_probability = 0.7;
  double airtime_spread = 0.5;  // airtime ~ mean * U[1 - s, 1 + s]
  double max_delta_h = 0.3;     // delta_h ~ U[0, max]
  std::size_t feature_size = 4;
  bool enforce_capacity = false;  // served airtime per gateway and slot <= T_l

  double mean_airtime() const {
    return load_factor * slot_capacity * static_cast<double>(gateways) / messages_per_slot;
  }
  std::size_t state_size() const { return 2 * feature_size + gateways + 1; }

  void validate() const {
    if (gateways == 0) throw ParameterError("slot env needs at least one gateway");
    if (!(slot_capacity > 0.0)) throw ParameterError("slot capacity must be positive");
    if (!(load_factor >= 0.0)) throw ParameterError("load factor must be >= 0");
    if (!(messages_per_slot > 0.0)) throw ParameterError("messages per slot must be positive");
    if (!(hear_probability > 0.0 && hear_probability <= 1.0)) throw ParameterError("hear probability must be in (0, 1]");
    if (!(airtime_spread >= 0.0 && airtime_spread < 1.0)) throw ParameterError("airtime spread must be in [0, 1)");
  }
};

struct SlotEnvResult {
  std::uint64_t slots = 0;
  std::uint64_t messages = 0;
  std::uint64_t policy_drops = 0;
  std::uint64_t capacity_drops = 0;
  double offered_airtime = 0.0;
  double served_airtime = 0.0;
  std::vector<double> final_backlog;
  std::vector<std::uint64_t> dispatched;
  double max_backlog_per_slot = 0.0;  // max_g O_g(T) / T

  double drop_fraction() const {
    return offered_airtime > 0.0 ? 1.0 - served_airtime / offered_airtime : 0.0;
  }
};

class SlotEnvironment {
 public:
  SlotEnvironment(SlotEnvConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), rng_(seed) { cfg_.validate(); }

  DispatcherConfig dispatcher_config() const {
    DispatcherConfig d;
    d.gateways = cfg_.gateways;
    d.state_size = cfg_.state_size();
    d.slot_capacity = cfg_.slot_capacity;
    d.scaling.queue_length = std::max(cfg_.slot_capacity, kEpsilon);
    d.scaling.airtime = std::max(cfg_.mean_airtime() * (1.0 + cfg_.airtime_spread), kEpsilon);
    return d;
  }

  /// One message; queue lengths are the dispatcher's current backlogs.
  PendingDownlink next_message(const LyapunovDispatcher& disp) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    PendingDownlink m;
    m.id = next_id_++;
    m.node_features.resize(cfg_.feature_size);
    m.proposal_features.resize(cfg_.feature_size);
    for (double& x : m.node_features) x = u01(rng_);
    for (double& x : m.proposal_features) x = u01(rng_);
    m.candidates.assign(cfg_.gateways, 0);
    bool any = false;
    for (auto& c : m.candidates) {
      c = u01(rng_) < cfg_.hear_probability ? 1 : 0;
      any = any || c;
    }
    if (!any) {
      std::uniform_int_distribution<std::size_t> pick(0, cfg_.gateways - 1);
      m.candidates[pick(rng_)] = 1;
    }
    m.queue_lengths = disp.queues().backlog();
    const double s = cfg_.airtime_spread;
    m.airtime = cfg_.mean_airtime() * (1.0 - s + 2.0 * s * u01(rng_));
    m.delta_h = cfg_.max_delta_h * u01(rng_);
    return m;
  }

  /// Runs `slots` slots from the dispatcher's current state.
  SlotEnvResult run(LyapunovDispatcher& disp, std::uint64_t slots, bool train, bool explore) {
    SlotEnvResult res;
    res.dispatched.assign(cfg_.gateways, 0);
    std::poisson_distribution<int> arrivals(cfg_.messages_per_slot);
    std::vector<double> served(cfg_.gateways, 0.0);
    for (std::uint64_t t = 0; t < slots; ++t) {
      std::fill(served.begin(), served.end(), 0.0);
      const int n = arrivals(rng_);
      for (int i = 0; i < n; ++i) {
        const PendingDownlink m = next_message(disp);
        ++res.messages;
        res.offered_airtime += m.airtime;
        const Decision d = disp.decide(m, rng_, explore);
        if (d.dropped) {
          ++res.policy_drops;
          continue;
        }
        const auto g = static_cast<std::size_t>(d.action);
        if (cfg_.enforce_capacity && served[g] + m.airtime > cfg_.slot_capacity) {
          ++res.capacity_drops;
          continue;
        }
        served[g] += m.airtime;
        res.served_airtime += m.airtime;
        ++res.dispatched[g];
        disp.commit(d);
      }
      disp.end_slot(rng_, train);
      ++res.slots;
    }
    res.final_backlog = disp.queues().backlog();
    const double worst = res.final_backlog.empty()
                             ? 0.0
                             : *std::max_element(res.final_backlog.begin(), res.final_backlog.end());
    res.max_backlog_per_slot = res.slots ? worst / static_cast<double>(res.slots) : 0.0;
    return res;
  }

  const SlotEnvConfig& config() const { return cfg_; }
  Rng& rng() { return rng_; }

 private:
  SlotEnvConfig cfg_;
  Rng rng_;
  std::uint64_t next_id_ = 0;
};

}  // namespace celora::sched
