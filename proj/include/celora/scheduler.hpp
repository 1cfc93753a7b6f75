// SPDX-License-Identifier: Apache-2.0
//
// Cloud-side downlink control and gateway load balancing.
//
// Every pending control message b is a decision: send it through one of the
// G gateways that heard the uplink, or drop it (action G). A critic learns
// Q(s_b, a) from the TD target r + gamma * max_q Q(s', q); the actor ascends
// (Q(s_b, a_b) + R) log pi(a_b | s_b), where
//
//   R = sum_g O_g(t) (T_l - L_g(t))
//
// couples the policy to per-gateway overload queues
//
//   O_g(t+1) = max(O_g(t) + L_g(t) - T_l, 0).
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "celora/approximator.hpp"
#include "celora/common.hpp"

namespace celora::sched {

// ---------------------------------------------------------------------------
// Reward

enum class LoadTransform { kLinear, kLog };

struct RewardConfig {
  double load_sign = -1.0;   // +1 reproduces the formula as printed
  double load_weight = 1.0;
  LoadTransform load_transform = LoadTransform::kLinear;
  double delta_clamp = 1.5;  // keeps tan() away from pi/2
};

/// Reward of choosing `action` in {0..gateways}; `gateways` means "do not
/// send" and always yields 0.
inline double reward(int action, int gateways, double delta_h, double queue_length, const RewardConfig& cfg = {}) {
  if (action < 0 || action > gateways) throw ParameterError("reward: action out of range");
  if (action == gateways) return 0.0;
  const double dh = std::clamp(delta_h, -cfg.delta_clamp, cfg.delta_clamp);
  const double load =
      cfg.load_transform == LoadTransform::kLinear ? queue_length : std::log1p(std::max(queue_length, 0.0));
  return std::tan(dh) + cfg.load_sign * cfg.load_weight * load;
}

// ---------------------------------------------------------------------------
// Global delivery tracker

/// Bias-corrected exponentially smoothed delivery rate per TX class, plus the
/// running global PDR. H(k) is the smoothed rate of class k.
class GlobalPdrTracker {
 public:
  explicit GlobalPdrTracker(std::size_t classes, double smoothing = 0.99)
      : smoothing_(smoothing), ema_(classes, 0.0), count_(classes, 0) {
    if (!(smoothing > 0.0 && smoothing < 1.0)) throw ParameterError("tracker smoothing must be in (0, 1)");
  }

  void observe(std::size_t k, bool delivered) {
    const double x = delivered ? 1.0 : 0.0;
    ema_.at(k) = smoothing_ * ema_[k] + (1.0 - smoothing_) * x;
    ++count_[k];
    ++total_;
    if (delivered) ++delivered_;
  }

  std::optional<double> h(std::size_t k) const {
    if (count_.at(k) == 0) return std::nullopt;
    const double correction = 1.0 - std::pow(smoothing_, static_cast<double>(count_[k]));
    return std::clamp(ema_[k] / correction, 0.0, 1.0);
  }

  /// H(proposed) - H(current); 0 when either class has no history.
  double delta_h(std::size_t current, std::size_t proposed) const {
    if (current == proposed) return 0.0;
    const auto a = h(proposed), s = h(current);
    if (!a || !s) return 0.0;
    return *a - *s;
  }

  double global_pdr() const { return total_ == 0 ? 0.0 : static_cast<double>(delivered_) / total_; }
  std::uint64_t observations() const { return total_; }
  std::size_t classes() const { return ema_.size(); }

 private:
  double smoothing_;
  std::vector<double> ema_;
  std::vector<std::uint64_t> count_;
  std::uint64_t total_ = 0;
  std::uint64_t delivered_ = 0;
};

// ---------------------------------------------------------------------------
// Overload queues

struct SlotAdvance {
  double lyapunov_before = 0.0;
  double lyapunov_after = 0.0;
  double drift = 0.0;
};

class OverloadQueue {
 public:
  OverloadQueue(std::size_t gateways, double slot_capacity)
      : backlog_(gateways, 0.0), slot_capacity_(slot_capacity) {
    if (!(slot_capacity > 0.0)) throw ParameterError("slot capacity must be positive");
  }

  /// L(Theta) = 1/2 sum O_g^2.
  double lyapunov() const {
    double s = 0.0;
    for (double o : backlog_) s += o * o;
    return 0.5 * s;
  }

  SlotAdvance advance(std::span<const double> loads) {
    if (loads.size() != backlog_.size()) throw ParameterError("advance: one load per gateway expected");
    SlotAdvance a;
    a.lyapunov_before = lyapunov();
    for (std::size_t g = 0; g < backlog_.size(); ++g) {
      if (!(loads[g] >= 0.0)) throw ParameterError("advance: loads must be nonnegative");
      backlog_[g] = std::max(backlog_[g] + loads[g] - slot_capacity_, 0.0);
    }
    a.lyapunov_after = lyapunov();
    a.drift = a.lyapunov_after - a.lyapunov_before;
    return a;
  }

  const std::vector<double>& backlog() const { return backlog_; }
  double slot_capacity() const { return slot_capacity_; }
  std::size_t gateways() const { return backlog_.size(); }

 private:
  std::vector<double> backlog_;
  double slot_capacity_;
};

/// R = sum_g O_g (T_l - L_g).
inline double lyapunov_bonus(std::span<const double> loads, std::span<const double> backlog, double slot_capacity) {
  if (loads.size() != backlog.size()) throw ParameterError("lyapunov_bonus: width mismatch");
  double r = 0.0;
  for (std::size_t g = 0; g < loads.size(); ++g) r += backlog[g] * (slot_capacity - loads[g]);
  return r;
}

inline double lyapunov_bonus(std::span<const double> loads, const OverloadQueue& q) {
  return lyapunov_bonus(loads, q.backlog(), q.slot_capacity());
}

/// sum_g O_g (L_g - T_l) - lambda * V_g; logged per slot.
inline double drift_plus_penalty(std::span<const double> loads, std::span<const double> values,
                                 const OverloadQueue& q, double lambda) {
  double s = 0.0;
  for (std::size_t g = 0; g < loads.size(); ++g)
    s += q.backlog()[g] * (loads[g] - q.slot_capacity()) - lambda * values[g];
  return s;
}

// ---------------------------------------------------------------------------
// Replay

template <typename T>
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw ParameterError("replay capacity must be positive");
    items_.reserve(std::min<std::size_t>(capacity, 4096));
  }

  void push(T item) {
    if (items_.size() < capacity_) {
      items_.push_back(std::move(item));
    } else {
      items_[next_] = std::move(item);
    }
    next_ = (next_ + 1) % capacity_;
  }

  /// Uniform with replacement.
  std::vector<const T*> sample(std::size_t n, Rng& rng) const {
    std::vector<const T*> out;
    if (items_.empty()) return out;
    std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(&items_[pick(rng)]);
    return out;
  }

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }

 private:
  std::size_t capacity_;
  std::size_t next_ = 0;
  std::vector<T> items_;
};

/// (s_b, a_b, s_b', r_b) plus what the constrained actor needs to evaluate R
/// for the taken action.
struct Transition {
  std::vector<double> state;
  std::vector<std::uint8_t> mask;       // allowed actions in `state`
  int action = 0;
  double reward = 0.0;
  std::vector<double> next_state;
  std::vector<std::uint8_t> next_mask;
  bool terminal = false;
  std::vector<double> backlog;          // O_g(t) when decided
  std::vector<double> other_loads;      // L_g(t) excluding this message
  double airtime = 0.0;                 // TOA(b)
};

/// Per-gateway loads if `action` is taken on top of `other_loads`.
inline std::vector<double> loads_with(const Transition& t, int action) {
  std::vector<double> l = t.other_loads;
  if (action >= 0 && static_cast<std::size_t>(action) < l.size()) l[static_cast<std::size_t>(action)] += t.airtime;
  return l;
}

inline double max_allowed(std::span<const double> q, std::span<const std::uint8_t> mask) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < q.size(); ++i)
    if (mask.empty() || mask[i]) m = std::max(m, q[i]);
  return m;
}

struct UpdateResult {
  double loss = 0.0;
  bool applied = false;
};

struct LearnerConfig {
  double gamma = 0.9;
  double learning_rate = 1e-2;
  double clip_norm = 5.0;
  double lyapunov_weight = 0.01;  // scale on R inside the actor weight
  bool use_lyapunov = true;       // false: unconstrained actor objective
};

/// TD targets for a batch, computed with the current critic (no gradient).
inline std::vector<double> td_targets(const nn::Mlp& critic, std::span<const Transition* const> batch, double gamma) {
  std::vector<double> y;
  y.reserve(batch.size());
  for (const Transition* t : batch) {
    double boot = 0.0;
    if (!t->terminal) {
      const auto qn = critic.forward(t->next_state);
      boot = max_allowed(qn, t->next_mask);
    }
    y.push_back(t->reward + gamma * boot);
  }
  return y;
}

/// Mean squared TD error and its parameter gradient; targets held fixed.
inline double critic_loss_grad(const nn::Mlp& critic, std::span<const Transition* const> batch,
                               std::span<const double> targets, std::span<double> grad) {
  nn::Mlp::Cache cache;
  double loss = 0.0;
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Transition& t = *batch[i];
    const auto q = critic.forward(t.state, cache);
    const double err = q.at(static_cast<std::size_t>(t.action)) - targets[i];
    loss += err * err * inv;
    std::vector<double> g(q.size(), 0.0);
    g[static_cast<std::size_t>(t.action)] = 2.0 * err * inv;
    critic.backward(cache, g, grad);
  }
  return loss;
}

inline UpdateResult critic_update(nn::Mlp& critic, std::span<const Transition* const> batch, const LearnerConfig& cfg) {
  UpdateResult res;
  if (batch.empty()) throw ParameterError("critic_update: empty batch");
  if (!(cfg.gamma >= 0.0 && cfg.gamma < 1.0)) throw ParameterError("critic_update: gamma must be in [0, 1)");
  const auto y = td_targets(critic, batch, cfg.gamma);
  std::vector<double> grad(critic.parameter_count(), 0.0);
  res.loss = critic_loss_grad(critic, batch, y, grad);
  if (!std::isfinite(res.loss)) return res;
  res.applied = critic.sgd_step(grad, cfg.learning_rate, cfg.clip_norm);
  return res;
}

/// Weight on log pi(a_b | s_b): Q(s_b, a_b) plus the scaled Lyapunov bonus.
inline double actor_weight(const nn::Mlp& critic, const Transition& t, double slot_capacity,
                           const LearnerConfig& cfg) {
  double w = critic.forward(t.state).at(static_cast<std::size_t>(t.action));
  if (cfg.use_lyapunov && !t.backlog.empty())
    w += cfg.lyapunov_weight * lyapunov_bonus(loads_with(t, t.action), t.backlog, slot_capacity);
  return w;
}

/// -mean (Q + w_R * R) log pi(a|s) and its gradient. `slot_capacity` is T_l.
inline double actor_loss_grad(const nn::Mlp& actor, const nn::Mlp& critic, std::span<const Transition* const> batch,
                              double slot_capacity, const LearnerConfig& cfg, std::span<double> grad) {
  nn::Mlp::Cache cache;
  double loss = 0.0;
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const Transition* tp : batch) {
    const Transition& t = *tp;
    const auto a = static_cast<std::size_t>(t.action);
    const double w = actor_weight(critic, t, slot_capacity, cfg);
    const auto logits = actor.forward(t.state, cache);
    const auto pi = nn::masked_softmax(logits, t.mask);
    loss -= w * std::log(std::max(pi[a], kEpsilon)) * inv;
    std::vector<double> g(logits.size(), 0.0);
    for (std::size_t k = 0; k < logits.size(); ++k) {
      if (!t.mask[k]) continue;
      g[k] = -w * inv * ((k == a ? 1.0 : 0.0) - pi[k]);
    }
    actor.backward(cache, g, grad);
  }
  return loss;
}

inline UpdateResult actor_update(nn::Mlp& actor, const nn::Mlp& critic, std::span<const Transition* const> batch,
                                 double slot_capacity, const LearnerConfig& cfg) {
  UpdateResult res;
  if (batch.empty()) throw ParameterError("actor_update: empty batch");
  std::vector<double> grad(actor.parameter_count(), 0.0);
  res.loss = actor_loss_grad(actor, critic, batch, slot_capacity, cfg, grad);
  if (!std::isfinite(res.loss)) return res;
  res.applied = actor.sgd_step(grad, cfg.learning_rate, cfg.clip_norm);
  return res;
}

// ---------------------------------------------------------------------------
// Dispatcher

/// One control message waiting for a gateway decision.
struct PendingDownlink {
  std::uint64_t id = 0;
  std::vector<double> node_features;      // s_b*
  std::vector<double> proposal_features;  // a_b*
  std::vector<std::uint8_t> candidates;   // per gateway: heard the uplink
  std::vector<double> queue_lengths;      // l_g
  double airtime = 0.0;                   // TOA(b)
  double delta_h = 0.0;
};

struct StateScaling {
  double queue_length = 10.0;
  double airtime = 1.5;
};

/// s_b = s_b* | a_b* | {l_g} | TOA(b), scaled.
inline std::vector<double> build_state(const PendingDownlink& m, const StateScaling& sc = {}) {
  std::vector<double> s;
  s.reserve(m.node_features.size() + m.proposal_features.size() + m.queue_lengths.size() + 1);
  s.insert(s.end(), m.node_features.begin(), m.node_features.end());
  s.insert(s.end(), m.proposal_features.begin(), m.proposal_features.end());
  for (double l : m.queue_lengths) s.push_back(l / sc.queue_length);
  s.push_back(m.airtime / sc.airtime);
  return s;
}

/// Candidate gateways plus the always-available drop action.
inline std::vector<std::uint8_t> action_mask(const PendingDownlink& m) {
  std::vector<std::uint8_t> mask(m.candidates.begin(), m.candidates.end());
  mask.push_back(1);
  return mask;
}

struct DispatcherConfig {
  std::size_t gateways = 3;
  std::size_t state_size = 0;
  std::vector<std::size_t> hidden{32};
  double slot_capacity = 10.0;
  std::size_t replay_capacity = 10000;
  std::size_t batch_size = 32;
  LearnerConfig learner;
  RewardConfig reward;
  StateScaling scaling;
  double value_tradeoff = 0.0;  // lambda_l in the logged drift-plus-penalty
};

struct SlotLog {
  std::uint64_t slot = 0;
  std::vector<double> backlog;  // after the update
  std::vector<double> loads;
  double lyapunov = 0.0;
  double drift = 0.0;
  double drift_plus_penalty = 0.0;
  std::uint64_t decisions = 0;
  std::uint64_t drops = 0;
  std::vector<std::uint64_t> dispatched;
  double critic_loss = std::numeric_limits<double>::quiet_NaN();
  double actor_loss = std::numeric_limits<double>::quiet_NaN();
};

struct Decision {
  int action = 0;  // gateway index, or the gateway count for "drop"
  double reward = 0.0;
  bool dropped = false;
  double q_value = 0.0;  // online critic at the chosen action
  double airtime = 0.0;
};

/// Actor-critic dispatcher with per-gateway overload queues.
class LyapunovDispatcher {
 public:
  LyapunovDispatcher(const DispatcherConfig& cfg, Rng& init_rng)
      : cfg_(cfg),
        queues_(cfg.gateways, cfg.slot_capacity),
        replay_(cfg.replay_capacity),
        loads_(cfg.gateways, 0.0),
        values_(cfg.gateways, 0.0),
        dispatched_(cfg.gateways, 0) {
    if (cfg.gateways == 0) throw ParameterError("dispatcher needs at least one gateway");
    if (cfg.state_size == 0) throw ParameterError("dispatcher state size must be positive");
    std::vector<std::size_t> sizes{cfg.state_size};
    sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
    sizes.push_back(cfg.gateways + 1);
    actor_ = nn::Mlp(sizes, nn::Activation::kTanh, init_rng);
    critic_ = nn::Mlp(sizes, nn::Activation::kTanh, init_rng);
  }

  /// Chooses a gateway (or drop) for one message. `explore` samples from the
  /// policy; otherwise the most probable allowed action is taken. Gateways
  /// that did not hear the uplink are masked out before sampling.
  Decision decide(const PendingDownlink& m, Rng& rng, bool explore = true) {
    if (m.candidates.size() != cfg_.gateways || m.queue_lengths.size() != cfg_.gateways)
      throw ParameterError("decide: per-gateway vectors must have one entry per gateway");
    auto state = build_state(m, cfg_.scaling);
    auto mask = action_mask(m);
    const auto pi = nn::masked_softmax(actor_.forward(state), mask);

    std::size_t a = 0;
    if (explore) {
      std::discrete_distribution<std::size_t> dist(pi.begin(), pi.end());
      a = dist(rng);
    } else {
      a = nn::argmax(pi);
    }
    const int action = static_cast<int>(a);
    const int g_count = static_cast<int>(cfg_.gateways);

    Decision d;
    d.action = action;
    d.dropped = action == g_count;
    const double ql = d.dropped ? 0.0 : m.queue_lengths[a];
    d.reward = reward(action, g_count, m.delta_h, ql, cfg_.reward);

    // Link the previous decision to this state.
    if (open_) {
      open_->next_state = state;
      open_->next_mask = mask;
      replay_.push(std::move(*open_));
      open_.reset();
    }
    Transition t;
    t.state = std::move(state);
    t.mask = std::move(mask);
    t.action = action;
    t.reward = d.reward;
    t.backlog = queues_.backlog();
    t.other_loads = loads_;
    t.airtime = m.airtime;
    d.airtime = m.airtime;
    d.q_value = critic_.forward(t.state)[a];
    if (d.dropped) ++drops_;
    ++decisions_;
    open_ = std::move(t);
    return d;
  }

  /// Adds an enqueued message to the slot load L_g(t). Assignments the
  /// downlink channel cannot serve are never committed.
  void commit(const Decision& d) {
    if (d.dropped) return;
    const auto g = static_cast<std::size_t>(d.action);
    loads_.at(g) += d.airtime;
    values_[g] += d.q_value;
    ++dispatched_[g];
  }

  /// select-and-dispatch over a batch of pending messages, in order.
  std::vector<Decision> dispatch(std::span<const PendingDownlink> pending, Rng& rng, bool explore = true) {
    std::vector<Decision> out;
    out.reserve(pending.size());
    for (const auto& m : pending) {
      out.push_back(decide(m, rng, explore));
      commit(out.back());
    }
    return out;
  }

  /// Closes the slot: queue update with the realised loads, one critic and
  /// one actor step when the replay holds a full batch.
  SlotLog end_slot(Rng& rng, bool train = true) {
    SlotLog log;
    log.slot = slot_;
    log.loads = loads_;
    log.drift_plus_penalty = drift_plus_penalty(loads_, values_, queues_, cfg_.value_tradeoff);
    const auto adv = queues_.advance(loads_);
    log.backlog = queues_.backlog();
    log.lyapunov = adv.lyapunov_after;
    log.drift = adv.drift;
    log.decisions = decisions_;
    log.drops = drops_;
    log.dispatched = dispatched_;
    if (train && replay_.size() >= cfg_.batch_size) {
      const auto cb = replay_.sample(cfg_.batch_size, rng);
      const auto cr = critic_update(critic_, cb, cfg_.learner);
      log.critic_loss = cr.loss;
      const auto ab = replay_.sample(cfg_.batch_size, rng);
      const auto ar = actor_update(actor_, critic_, ab, cfg_.slot_capacity, cfg_.learner);
      log.actor_loss = ar.loss;
    }
    std::fill(loads_.begin(), loads_.end(), 0.0);
    std::fill(values_.begin(), values_.end(), 0.0);
    std::fill(dispatched_.begin(), dispatched_.end(), 0);
    decisions_ = 0;
    drops_ = 0;
    ++slot_;
    return log;
  }

  const OverloadQueue& queues() const { return queues_; }
  const nn::Mlp& actor() const { return actor_; }
  const nn::Mlp& critic() const { return critic_; }
  nn::Mlp& actor() { return actor_; }
  nn::Mlp& critic() { return critic_; }
  const std::vector<double>& slot_loads() const { return loads_; }
  std::size_t replay_size() const { return replay_.size(); }
  const DispatcherConfig& config() const { return cfg_; }

 private:
  DispatcherConfig cfg_;
  OverloadQueue queues_;
  ReplayBuffer<Transition> replay_;
  nn::Mlp actor_;
  nn::Mlp critic_;
  std::optional<Transition> open_;
  std::vector<double> loads_;
  std::vector<double> values_;
  std::vector<std::uint64_t> dispatched_;
  std::uint64_t decisions_ = 0;
  std::uint64_t drops_ = 0;
  std::uint64_t slot_ = 0;
};

}  // namespace celora::sched
