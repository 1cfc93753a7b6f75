// SPDX-License-Identifier: Apache-2.0
//
// Shared test fixtures.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "celora/approximator.hpp"
#include "celora/distill.hpp"
#include "celora/edge_decider.hpp"
#include "celora/scheduler.hpp"

namespace fixtures {

using namespace celora;

/// Fixed 8-class teacher on 2-d inputs: class k owns the angular sector
/// around direction 2*pi*k/8, logits v_k = beta * <x, u_k>. Success rates
/// are the logistic of the logits. Inputs live on the annulus
/// 0.3 <= |x| <= 1, away from the origin where every logit vanishes.
struct SectorTask {
  static constexpr std::size_t kClasses = 8;
  double beta = 4.0;

  std::vector<double> teacher(const std::vector<double>& x) const {
    std::vector<double> v(kClasses);
    for (std::size_t k = 0; k < kClasses; ++k) {
      const double a = 2.0 * M_PI * static_cast<double>(k) / kClasses;
      v[k] = beta * (x[0] * std::cos(a) + x[1] * std::sin(a));
    }
    return v;
  }

  std::vector<double> rates(const std::vector<double>& v) const {
    std::vector<double> r(v.size());
    for (std::size_t k = 0; k < v.size(); ++k) r[k] = 1.0 / (1.0 + std::exp(-v[k]));
    return r;
  }

  static constexpr double kInner = 0.3;

  template <typename R>
  std::vector<double> sample(R& rng) const {
    std::uniform_real_distribution<double> r(kInner, 1.0), a(0.0, 2.0 * M_PI);
    const double rr = r(rng), aa = a(rng);
    return {rr * std::cos(aa), rr * std::sin(aa)};
  }

  /// Held-out evaluation grid: the 41 x 41 lattice over [-1, 1]^2 restricted
  /// to the annulus.
  std::vector<std::vector<double>> grid() const {
    std::vector<std::vector<double>> g;
    for (int i = -20; i <= 20; ++i)
      for (int j = -20; j <= 20; ++j) {
        const double x = i / 20.0, y = j / 20.0, r = std::hypot(x, y);
        if (r >= kInner && r <= 1.0) g.push_back({x, y});
      }
    return g;
  }

  double agreement(const nn::Mlp& student, const std::vector<std::vector<double>>& pts) const {
    int hit = 0;
    for (const auto& x : pts) hit += nn::argmax(student.forward(x)) == nn::argmax(teacher(x));
    return static_cast<double>(hit) / static_cast<double>(pts.size());
  }
};

struct DistillRun {
  double final_agreement = 0.0;
  int steps_to_80 = -1;  // first step whose agreement reaches 0.8; -1 if never
};

/// Trains a fresh {2, 16, 8} student for `steps` mini-batch steps.
inline DistillRun run_sector_distillation(const distill::Options& opt, std::uint64_t seed, int steps = 500,
                                          std::size_t batch = 16, std::size_t hidden = 16) {
  const SectorTask task;
  Rng init(seed);
  nn::Mlp student({2, hidden, SectorTask::kClasses}, nn::Activation::kTanh, init);
  std::mt19937_64 data(seed * 7919 + 1);
  const auto pts = task.grid();
  DistillRun out;
  std::vector<distill::Sample> b(batch);
  for (int step = 1; step <= steps; ++step) {
    for (auto& s : b) {
      s.input = task.sample(data);
      s.teacher_logits = task.teacher(s.input);
      s.success_rates = task.rates(s.teacher_logits);
    }
    distill::distill_step(student, b, opt);
    if (out.steps_to_80 < 0 && task.agreement(student, pts) >= 0.8) out.steps_to_80 = step;
  }
  out.final_agreement = task.agreement(student, pts);
  return out;
}

// ---------------------------------------------------------------------------
// Terminal-side decision oracle

// SX1276 constants, restated here so the oracle does not read the library's
// table.
inline double sens(int sf) { return std::array<double, 6>{-123, -126, -129, -132, -133, -136}[sf - 7]; }
inline double snr(int sf) { return std::array<double, 6>{-7.5, -10, -12.5, -15, -17.5, -20}[sf - 7]; }

inline double oracle_prior_tx(int u, double p) { return (p - sens(u)) / (std::pow(2.0, u - 7) * std::abs(snr(u))); }
inline double oracle_prior_rx(int d, int w) { return w * (1.0 - sens(d)) / (std::pow(2.0, d - 7) * std::abs(snr(d))); }

// Shadow of the score recursion, keyed by an arbitrary string.
struct ShadowLedger {
  double rho;
  std::map<std::string, double> folded;
  std::map<std::string, int> pending;
  int slices = 0;

  double read(const std::string& k) const {
    const double base = folded.count(k) ? folded.at(k) : std::pow(rho, slices);
    return base + (pending.count(k) ? pending.at(k) : 0);
  }
  void fold(const std::vector<std::string>& keys) {
    std::map<std::string, double> next;
    for (const auto& k : keys) next[k] = (pending.count(k) ? pending.at(k) : 0) + rho * read_folded(k);
    folded = next;
    pending.clear();
    ++slices;
  }
  double read_folded(const std::string& k) const { return folded.count(k) ? folded.at(k) : std::pow(rho, slices); }
};

inline std::string jkey(const ActionCombo& c) {
  return "J" + std::to_string(c.uplink_sf) + "/" + std::to_string(c.tx_power_dbm) + "/" +
         std::to_string(c.downlink_sf) + "/" + std::to_string(c.window);
}

inline edge::HistoryTable random_table(const ActionSpace& space, std::mt19937_64& rng, double rho) {
  edge::HistoryTable t(space, rho, 20);
  std::uniform_int_distribution<std::size_t> tx(0, space.tx_count() - 1);
  std::uniform_int_distribution<std::size_t> d(0, space.downlink_sfs.size() - 1), w(0, space.windows.size() - 1);
  std::uniform_int_distribution<int> n(0, 150);
  std::bernoulli_distribution ok(0.5);
  const int attempts = n(rng);
  for (int i = 0; i < attempts; ++i) {
    const TxChoice c = space.tx_at(tx(rng));
    t.record({c.uplink_sf, c.tx_power_dbm, space.downlink_sfs[d(rng)], space.windows[w(rng)]}, ok(rng));
  }
  return t;
}

inline TxChoice brute_force(const edge::HistoryTable& t, double rho_tx, double rho_rx, int d, int w) {
  TxChoice best{};
  double best_v = -INFINITY;
  const double den = t.rx_score(d, w) + rho_rx * oracle_prior_rx(d, w);
  for (int u = 7; u <= 12; ++u)
    for (double p = 0.0; p <= 14.0; p += 2.0) {
      const double v = t.rx_given_tx({u, p}, d, w) * (t.tx_score({u, p}) + rho_tx * oracle_prior_tx(u, p)) / den;
      if (v > best_v) {
        best_v = v;
        best = {u, p};
      }
    }
  return best;
}

// ---------------------------------------------------------------------------
// Learner gradient probes

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

inline sched::Transition random_transition(std::mt19937_64& rng, std::size_t state, std::size_t gateways) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  std::bernoulli_distribution heard(0.7);
  sched::Transition t;
  t.state.resize(state);
  t.next_state.resize(state);
  for (double& x : t.state) x = nd(rng);
  for (double& x : t.next_state) x = nd(rng);
  t.mask.assign(gateways + 1, 1);
  t.next_mask.assign(gateways + 1, 1);
  for (std::size_t g = 0; g < gateways; ++g) {
    t.mask[g] = heard(rng);
    t.next_mask[g] = heard(rng);
  }
  std::vector<int> allowed;
  for (std::size_t a = 0; a <= gateways; ++a)
    if (t.mask[a]) allowed.push_back(static_cast<int>(a));
  t.action = allowed[std::uniform_int_distribution<std::size_t>(0, allowed.size() - 1)(rng)];
  t.reward = nd(rng);
  t.backlog.resize(gateways);
  t.other_loads.resize(gateways);
  for (double& x : t.backlog) x = u(rng);
  for (double& x : t.other_loads) x = u(rng);
  t.airtime = u(rng) / 4;
  return t;
}

template <typename F>
double worst_param_fd(nn::Mlp& net, F loss, const std::vector<double>& grad, std::mt19937_64& rng, int probes) {
  std::uniform_int_distribution<std::size_t> pick(0, net.parameter_count() - 1);
  double worst = 0.0;
  for (int i = 0; i < probes; ++i) {
    const std::size_t k = pick(rng);
    const double h = 1e-5, orig = net.parameters()[k];
    net.parameters()[k] = orig + h;
    const double lp = loss();
    net.parameters()[k] = orig - h;
    const double lm = loss();
    net.parameters()[k] = orig;
    worst = std::max(worst, rel_err((lp - lm) / (2 * h), grad[k]));
  }
  return worst;
}

}  // namespace fixtures
