// SPDX-License-Identifier: Apache-2.0
//
// Quick invariant and oracle checks, runnable from the command line. The
// full suites live under tests/; these are reduced versions that finish in
// a few seconds.
#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "celora/celora.hpp"

namespace celora::selftest {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

namespace detail {

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

inline edge::HistoryTable random_table(const ActionSpace& space, Rng& rng) {
  std::uniform_real_distribution<double> rho(0.0, 0.95);
  edge::HistoryTable t(space, rho(rng), 20);
  std::uniform_int_distribution<std::size_t> tx(0, space.tx_count() - 1);
  std::uniform_int_distribution<std::size_t> d(0, space.downlink_sfs.size() - 1), w(0, space.windows.size() - 1);
  std::bernoulli_distribution ok(0.6);
  std::uniform_int_distribution<int> n(0, 120);
  const int attempts = n(rng);
  for (int i = 0; i < attempts; ++i) {
    const TxChoice c = space.tx_at(tx(rng));
    t.record({c.uplink_sf, c.tx_power_dbm, space.downlink_sfs[d(rng)], space.windows[w(rng)]}, ok(rng));
  }
  return t;
}

inline CheckResult edge_brute_force(std::uint64_t seed, int instances) {
  Rng rng(seed);
  const ActionSpace space;
  int mismatches = 0;
  for (int i = 0; i < instances; ++i) {
    const auto tbl = random_table(space, rng);
    edge::PriorModel prior;
    const int d = space.downlink_sfs[static_cast<std::size_t>(i) % space.downlink_sfs.size()];
    const int w = space.windows[static_cast<std::size_t>(i) % space.windows.size()];
    const TxChoice got = edge::decide(tbl, prior, d, w);
    // Full ratio per class, first maximum in enumeration order.
    double best = -std::numeric_limits<double>::infinity();
    TxChoice want{};
    for (int u : space.uplink_sfs)
      for (double p : space.tx_powers_dbm) {
        const double v = edge::objective(tbl, prior, {u, p}, d, w).value();
        if (v > best) {
          best = v;
          want = {u, p};
        }
      }
    if (got.uplink_sf != want.uplink_sf || got.tx_power_dbm != want.tx_power_dbm) ++mismatches;
  }
  return {"edge decide matches exhaustive ratio", mismatches == 0,
          std::to_string(mismatches) + " mismatches over " + std::to_string(instances)};
}

inline CheckResult mlp_gradient(std::uint64_t seed, int probes) {
  Rng rng(seed);
  nn::Mlp m({5, 7, 3}, nn::Activation::kTanh, rng);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> x(5), w(3);
  for (double& v : x) v = nd(rng);
  for (double& v : w) v = nd(rng);
  auto f = [&](const nn::Mlp& net) {
    const auto y = net.forward(x);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += w[i] * y[i];
    return s;
  };
  nn::Mlp::Cache cache;
  m.forward(x, cache);
  std::vector<double> grad(m.parameter_count(), 0.0);
  m.backward(cache, w, grad);
  std::uniform_int_distribution<std::size_t> pick(0, m.parameter_count() - 1);
  double worst = 0.0;
  for (int i = 0; i < probes; ++i) {
    const std::size_t k = pick(rng);
    const double h = 1e-5, orig = m.parameters()[k];
    m.parameters()[k] = orig + h;
    const double fp = f(m);
    m.parameters()[k] = orig - h;
    const double fm = f(m);
    m.parameters()[k] = orig;
    worst = std::max(worst, rel_err((fp - fm) / (2 * h), grad[k]));
  }
  return {"mlp gradient vs finite differences", worst <= 1e-3, "max rel err " + format_double(worst)};
}

inline CheckResult distill_gradient(std::uint64_t seed, int probes) {
  Rng rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  double worst = 0.0;
  for (int i = 0; i < probes; ++i) {
    std::vector<double> z(8), v(8), r(8);
    for (double& x : z) x = nd(rng);
    for (double& x : v) x = 2.0 * nd(rng);
    for (double& x : r) x = u01(rng);
    const distill::Options opt;
    const auto target = distill::target_distribution(v, r, opt);
    const auto lg = distill::student_loss(z, target, opt);
    const std::size_t k = static_cast<std::size_t>(i) % z.size();
    const double h = 1e-5;
    auto zp = z, zm = z;
    zp[k] += h;
    zm[k] -= h;
    const double fd =
        (distill::student_loss(zp, target, opt).loss - distill::student_loss(zm, target, opt).loss) / (2 * h);
    worst = std::max(worst, rel_err(fd, lg.grad[k]));
  }
  return {"distillation loss gradient vs finite differences", worst <= 1e-3, "max rel err " + format_double(worst)};
}

inline CheckResult kappa_shift_invariance(std::uint64_t seed, int probes) {
  Rng rng(seed);
  std::normal_distribution<double> nd(0.0, 3.0);
  double worst = 0.0;
  for (int i = 0; i < probes; ++i) {
    std::vector<double> v(8), zero(8, 0.0), shifted(8);
    for (double& x : v) x = nd(rng);
    const double c = nd(rng);
    std::fill(shifted.begin(), shifted.end(), c);
    const double s = distill::stddev_of(v);
    const auto a = nn::softmax_t(distill::transform_teacher(v, zero, s));
    const auto b = nn::softmax_t(distill::transform_teacher(v, shifted, s));
    for (std::size_t k = 0; k < a.size(); ++k) worst = std::max(worst, std::abs(a[k] - b[k]));
  }
  return {"uniform teacher shift leaves the target unchanged", worst <= 1e-9, "max abs diff " + format_double(worst)};
}

inline CheckResult queue_trace(std::uint64_t seed, int steps) {
  Rng rng(seed);
  std::uniform_real_distribution<double> load(0.0, 2.0);
  sched::OverloadQueue q(3, 1.0);
  std::vector<double> o(3, 0.0);
  int bad = 0;
  for (int t = 0; t < steps; ++t) {
    std::vector<double> l(3);
    for (double& x : l) x = load(rng);
    q.advance(l);
    for (std::size_t g = 0; g < 3; ++g) {
      o[g] = o[g] + l[g] - 1.0 > 0.0 ? o[g] + l[g] - 1.0 : 0.0;
      if (q.backlog()[g] != o[g] || q.backlog()[g] < 0.0) ++bad;
    }
  }
  return {"overload queue matches scalar trace", bad == 0, std::to_string(bad) + " mismatches"};
}

inline CheckResult airtime_reference() {
  // 20-byte payload, 125 kHz, CR 4/5, 8-symbol preamble, explicit header, CRC.
  const phy::RadioParams radio;
  double worst = 0.0;
  for (int sf = phy::kMinSf; sf <= phy::kMaxSf; ++sf) {
    const double ts = std::ldexp(1.0, sf) / radio.bandwidth_hz;
    const int de = ts >= 0.016 ? 1 : 0;
    const double num = 8.0 * 20 - 4.0 * sf + 28 + 16;
    const double n = 8 + std::max(std::ceil(num / (4.0 * (sf - 2 * de))) * 5, 0.0);
    const double want = (8 + 4.25) * ts + n * ts;
    worst = std::max(worst, std::abs(phy::airtime(20, sf, radio) - want));
  }
  return {"airtime matches time-on-air formula", worst <= 1e-12, "max abs diff " + format_double(worst)};
}

inline CheckResult aloha(std::uint64_t seed) {
  ScenarioConfig c;
  c.nodes = 600;
  c.gateways = 1;
  c.variant = Variant::kStatic;
  c.radius_m = 1000.0;
  c.horizon_s = 1800.0;
  c.seed = seed;
  c.channel.uplink_channels = 1;
  c.channel.capture_enabled = false;
  c.channel.demodulators = 64;
  c.channel.path_loss.shadowing_sigma_db = 0.0;
  c.traffic.duty_cycle_enabled = false;
  c.traffic.gateway_duty_cycle_enabled = false;
  c.node.initial = {7, 14.0, 7, 1};
  c.node.backoff_uplinks = 0;
  const double g = 0.25;
  c.traffic_intensity = g * c.reference_period_s / (phy::airtime(c.traffic.payload_bytes, 7, c.radio) * c.nodes);
  const auto r = sim::run(c);
  const double want = std::exp(-2.0 * g);
  return {"single-gateway SF7 delivery near pure ALOHA", std::abs(r.metrics.pdr - want) <= 0.05 && r.violations.empty(),
          "pdr " + format_double(r.metrics.pdr) + " vs " + format_double(want)};
}

inline CheckResult dispatcher_stability(std::uint64_t seed) {
  sched::SlotEnvironment env({}, seed);
  Rng init(seed ^ 0x9e3779b97f4a7c15ULL);
  sched::LyapunovDispatcher d(env.dispatcher_config(), init);
  env.run(d, 1000, true, true);
  const auto r = env.run(d, 500, false, true);
  const double bound = 0.05 * env.config().slot_capacity;
  return {"dispatcher backlog growth bounded at 0.8 load", r.max_backlog_per_slot <= bound,
          "max O/T " + format_double(r.max_backlog_per_slot)};
}

inline CheckResult short_simulation(std::uint64_t seed) {
  ScenarioConfig c;
  c.nodes = 60;
  c.horizon_s = 3600.0;
  c.seed = seed;
  std::string bad;
  for (Variant v : kAllVariants) {
    c.variant = v;
    const auto r = sim::run(c);
    if (!r.violations.empty()) bad += to_string(v) + ": " + r.violations.front() + "; ";
  }
  return {"short run of every variant keeps all invariants", bad.empty(), bad.empty() ? "ok" : bad};
}

}  // namespace detail

/// Runs every check; `seed` varies the random instances.
inline std::vector<CheckResult> run_all(std::uint64_t seed = 1) {
  std::vector<CheckResult> out;
  const std::vector<std::function<CheckResult()>> checks{
      [] { return detail::airtime_reference(); },
      [&] { return detail::edge_brute_force(seed, 200); },
      [&] { return detail::mlp_gradient(seed, 20); },
      [&] { return detail::distill_gradient(seed, 20); },
      [&] { return detail::kappa_shift_invariance(seed, 50); },
      [&] { return detail::queue_trace(seed, 10000); },
      [&] { return detail::aloha(seed); },
      [&] { return detail::dispatcher_stability(seed); },
      [&] { return detail::short_simulation(seed); },
  };
  for (const auto& c : checks) {
    try {
      out.push_back(c());
    } catch (const std::exception& e) {
      out.push_back({"(exception)", false, e.what()});
    }
  }
  return out;
}

}  // namespace celora::selftest
