// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>

#include "celora/edge_decider.hpp"
#include "fixtures.hpp"

using namespace celora;
using namespace celora::edge;

using namespace fixtures;

TEST(Prior, TxTableMatchesIndependentEvaluation) {
  const PriorModel prior;
  const ActionSpace space;
  for (int u : space.uplink_sfs)
    for (double p : space.tx_powers_dbm) EXPECT_NEAR(prior.prior_tx(u, p), oracle_prior_tx(u, p), 1e-12);
}

TEST(Prior, RxTableMatchesIndependentEvaluation) {
  const PriorModel prior;
  const ActionSpace space;
  for (int d : space.downlink_sfs)
    for (int w : space.windows) EXPECT_NEAR(prior.prior_rx(d, w), oracle_prior_rx(d, w), 1e-12);
}

TEST(Prior, RawSignAtSf7) {
  PriorModel prior;
  prior.sign = PriorSign::kRaw;
  EXPECT_DOUBLE_EQ(prior.prior_tx(7, 14.0), (14.0 + 123.0) / -7.5);
}

TEST(Prior, IncreasingInPowerAndWindow) {
  const PriorModel prior;
  for (int u = 7; u <= 12; ++u)
    for (double p = 0.0; p < 14.0; p += 2.0) EXPECT_LT(prior.prior_tx(u, p), prior.prior_tx(u, p + 2.0));
  for (int d = 7; d <= 12; ++d) {
    for (int w = 1; w < 4; ++w) EXPECT_LT(prior.prior_rx(d, w), prior.prior_rx(d, w + 1));
    // Linear in w.
    EXPECT_NEAR(prior.prior_rx(d, 3) - prior.prior_rx(d, 2), prior.prior_rx(d, 2) - prior.prior_rx(d, 1), 1e-12);
  }
}

TEST(History, FreshTableReadsOne) {
  const ActionSpace space;
  const HistoryTable t(space, 0.5, 20);
  for (std::size_t k = 0; k < space.tx_count(); ++k) {
    const TxChoice c = space.tx_at(k);
    EXPECT_EQ(t.tx_score(c), 1.0);
    for (int d : space.downlink_sfs)
      for (int w : space.windows) EXPECT_EQ(t.rx_given_tx(c, d, w), 1.0);
  }
  EXPECT_EQ(t.rx_score(9, 3), 1.0);
}

TEST(History, NoDecayGivesSliceCount) {
  const ActionSpace space;
  HistoryTable t(space, 0.0, 20);
  const ActionCombo c{9, 8.0, 10, 2};
  for (int i = 0; i < 3; ++i) t.record(c, true);
  t.end_slice();
  EXPECT_EQ(t.rx_given_tx(tx_of(c), 10, 2), 3.0);
  EXPECT_EQ(t.tx_score(tx_of(c)), 3.0);
  EXPECT_EQ(t.rx_score(10, 2), 3.0);
  EXPECT_EQ(t.tx_score({7, 0.0}), 0.0);
}

TEST(History, TwoSliceRecursion) {
  // Literal recursion from score_0 = 1: 4 + 0.5 * 1, then 2 + 0.5 * 4.5.
  const ActionSpace space;
  HistoryTable t(space, 0.5, 100);
  const ActionCombo c{8, 10.0, 8, 1};
  for (int i = 0; i < 4; ++i) t.record(c, true);
  t.end_slice();
  EXPECT_DOUBLE_EQ(t.tx_score(tx_of(c)), 4.5);
  for (int i = 0; i < 2; ++i) t.record(c, true);
  t.end_slice();
  EXPECT_DOUBLE_EQ(t.tx_score(tx_of(c)), 4.25);
  // The contribution of the two slices alone is 2 + 0.5 * 4.
  EXPECT_DOUBLE_EQ(t.tx_score(tx_of(c)) - std::pow(0.5, 2), 4.0);
}

TEST(History, MatchesShadowRecursion) {
  std::mt19937_64 rng(21);
  const ActionSpace space;
  for (double rho : {0.0, 0.3, 0.9}) {
    HistoryTable t(space, rho, 7);
    ShadowLedger sh{rho, {}, {}};
    std::vector<std::string> keys;
    for (std::size_t k = 0; k < space.tx_count(); ++k)
      for (int d : space.downlink_sfs)
        for (int w : space.windows) {
          const TxChoice c = space.tx_at(k);
          keys.push_back(jkey({c.uplink_sf, c.tx_power_dbm, d, w}));
        }
    std::uniform_int_distribution<std::size_t> tx(0, 5);
    std::bernoulli_distribution ok(0.6);
    int in_slice = 0;
    for (int i = 0; i < 300; ++i) {
      const TxChoice c = space.tx_at(tx(rng));
      const ActionCombo combo{c.uplink_sf, c.tx_power_dbm, 7, 1};
      const bool s = ok(rng);
      t.record(combo, s);
      if (s) ++sh.pending[jkey(combo)];
      if (++in_slice == 7) {
        sh.fold(keys);
        in_slice = 0;
      }
      const double got = t.rx_given_tx(c, 7, 1);
      const double want = sh.read(jkey(combo));
      ASSERT_NEAR(got, want, 1e-9 * std::max(1.0, want)) << "rho " << rho << " step " << i;
    }
  }
}

TEST(History, ScoresFiniteAndNonnegative) {
  std::mt19937_64 rng(2);
  const ActionSpace space;
  for (int trial = 0; trial < 20; ++trial) {
    const auto t = random_table(space, rng, 0.95);
    for (std::size_t k = 0; k < space.tx_count(); ++k) {
      const double v = t.tx_score(space.tx_at(k));
      EXPECT_TRUE(std::isfinite(v));
      EXPECT_GE(v, 0.0);
    }
  }
}

TEST(Decide, MatchesBruteForce) {
  std::mt19937_64 rng(7);
  const ActionSpace space;
  std::uniform_real_distribution<double> rho(0.0, 0.95), rr(0.0, 1.0);
  int mismatches = 0;
  for (int i = 0; i < 300; ++i) {
    const auto t = random_table(space, rng, rho(rng));
    PriorModel prior;
    prior.rho_tx = rr(rng);
    prior.rho_rx = rr(rng);
    const int d = 7 + i % 6, w = 1 + i % 4;
    const TxChoice got = decide(t, prior, d, w);
    const TxChoice want = brute_force(t, prior.rho_tx, prior.rho_rx, d, w);
    if (!(got == want)) ++mismatches;
  }
  EXPECT_EQ(mismatches, 0);
}

TEST(Decide, LargePriorWeightFollowsTxPrior) {
  const ActionSpace space;
  const HistoryTable t(space, 0.5, 20);
  PriorModel prior;
  prior.rho_tx = 1e6;
  TxChoice want{};
  double best = -INFINITY;
  for (std::size_t k = 0; k < space.tx_count(); ++k) {
    const TxChoice c = space.tx_at(k);
    if (oracle_prior_tx(c.uplink_sf, c.tx_power_dbm) > best) {
      best = oracle_prior_tx(c.uplink_sf, c.tx_power_dbm);
      want = c;
    }
  }
  EXPECT_EQ(decide(t, prior, 9, 2), want);
}

TEST(Decide, TieGoesToCheaperClass) {
  const ActionSpace space;
  const HistoryTable t(space, 0.5, 20);
  PriorModel prior;
  prior.rho_tx = 0.0;  // every class scores 1 * 1
  EXPECT_EQ(decide(t, prior, 7, 1), (TxChoice{7, 0.0}));
}

TEST(Decide, DenominatorScalingDoesNotMatter) {
  std::mt19937_64 rng(9);
  const ActionSpace space;
  std::uniform_real_distribution<double> scale(0.01, 100.0);
  for (int i = 0; i < 100; ++i) {
    const auto t = random_table(space, rng, 0.5);
    PriorModel a, b;
    b.rho_rx = a.rho_rx * scale(rng);
    EXPECT_EQ(decide(t, a, 8, 2), decide(t, b, 8, 2));
  }
}

TEST(Decide, DecayThresholdSwitchesWinner) {
  // B succeeds 20 times in an old slice, A 5 times in the latest one. With
  // rho_tx = 0 the objective is score^2, so A wins iff 5 > 20 rho.
  const ActionSpace space;
  const ActionCombo a{8, 6.0, 9, 2}, b{10, 4.0, 9, 2}, filler{12, 14.0, 12, 4};
  auto build = [&](double rho) {
    HistoryTable t(space, rho, 20);
    for (int i = 0; i < 20; ++i) t.record(b, true);
    for (int i = 0; i < 5; ++i) t.record(a, true);
    for (int i = 0; i < 15; ++i) t.record(filler, false);
    return t;
  };
  PriorModel prior;
  prior.rho_tx = 0.0;
  EXPECT_EQ(decide(build(0.1), prior, 9, 2), tx_of(a));
  EXPECT_EQ(decide(build(0.2), prior, 9, 2), tx_of(a));
  EXPECT_EQ(decide(build(0.3), prior, 9, 2), tx_of(b));
  EXPECT_EQ(decide(build(0.8), prior, 9, 2), tx_of(b));
}

TEST(History, RejectsBadParameters) {
  const ActionSpace space;
  EXPECT_THROW(HistoryTable(space, 1.0, 20), ParameterError);
  EXPECT_THROW(HistoryTable(space, -0.1, 20), ParameterError);
  EXPECT_THROW(HistoryTable(space, 0.5, 0), ParameterError);
}
