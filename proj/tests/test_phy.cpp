// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <random>

#include "celora/phy.hpp"

using namespace celora;
using namespace celora::phy;

namespace {

// Golden time-on-air values (seconds), produced by a separate script from the
// public Semtech formula: BW 125 kHz, CR 4/5, 8-symbol preamble, explicit
// header, CRC on, low-data-rate optimisation at symbol time >= 16 ms.
constexpr std::array<double, 6> kToa20{0.056576, 0.102912, 0.185344, 0.370688, 0.741376, 1.318912};
constexpr std::array<double, 6> kToa12{0.041216, 0.082432, 0.144384, 0.288768, 0.577536, 1.155072};

}  // namespace

TEST(Airtime, GoldenTable) {
  const RadioParams r;
  for (int sf = 7; sf <= 12; ++sf) {
    EXPECT_NEAR(airtime(20, sf, r), kToa20[sf - 7], 1e-12) << "sf " << sf;
    EXPECT_NEAR(airtime(12, sf, r), kToa12[sf - 7], 1e-12) << "sf " << sf;
  }
}

TEST(Airtime, EmptyPayloadFloor) {
  const RadioParams r;
  const double ts = 128.0 / 125e3;
  // 12.25 preamble symbols plus 8 + 5 header-only payload symbols.
  EXPECT_NEAR(airtime(0, 7, r), (12.25 + 13.0) * ts, 1e-12);
  EXPECT_GT(airtime(0, 7, r), 0.0);
}

TEST(Airtime, RoughlyDoublesPerSf) {
  const RadioParams r;
  for (int pl = 10; pl <= 50; ++pl)
    for (int sf = 7; sf < 12; ++sf) {
      const double ratio = airtime(pl, sf + 1, r) / airtime(pl, sf, r);
      EXPECT_GE(ratio, 1.7) << pl << " B, SF" << sf;
      EXPECT_LE(ratio, 2.3) << pl << " B, SF" << sf;
    }
}

TEST(Airtime, MonotoneInPayloadAndSf) {
  const RadioParams r;
  for (int sf = 7; sf <= 12; ++sf) {
    for (int pl = 0; pl < 200; ++pl) EXPECT_LE(airtime(pl, sf, r), airtime(pl + 1, sf, r));
    // One full payload symbol block later the airtime is strictly larger.
    for (int pl = 0; pl < 200; pl += 5) EXPECT_LT(airtime(pl, sf, r), airtime(pl + sf, sf, r));
    if (sf < 12) {
      for (int pl = 0; pl < 64; ++pl) EXPECT_LT(airtime(pl, sf, r), airtime(pl, sf + 1, r));
    }
  }
}

TEST(Airtime, RejectsBadInputs) {
  RadioParams r;
  EXPECT_THROW(airtime(20, 6, r), ParameterError);
  EXPECT_THROW(airtime(20, 13, r), ParameterError);
  EXPECT_THROW(airtime(-1, 7, r), ParameterError);
  r.bandwidth_hz = 200e3;
  EXPECT_THROW(airtime(20, 7, r), ParameterError);
  r = RadioParams{};
  r.preamble_symbols = 5;
  EXPECT_THROW(airtime(20, 7, r), ParameterError);
}

TEST(Receivable, BoundaryInclusive) {
  const SfTable t = SfTable::sx127x();
  for (int sf = 7; sf <= 12; ++sf) {
    // Received power exactly at sensitivity and SNR exactly at threshold.
    const double rx = t.sensitivity(sf);
    const LinkBudget at{0.0, -rx, rx - t.snr_threshold(sf)};
    EXPECT_DOUBLE_EQ(at.received_dbm(), t.sensitivity(sf));
    EXPECT_DOUBLE_EQ(at.snr_db(), t.snr_threshold(sf));
    EXPECT_TRUE(receivable(at, sf, t));
    const LinkBudget below{0.0, -rx + 1.0, rx - t.snr_threshold(sf) - 1.0};
    EXPECT_FALSE(receivable(below, sf, t));
  }
}

TEST(Receivable, HighSfReachesFurther) {
  const SfTable t = SfTable::sx127x();
  // -130 dBm sits between the SF7 and SF12 sensitivities; noise is low.
  const LinkBudget link{14.0, 144.0, -160.0};
  EXPECT_TRUE(receivable(link, 12, t));
  EXPECT_FALSE(receivable(link, 7, t));
}

TEST(Receivable, MonotoneInPower) {
  const SfTable t = SfTable::sx127x();
  for (int sf = 7; sf <= 12; ++sf) {
    bool seen = false;
    for (double pl = 170.0; pl >= 100.0; pl -= 0.25) {
      const bool r = receivable({14.0, pl, -117.0}, sf, t);
      if (seen) {
        EXPECT_TRUE(r) << "sf " << sf << " pl " << pl;
      }
      seen = seen || r;
    }
    EXPECT_TRUE(seen);
  }
}

TEST(LinkMargin, SignMatchesReceivable) {
  const SfTable t = SfTable::sx127x();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> pl(100.0, 170.0), p(0.0, 14.0), nf(-125.0, -110.0);
  for (int i = 0; i < 2000; ++i) {
    const LinkBudget l{p(rng), pl(rng), nf(rng)};
    for (int sf = 7; sf <= 12; ++sf) EXPECT_EQ(link_margin_db(l, sf, t) >= 0.0, receivable(l, sf, t));
  }
}

TEST(Noise, ThermalFloor) {
  EXPECT_NEAR(thermal_noise_dbm(125e3, 6.0), -174.0 + 50.96910013008056 + 6.0, 1e-9);
}

TEST(Collisions, CaptureStrongerWins) {
  const std::vector<Reception> rs{{1, 0, 7, 0.0, 1.0, -80.0}, {2, 0, 7, 0.5, 1.5, -90.0}};
  const auto out = resolve_collisions(rs, 6.0);
  EXPECT_EQ(out[0], Outcome::kDelivered);
  EXPECT_EQ(out[1], Outcome::kLost);
}

TEST(Collisions, DifferentSfOrChannelCoexist) {
  const std::vector<Reception> sf{{1, 0, 7, 0.0, 1.0, -80.0}, {2, 0, 9, 0.0, 1.0, -80.0}};
  for (auto o : resolve_collisions(sf)) EXPECT_EQ(o, Outcome::kDelivered);
  const std::vector<Reception> ch{{1, 0, 7, 0.0, 1.0, -80.0}, {2, 1, 7, 0.0, 1.0, -80.0}};
  for (auto o : resolve_collisions(ch)) EXPECT_EQ(o, Outcome::kDelivered);
}

TEST(Collisions, NoWinnerWithinMargin) {
  const std::vector<Reception> rs{
      {1, 0, 8, 0.0, 1.0, -80.0}, {2, 0, 8, 0.2, 1.2, -81.0}, {3, 0, 8, 0.4, 1.4, -82.0}};
  for (auto o : resolve_collisions(rs, 6.0)) EXPECT_EQ(o, Outcome::kLost);
}

TEST(Collisions, TouchingIntervalsDoNotOverlap) {
  const std::vector<Reception> rs{{1, 0, 7, 0.0, 1.0, -80.0}, {2, 0, 7, 1.0, 2.0, -80.0}};
  for (auto o : resolve_collisions(rs)) EXPECT_EQ(o, Outcome::kDelivered);
}

TEST(Collisions, PermutationInvariant) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> t(0.0, 5.0), pw(-120.0, -70.0);
  std::uniform_int_distribution<int> sf(7, 8), ch(0, 1);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Reception> rs;
    for (std::uint64_t i = 0; i < 8; ++i) {
      const double s = t(rng);
      rs.push_back({i, ch(rng), sf(rng), s, s + 0.5, pw(rng)});
    }
    const auto base = resolve_collisions(rs);
    auto perm = rs;
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto out = resolve_collisions(perm);
    for (std::size_t i = 0; i < perm.size(); ++i) EXPECT_EQ(out[i], base[perm[i].id]);
  }
}

TEST(Collisions, BruteForceOracle) {
  // Independent pairwise rule: lost iff some other same-channel, same-SF,
  // overlapping reception is not at least 6 dB weaker.
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> t(0.0, 3.0), pw(-110.0, -80.0);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<Reception> rs;
    for (std::uint64_t i = 0; i < 6; ++i) {
      const double s = t(rng);
      rs.push_back({i, static_cast<int>(i % 2), 7, s, s + 0.4, pw(rng)});
    }
    const auto out = resolve_collisions(rs, 6.0);
    for (std::size_t i = 0; i < rs.size(); ++i) {
      bool lost = false;
      for (std::size_t j = 0; j < rs.size(); ++j) {
        if (i == j || rs[i].channel != rs[j].channel) continue;
        const bool ov = std::max(rs[i].start, rs[j].start) < std::min(rs[i].end, rs[j].end);
        if (ov && rs[i].rx_power_dbm < rs[j].rx_power_dbm + 6.0) lost = true;
      }
      EXPECT_EQ(out[i] == Outcome::kLost, lost);
    }
  }
}

TEST(PathLoss, ReferenceAndSlope) {
  const PathLossModel m;
  EXPECT_DOUBLE_EQ(m.mean_loss(1000.0), 120.0);
  EXPECT_NEAR(m.mean_loss(10000.0), 148.0, 1e-9);
}
