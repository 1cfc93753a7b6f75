// SPDX-License-Identifier: Apache-2.0
//
// LoRa physical layer: time on air, demodulation thresholds, link budget and
// same-channel/same-SF collision resolution with capture.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "celora/common.hpp"

namespace celora::phy {

inline constexpr int kMinSf = 7;
inline constexpr int kMaxSf = 12;
inline constexpr int kSfCount = kMaxSf - kMinSf + 1;

inline bool valid_sf(int sf) { return sf >= kMinSf && sf <= kMaxSf; }

inline void require_sf(int sf) {
  if (!valid_sf(sf)) throw ParameterError("spreading factor out of range 7..12: " + std::to_string(sf));
}

/// Per-SF receiver sensitivity (dBm) and demodulation SNR threshold (dB).
struct SfTable {
  std::array<double, kSfCount> sensitivity_dbm{};
  std::array<double, kSfCount> snr_threshold_db{};

  double sensitivity(int sf) const {
    require_sf(sf);
    return sensitivity_dbm[static_cast<std::size_t>(sf - kMinSf)];
  }
  double snr_threshold(int sf) const {
    require_sf(sf);
    return snr_threshold_db[static_cast<std::size_t>(sf - kMinSf)];
  }

  // SX1276, 125 kHz.
  static SfTable sx127x() {
    return SfTable{{-123.0, -126.0, -129.0, -132.0, -133.0, -136.0},
                   {-7.5, -10.0, -12.5, -15.0, -17.5, -20.0}};
  }

  void validate() const {
    for (std::size_t i = 1; i < kSfCount; ++i) {
      if (!(sensitivity_dbm[i] < sensitivity_dbm[i - 1]))
        throw ConfigError("SfTable: sensitivity must strictly decrease with SF");
      if (!(snr_threshold_db[i] < snr_threshold_db[i - 1]))
        throw ConfigError("SfTable: SNR threshold must strictly decrease with SF");
    }
  }
};

struct RadioParams {
  double bandwidth_hz = 125e3;
  int coding_rate_denominator = 5;  // 4/5 .. 4/8
  int preamble_symbols = 8;
  bool header_enabled = true;
  bool crc_enabled = true;
  // Applies low-data-rate optimisation where symbol time reaches 16 ms.
  bool low_data_rate_optimize = true;

  void validate() const {
    if (bandwidth_hz != 125e3 && bandwidth_hz != 250e3 && bandwidth_hz != 500e3)
      throw ParameterError("bandwidth must be one of 125e3, 250e3, 500e3");
    if (coding_rate_denominator < 5 || coding_rate_denominator > 8)
      throw ParameterError("coding rate denominator must be in 5..8");
    if (preamble_symbols < 6) throw ParameterError("preamble must be at least 6 symbols");
  }
};

inline double symbol_time(int sf, double bandwidth_hz) {
  return std::ldexp(1.0, sf) / bandwidth_hz;
}

/// Symbol-accurate LoRa time on air in seconds.
inline double airtime(int payload_bytes, int sf, const RadioParams& radio) {
  require_sf(sf);
  radio.validate();
  if (payload_bytes < 0) throw ParameterError("payload size must be nonnegative");

  const double tsym = symbol_time(sf, radio.bandwidth_hz);
  const int de = (radio.low_data_rate_optimize && tsym >= 0.016) ? 1 : 0;
  const int ih = radio.header_enabled ? 0 : 1;
  const int crc = radio.crc_enabled ? 1 : 0;
  const int cr = radio.coding_rate_denominator - 4;

  const int num = 8 * payload_bytes - 4 * sf + 28 + 16 * crc - 20 * ih;
  const int den = 4 * (sf - 2 * de);
  const int blocks = num > 0 ? (num + den - 1) / den : 0;
  const int payload_symbols = 8 + blocks * (cr + 4);

  const double preamble = (radio.preamble_symbols + 4.25) * tsym;
  return preamble + payload_symbols * tsym;
}

inline double thermal_noise_dbm(double bandwidth_hz, double noise_figure_db) {
  return -174.0 + 10.0 * std::log10(bandwidth_hz) + noise_figure_db;
}

struct LinkBudget {
  double tx_power_dbm = 14.0;
  double path_loss_db = 0.0;
  double noise_floor_dbm = thermal_noise_dbm(125e3, 6.0);

  double received_dbm() const { return tx_power_dbm - path_loss_db; }
  double snr_db() const { return received_dbm() - noise_floor_dbm; }
};

/// Both thresholds are inclusive.
inline bool receivable(const LinkBudget& link, int sf, const SfTable& tbl) {
  return link.received_dbm() >= tbl.sensitivity(sf) && link.snr_db() >= tbl.snr_threshold(sf);
}

/// Headroom over the tighter of the sensitivity and SNR limits; >= 0 iff receivable.
inline double link_margin_db(const LinkBudget& link, int sf, const SfTable& tbl) {
  return std::min(link.received_dbm() - tbl.sensitivity(sf), link.snr_db() - tbl.snr_threshold(sf));
}

/// Log-distance path loss. Shadowing is added by the caller (frozen per link).
struct PathLossModel {
  double reference_loss_db = 120.0;
  double reference_distance_m = 1000.0;
  double exponent = 2.8;
  double shadowing_sigma_db = 4.0;

  double mean_loss(double distance_m) const {
    const double d = std::max(distance_m, 1.0);
    return reference_loss_db + 10.0 * exponent * std::log10(d / reference_distance_m);
  }
};

struct Reception {
  std::uint64_t id = 0;
  int channel = 0;
  int sf = kMinSf;
  double start = 0.0;
  double end = 0.0;
  double rx_power_dbm = 0.0;
};

enum class Outcome : std::uint8_t { kDelivered, kLost };

inline bool overlaps(const Reception& a, const Reception& b) {
  return a.start < b.end && b.start < a.end;
}

/// Outcome of one reception against a set of others at the same antenna:
/// lost iff some same-channel, same-SF, time-overlapping reception is not
/// at least `capture_margin_db` weaker.
inline Outcome collision_outcome(const Reception& r, std::span<const Reception> others,
                                 double capture_margin_db) {
  for (const auto& q : others) {
    if (q.id == r.id) continue;
    if (q.channel != r.channel || q.sf != r.sf || !overlaps(r, q)) continue;
    if (r.rx_power_dbm - q.rx_power_dbm < capture_margin_db) return Outcome::kLost;
  }
  return Outcome::kDelivered;
}

/// Resolves a batch of receptions at one gateway antenna. Output is aligned
/// with the input order; ids must be unique.
inline std::vector<Outcome> resolve_collisions(std::span<const Reception> receptions,
                                               double capture_margin_db = 6.0) {
  std::vector<Outcome> out;
  out.reserve(receptions.size());
  for (const auto& r : receptions) out.push_back(collision_outcome(r, receptions, capture_margin_db));
  return out;
}

}  // namespace celora::phy
