// SPDX-License-Identifier: Apache-2.0
//
// Terminal-side parameter decision from local history and link priors.
//
// A node keeps three success ledgers (joint TX/RX combo, TX pair, RX pair).
// Each ledger entry carries a decayed score
//
//   score_T = N_s(T) + rho * score_{T-1}
//
// folded at slice boundaries over every key, starting from 1 at T = 0, so a
// key never attempted reads rho^T. When the downlink
// SF and window are fixed, the node picks the uplink SF/power maximising
//
//   score(d,w | u,p) * (score(u,p) + rho_tx * U_tx(u,p))
//   ---------------------------------------------------
//         score(d,w) + rho_rx * U_rx(d,w)
//
// by enumerating every (u, p) pair.
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "celora/action_space.hpp"
#include "celora/common.hpp"
#include "celora/phy.hpp"

namespace celora::edge {

/// One decayed success score.
struct ScoreEntry {
  double folded = 1.0;       // score after the last fold
  std::uint32_t pending = 0; // successes in the open slice
  bool attempted = false;

  double read() const { return folded + static_cast<double>(pending); }
};

class HistoryTable {
 public:
  HistoryTable(const ActionSpace& space, double rho, int slice_length)
      : space_(space),
        rho_(rho),
        slice_length_(slice_length),
        joint_(space.tx_count() * space.rx_count()),
        tx_(space.tx_count()),
        rx_(space.rx_count()) {
    if (!(rho >= 0.0 && rho < 1.0)) throw ParameterError("history decay rho must be in [0, 1)");
    if (slice_length <= 0) throw ParameterError("slice length must be positive");
  }

  /// Records one uplink attempt; folds automatically when the slice is full.
  void record(const ActionCombo& combo, bool delivered) {
    const std::size_t t = space_.tx_index(tx_of(combo));
    const std::size_t r = space_.rx_index(combo.downlink_sf, combo.window);
    for (ScoreEntry* e : {&joint_[joint_index(t, r)], &tx_[t], &rx_[r]}) {
      e->attempted = true;
      if (delivered) ++e->pending;
    }
    if (++attempts_in_slice_ >= slice_length_) end_slice();
  }

  /// Closes the open slice: score <- N_s + rho * score on every key.
  void end_slice() {
    for (auto* ledger : {&joint_, &tx_, &rx_}) {
      for (auto& e : *ledger) {
        e.folded = static_cast<double>(e.pending) + rho_ * e.folded;
        e.pending = 0;
      }
    }
    attempts_in_slice_ = 0;
    ++slice_;
  }

  // The unnormalised joint score serves both conditional directions.
  double rx_given_tx(const TxChoice& tx, int d, int w) const {
    return joint_[joint_index(space_.tx_index(tx), space_.rx_index(d, w))].read();
  }
  double tx_given_rx(const TxChoice& tx, int d, int w) const { return rx_given_tx(tx, d, w); }
  double tx_score(const TxChoice& tx) const { return tx_[space_.tx_index(tx)].read(); }
  double rx_score(int d, int w) const { return rx_[space_.rx_index(d, w)].read(); }

  std::uint64_t slice() const { return slice_; }
  int attempts_in_slice() const { return attempts_in_slice_; }
  double rho() const { return rho_; }
  const ActionSpace& space() const { return space_; }

  /// Compact text record: header line, then one line per touched key.
  std::string to_record() const {
    std::ostringstream os;
    os << "history slice=" << slice_ << " rho=" << format_double(rho_)
       << " open=" << attempts_in_slice_ << '\n';
    auto dump = [&os](char tag, const std::vector<ScoreEntry>& ledger) {
      for (std::size_t i = 0; i < ledger.size(); ++i) {
        if (!ledger[i].attempted) continue;
        os << tag << ' ' << i << ' ' << format_double(ledger[i].read()) << '\n';
      }
    };
    dump('J', joint_);
    dump('T', tx_);
    dump('R', rx_);
    return os.str();
  }

 private:
  std::size_t joint_index(std::size_t tx, std::size_t rx) const { return tx * space_.rx_count() + rx; }

  ActionSpace space_;
  double rho_;
  int slice_length_;
  int attempts_in_slice_ = 0;
  std::uint64_t slice_ = 0;
  std::vector<ScoreEntry> joint_;
  std::vector<ScoreEntry> tx_;
  std::vector<ScoreEntry> rx_;
};

enum class PriorSign {
  kMagnitude,  // divide by |tau_s|: higher score means a stronger link
  kRaw,        // divide by tau_s as written (negative in dB)
};

struct PriorModel {
  double rho_tx = 0.05;
  double rho_rx = 0.05;
  phy::SfTable table = phy::SfTable::sx127x();
  PriorSign sign = PriorSign::kMagnitude;

  double snr_divisor(int sf) const {
    const double s = table.snr_threshold(sf);
    return sign == PriorSign::kMagnitude ? std::abs(s) : s;
  }

  /// Power margin over sensitivity, discounted by airtime growth.
  double prior_tx(int u, double p) const {
    return (p - table.sensitivity(u)) / (std::ldexp(1.0, u - 7) * snr_divisor(u));
  }

  /// Linear in the window size.
  double prior_rx(int d, int w) const {
    return w * (1.0 - table.sensitivity(d)) / (std::ldexp(1.0, d - 7) * snr_divisor(d));
  }
};

struct Objective {
  double numerator = 0.0;
  double denominator = 0.0;
  double value() const { return denominator != 0.0 ? numerator / denominator : numerator; }
};

inline Objective objective(const HistoryTable& tbl, const PriorModel& prior, const TxChoice& tx, int d,
                           int w) {
  Objective o;
  o.numerator = tbl.rx_given_tx(tx, d, w) *
                (tbl.tx_score(tx) + prior.rho_tx * prior.prior_tx(tx.uplink_sf, tx.tx_power_dbm));
  o.denominator = tbl.rx_score(d, w) + prior.rho_rx * prior.prior_rx(d, w);
  return o;
}

/// Exhaustive argmax over every (u, p) in the action space with the downlink
/// SF and window held fixed. Ties go to the lower SF (shorter airtime), then
/// to the lower power.
inline TxChoice decide(const HistoryTable& tbl, const PriorModel& prior, int d, int w) {
  const ActionSpace& space = tbl.space();
  // The denominator does not depend on (u, p); only its sign matters.
  const double den = tbl.rx_score(d, w) + prior.rho_rx * prior.prior_rx(d, w);
  const double orient = den < 0.0 ? -1.0 : 1.0;

  TxChoice best = space.tx_at(0);
  double best_val = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < space.tx_count(); ++k) {
    const TxChoice c = space.tx_at(k);
    const double num = tbl.rx_given_tx(c, d, w) *
                       (tbl.tx_score(c) + prior.rho_tx * prior.prior_tx(c.uplink_sf, c.tx_power_dbm));
    const double val = orient * num;
    // Classes are visited in (sf, power) order, so strict > keeps the
    // cheaper option on ties.
    if (val > best_val) {
      best_val = val;
      best = c;
    }
  }
  return best;
}

}  // namespace celora::edge
