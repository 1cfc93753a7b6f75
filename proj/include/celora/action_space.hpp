// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "celora/common.hpp"
#include "celora/phy.hpp"

namespace celora {

/// Node transmission parameters: uplink SF, TX power, downlink SF and
/// receive-window size (in window units).
struct ActionCombo {
  int uplink_sf = 12;
  double tx_power_dbm = 14.0;
  int downlink_sf = 12;
  int window = 2;

  friend bool operator==(const ActionCombo&, const ActionCombo&) = default;
};

/// Uplink half of a combo; the decision variable of the terminal-side solver.
struct TxChoice {
  int uplink_sf = 7;
  double tx_power_dbm = 14.0;

  friend bool operator==(const TxChoice&, const TxChoice&) = default;
};

struct ActionSpace {
  std::vector<int> uplink_sfs{7, 8, 9, 10, 11, 12};
  std::vector<double> tx_powers_dbm{0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0};
  std::vector<int> downlink_sfs{7, 8, 9, 10, 11, 12};
  std::vector<int> windows{1, 2, 3, 4};

  std::size_t tx_count() const { return uplink_sfs.size() * tx_powers_dbm.size(); }
  std::size_t rx_count() const { return downlink_sfs.size() * windows.size(); }

  void validate() const {
    if (uplink_sfs.empty() || tx_powers_dbm.empty() || downlink_sfs.empty() || windows.empty())
      throw ConfigError("action space: every subspace must be nonempty");
    for (int sf : uplink_sfs)
      if (!phy::valid_sf(sf)) throw ConfigError("action space: uplink SF out of range");
    for (int sf : downlink_sfs)
      if (!phy::valid_sf(sf)) throw ConfigError("action space: downlink SF out of range");
    for (int w : windows)
      if (w <= 0) throw ConfigError("action space: window sizes must be positive");
    if (!std::is_sorted(uplink_sfs.begin(), uplink_sfs.end()) ||
        !std::is_sorted(tx_powers_dbm.begin(), tx_powers_dbm.end()) ||
        !std::is_sorted(downlink_sfs.begin(), downlink_sfs.end()) ||
        !std::is_sorted(windows.begin(), windows.end()))
      throw ConfigError("action space: subspaces must be listed in increasing order");
  }

  // TX class index = sf_index * |powers| + power_index; ordered by airtime,
  // then by power.
  std::size_t tx_index(const TxChoice& c) const {
    return index_of(uplink_sfs, c.uplink_sf) * tx_powers_dbm.size() +
           index_of(tx_powers_dbm, c.tx_power_dbm);
  }
  TxChoice tx_at(std::size_t k) const {
    return {uplink_sfs.at(k / tx_powers_dbm.size()), tx_powers_dbm.at(k % tx_powers_dbm.size())};
  }

  std::size_t rx_index(int downlink_sf, int window) const {
    return index_of(downlink_sfs, downlink_sf) * windows.size() + index_of(windows, window);
  }

  bool contains(const ActionCombo& c) const {
    return contains_value(uplink_sfs, c.uplink_sf) && contains_value(tx_powers_dbm, c.tx_power_dbm) &&
           contains_value(downlink_sfs, c.downlink_sf) && contains_value(windows, c.window);
  }

 private:
  template <typename T>
  static bool contains_value(const std::vector<T>& v, T x) {
    return std::find(v.begin(), v.end(), x) != v.end();
  }
  template <typename T>
  static std::size_t index_of(const std::vector<T>& v, T x) {
    auto it = std::find(v.begin(), v.end(), x);
    if (it == v.end()) throw ParameterError("value outside action space");
    return static_cast<std::size_t>(it - v.begin());
  }
};

inline TxChoice tx_of(const ActionCombo& c) { return {c.uplink_sf, c.tx_power_dbm}; }

inline std::string to_string(const ActionCombo& c) {
  return "{u=" + std::to_string(c.uplink_sf) + ",p=" + format_double(c.tx_power_dbm) +
         ",d=" + std::to_string(c.downlink_sf) + ",w=" + std::to_string(c.window) + "}";
}

}  // namespace celora
