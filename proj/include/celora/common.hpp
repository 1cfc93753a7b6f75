// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <system_error>

namespace celora {

/// Thrown when a caller passes a value outside an operation's domain.
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown on scenario/config validation failures.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thrown when the simulator detects a broken internal invariant
/// (event-time regression, counter inconsistency).
class InvariantViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

using Rng = std::mt19937_64;

// Floor used inside logs and divisions by a standard deviation.
inline constexpr double kEpsilon = 1e-12;

inline double dbm_to_mw(double dbm) { return std::pow(10.0, dbm / 10.0); }

/// Shortest round-trip decimal representation; locale independent.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  if (res.ec != std::errc{}) return "nan";
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{}) throw ParameterError("not a number: '" + s + "'");
  return v;
}

/// FNV-1a, used to fingerprint event logs.
inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace celora
