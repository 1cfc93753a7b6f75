// SPDX-License-Identifier: Apache-2.0
//
// Cloud-to-edge knowledge distillation with per-class logit transforms.
//
// Student logits z and teacher logits v are mapped through
//   f_z(z)_k = (z_k + k1_k) / k2_k,   f_v(v)_k = (v_k + k3_k) / k4_k
// before the softmax, and the student minimises KL(F(f_z(z)) || F(f_v(v))).
// The shipped transform standardises z and shifts each teacher class by the
// network-wide success rate of that class in the sample's state bucket:
//   f_z(z)_k = (z_k - mean z) / sd(z),  f_v(v)_k = (v_k + h_k) / sd(v).
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "celora/approximator.hpp"
#include "celora/common.hpp"

namespace celora::distill {

enum class Mode {
  kSuccessInformed,   // standardised student, teacher shifted by success rates
  kLogitStandardize,  // both standardised
  kFixedTemperature,  // plain softmax(x / T) on both sides
};

inline std::string to_string(Mode m) {
  switch (m) {
    case Mode::kSuccessInformed: return "eq14";
    case Mode::kLogitStandardize: return "logit-std";
    case Mode::kFixedTemperature: return "fixed-T";
  }
  return "?";
}

inline Mode mode_from_string(const std::string& s) {
  if (s == "eq14") return Mode::kSuccessInformed;
  if (s == "logit-std") return Mode::kLogitStandardize;
  if (s == "fixed-T") return Mode::kFixedTemperature;
  throw ParameterError("unknown distillation mode '" + s + "' (expected eq14 | logit-std | fixed-T)");
}

inline double mean_of(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v;
  return x.empty() ? 0.0 : s / static_cast<double>(x.size());
}

/// Population standard deviation.
inline double stddev_of(std::span<const double> x) {
  const double m = mean_of(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return x.empty() ? 0.0 : std::sqrt(s / static_cast<double>(x.size()));
}

struct Standardized {
  std::vector<double> logits;
  double mean = 0.0;
  double sigma = 0.0;  // after flooring
  bool degenerate = false;
};

/// (z - mean) / sd, sd floored at kEpsilon.
inline Standardized transform_student(std::span<const double> z) {
  Standardized s;
  s.mean = mean_of(z);
  const double sd = stddev_of(z);
  s.degenerate = !(sd > kEpsilon);
  s.sigma = s.degenerate ? kEpsilon : sd;
  s.logits.resize(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) s.logits[i] = (z[i] - s.mean) / s.sigma;
  return s;
}

/// (v_k + shift_k) / sigma, sigma floored at kEpsilon.
inline std::vector<double> transform_teacher(std::span<const double> v, std::span<const double> shift,
                                             double sigma) {
  if (shift.size() != v.size()) throw ParameterError("transform_teacher: shift width mismatch");
  const double s = sigma > kEpsilon ? sigma : kEpsilon;
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] + shift[i]) / s;
  return out;
}

/// General per-class shift/scale coefficients for one sample.
struct KappaCoeffs {
  std::vector<double> student_shift;  // k1
  std::vector<double> student_scale;  // k2
  std::vector<double> teacher_shift;  // k3
  std::vector<double> teacher_scale;  // k4

  void validate(std::size_t k) const {
    if (student_shift.size() != k || student_scale.size() != k || teacher_shift.size() != k ||
        teacher_scale.size() != k)
      throw ParameterError("KappaCoeffs: width mismatch");
    for (std::size_t i = 0; i < k; ++i)
      if (!(student_scale[i] > 0.0) || !(teacher_scale[i] > 0.0))
        throw ParameterError("KappaCoeffs: scales must be positive");
  }

  /// Equal coefficients across classes: the logit-standardisation special case.
  static KappaCoeffs standardization(std::span<const double> z, std::span<const double> v) {
    const std::size_t k = v.size();
    const double sz = std::max(stddev_of(z), kEpsilon), sv = std::max(stddev_of(v), kEpsilon);
    return {std::vector<double>(k, -mean_of(z)), std::vector<double>(k, sz), std::vector<double>(k, -mean_of(v)),
            std::vector<double>(k, sv)};
  }

  /// Standardised student; teacher shifted per class by success rates.
  static KappaCoeffs success_informed(std::span<const double> z, std::span<const double> v,
                                      std::span<const double> rates) {
    KappaCoeffs c = standardization(z, v);
    c.teacher_shift.assign(rates.begin(), rates.end());
    return c;
  }
};

inline std::vector<double> apply_shift_scale(std::span<const double> x, std::span<const double> shift,
                                             std::span<const double> scale) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] + shift[i]) / scale[i];
  return out;
}

/// Logits of a student whose transformed softmax equals the teacher's, given
/// the log-partition of its own transformed logits:
///   z_k = k2_k * (log_partition - logsumexp(f_v(v)) + f_v(v)_k) - k1_k
inline std::vector<double> ideal_student_logits(std::span<const double> v, const KappaCoeffs& c,
                                                double log_partition) {
  c.validate(v.size());
  const auto fv = apply_shift_scale(v, c.teacher_shift, c.teacher_scale);
  const double m = *std::max_element(fv.begin(), fv.end());
  double s = 0.0;
  for (double x : fv) s += std::exp(x - m);
  const double lse = m + std::log(s);
  std::vector<double> z(v.size());
  for (std::size_t k = 0; k < v.size(); ++k)
    z[k] = c.student_scale[k] * (log_partition - lse + fv[k]) - c.student_shift[k];
  return z;
}

/// d z_k / d k3_k of the ideal student: (k2_k / k4_k) * (1 - F(f_v(v))_k).
inline double ideal_student_sensitivity(std::span<const double> v, const KappaCoeffs& c, std::size_t k) {
  c.validate(v.size());
  const auto fv = apply_shift_scale(v, c.teacher_shift, c.teacher_scale);
  const auto p = nn::softmax_t(fv, 1.0);
  return c.student_scale[k] / c.teacher_scale[k] * (1.0 - p[k]);
}

struct Options {
  Mode mode = Mode::kSuccessInformed;
  double temperature = 2.0;  // fixed-T mode only
  double learning_rate = 5e-2;
  double clip_norm = 5.0;
};

/// Teacher-side target distribution for one sample. `rates` is only read in
/// success-informed mode.
inline std::vector<double> target_distribution(std::span<const double> v, std::span<const double> rates,
                                               const Options& opt) {
  switch (opt.mode) {
    case Mode::kSuccessInformed:
      return nn::softmax_t(transform_teacher(v, rates, stddev_of(v)), 1.0);
    case Mode::kLogitStandardize: {
      const std::vector<double> shift(v.size(), -mean_of(v));
      return nn::softmax_t(transform_teacher(v, shift, stddev_of(v)), 1.0);
    }
    case Mode::kFixedTemperature:
      return nn::softmax_t(v, opt.temperature);
  }
  return {};
}

struct LossGrad {
  double loss = 0.0;
  std::vector<double> grad;  // dL/dz
  bool degenerate = false;   // student logits had zero spread
};

/// KL(softmax(f_z(z)) || target) and its gradient with respect to raw z.
inline LossGrad student_loss(std::span<const double> z, std::span<const double> target, const Options& opt) {
  if (z.size() != target.size()) throw ParameterError("student_loss: width mismatch");
  LossGrad out;
  const std::size_t k = z.size();
  std::vector<double> a;
  Standardized st;
  if (opt.mode == Mode::kFixedTemperature) {
    a.resize(k);
    for (std::size_t i = 0; i < k; ++i) a[i] = z[i] / opt.temperature;
  } else {
    st = transform_student(z);
    a = st.logits;
    out.degenerate = st.degenerate;
  }
  const auto p = nn::softmax_t(a, 1.0);
  out.loss = nn::kl_div(p, target);

  // dL/da_i = p_i (log p_i - log q_i - L)
  double raw = 0.0;
  std::vector<double> lr(k);
  for (std::size_t i = 0; i < k; ++i) {
    lr[i] = std::log(std::max(p[i], kEpsilon)) - std::log(std::max(target[i], kEpsilon));
    raw += p[i] * lr[i];
  }
  std::vector<double> ga(k);
  for (std::size_t i = 0; i < k; ++i) ga[i] = p[i] * (lr[i] - raw);

  out.grad.resize(k);
  if (opt.mode == Mode::kFixedTemperature) {
    for (std::size_t i = 0; i < k; ++i) out.grad[i] = ga[i] / opt.temperature;
  } else {
    // Standardisation backward: (g - mean g - a * mean(g a)) / sd
    double mg = 0.0, mga = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      mg += ga[i];
      mga += ga[i] * a[i];
    }
    mg /= static_cast<double>(k);
    mga /= static_cast<double>(k);
    for (std::size_t i = 0; i < k; ++i) out.grad[i] = (ga[i] - mg - a[i] * mga) / st.sigma;
  }
  return out;
}

/// One teacher output to imitate.
struct Sample {
  std::vector<double> input;           // x_n
  std::vector<double> teacher_logits;  // v_n
  std::vector<double> success_rates;   // per-class shift; empty means zeros
};

struct StepResult {
  double loss = 0.0;
  bool applied = false;
  bool degenerate = false;
};

/// One SGD step of the student on the mean loss over `batch`. On a non-finite
/// loss or gradient the student is left unchanged.
inline StepResult distill_step(nn::Mlp& student, std::span<const Sample> batch, const Options& opt) {
  StepResult res;
  if (batch.empty()) return res;
  std::vector<double> grad(student.parameter_count(), 0.0);
  nn::Mlp::Cache cache;
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const Sample& s : batch) {
    if (s.teacher_logits.size() != student.output_size())
      throw ParameterError("distill_step: teacher width does not match the student head");
    const std::vector<double> zeros(s.teacher_logits.size(), 0.0);
    const std::span<const double> rates = s.success_rates.empty() ? std::span<const double>(zeros)
                                                                  : std::span<const double>(s.success_rates);
    const auto target = target_distribution(s.teacher_logits, rates, opt);
    const auto z = student.forward(s.input, cache);
    auto lg = student_loss(z, target, opt);
    res.loss += lg.loss * inv;
    res.degenerate = res.degenerate || lg.degenerate;
    for (double& g : lg.grad) g *= inv;
    student.backward(cache, lg.grad, grad);
  }
  if (!std::isfinite(res.loss)) return res;
  res.applied = student.sgd_step(grad, opt.learning_rate, opt.clip_norm);
  return res;
}

inline StepResult distill_step(nn::Mlp& student, const Sample& sample, const Options& opt) {
  return distill_step(student, std::span<const Sample>(&sample, 1), opt);
}

/// Coarse state grid for success-rate lookup: distance decile x link-margin
/// quartile (edges at 0, 10, 20 dB).
struct StateBucket {
  int distance_decile = 0;
  int margin_quartile = 0;

  static StateBucket of(double distance_fraction, double margin_db) {
    StateBucket b;
    b.distance_decile = std::clamp(static_cast<int>(std::floor(distance_fraction * 10.0)), 0, 9);
    b.margin_quartile = margin_db < 0.0 ? 0 : margin_db < 10.0 ? 1 : margin_db < 20.0 ? 2 : 3;
    return b;
  }
  std::size_t index() const { return static_cast<std::size_t>(distance_decile * 4 + margin_quartile); }
  static constexpr std::size_t kCount = 40;
};

/// Cloud-side per (state bucket, class) success rate, averaged over nodes.
/// Cells nobody has tried read 0.
class SuccessRateTable {
 public:
  explicit SuccessRateTable(std::size_t classes) : classes_(classes), cells_(StateBucket::kCount * classes) {}

  void record(std::uint32_t node, StateBucket bucket, std::size_t k, bool success) {
    Cell& c = cells_.at(bucket.index() * classes_ + k);
    auto& [ok, total] = c.per_node[node];
    ++total;
    if (success) ++ok;
    c.dirty = true;
  }

  /// Recomputes node averages for cells touched since the last refresh.
  void refresh() {
    for (Cell& c : cells_) {
      if (!c.dirty) continue;
      double s = 0.0;
      for (const auto& [node, counts] : c.per_node) s += static_cast<double>(counts.first) / counts.second;
      c.mean = c.per_node.empty() ? 0.0 : s / static_cast<double>(c.per_node.size());
      c.dirty = false;
    }
  }

  double rate(StateBucket bucket, std::size_t k) const { return cells_.at(bucket.index() * classes_ + k).mean; }

  std::vector<double> rates(StateBucket bucket) const {
    std::vector<double> r(classes_);
    for (std::size_t k = 0; k < classes_; ++k) r[k] = rate(bucket, k);
    return r;
  }

  std::size_t classes() const { return classes_; }

 private:
  struct Cell {
    std::map<std::uint32_t, std::pair<std::uint32_t, std::uint32_t>> per_node;
    double mean = 0.0;
    bool dirty = false;
  };
  std::size_t classes_;
  std::vector<Cell> cells_;
};

/// Communication accounting for logit-only transfer versus shipping the
/// whole teacher snapshot.
struct CommCounter {
  std::uint64_t logit_bytes = 0;
  std::uint64_t full_model_bytes = 0;
  std::uint64_t batches = 0;
  std::uint64_t steps = 0;
};

inline constexpr std::size_t kBytesPerLogit = 4;

}  // namespace celora::distill
