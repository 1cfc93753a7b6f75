// SPDX-License-Identifier: Apache-2.0
//
// Small fully-connected network with analytic backprop, plus the softmax and
// divergence utilities shared by the teacher, student, critic and actor.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "celora/common.hpp"

namespace celora::nn {

enum class Activation : std::uint8_t { kIdentity = 0, kTanh = 1, kRelu = 2 };

inline double activate(Activation a, double x) {
  switch (a) {
    case Activation::kTanh: return std::tanh(x);
    case Activation::kRelu: return x > 0.0 ? x : 0.0;
    case Activation::kIdentity: break;
  }
  return x;
}

// Derivative expressed through the pre-activation `z` and output `y`.
inline double activate_grad(Activation a, double z, double y) {
  switch (a) {
    case Activation::kTanh: return 1.0 - y * y;
    case Activation::kRelu: return z > 0.0 ? 1.0 : 0.0;
    case Activation::kIdentity: break;
  }
  return 1.0;
}

class Mlp {
 public:
  /// Forward-pass intermediates needed by backward().
  struct Cache {
    std::vector<std::vector<double>> pre;   // per layer, pre-activation
    std::vector<std::vector<double>> post;  // post[0] is the input
  };

  Mlp() = default;

  /// `sizes` = {input, hidden..., output}. Hidden layers use `hidden`, the
  /// output layer is linear. Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  Mlp(std::vector<std::size_t> sizes, Activation hidden, Rng& rng) : sizes_(std::move(sizes)) {
    if (sizes_.size() < 2) throw ParameterError("Mlp needs at least input and output sizes");
    for (auto s : sizes_)
      if (s == 0) throw ParameterError("Mlp layer sizes must be positive");
    activations_.assign(sizes_.size() - 1, hidden);
    activations_.back() = Activation::kIdentity;
    layout();
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(sizes_[l]));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (std::size_t i = weight_offset_[l]; i < bias_offset_[l] + sizes_[l + 1]; ++i) params_[i] = dist(rng);
    }
  }

  std::size_t input_size() const { return sizes_.front(); }
  std::size_t output_size() const { return sizes_.back(); }
  std::size_t parameter_count() const { return params_.size(); }
  const std::vector<std::size_t>& sizes() const { return sizes_; }
  const std::vector<Activation>& activations() const { return activations_; }

  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }

  std::vector<double> forward(std::span<const double> x) const {
    Cache c;
    return forward(x, c);
  }

  std::vector<double> forward(std::span<const double> x, Cache& cache) const {
    if (x.size() != input_size()) throw ParameterError("Mlp::forward: input width mismatch");
    const std::size_t layers = sizes_.size() - 1;
    cache.pre.resize(layers);
    cache.post.resize(layers + 1);
    cache.post[0].assign(x.begin(), x.end());
    for (std::size_t l = 0; l < layers; ++l) {
      const std::size_t in = sizes_[l], out = sizes_[l + 1];
      const double* w = &params_[weight_offset_[l]];
      const double* b = &params_[bias_offset_[l]];
      const auto& a = cache.post[l];
      auto& z = cache.pre[l];
      auto& y = cache.post[l + 1];
      z.resize(out);
      y.resize(out);
      for (std::size_t o = 0; o < out; ++o) {
        double s = b[o];
        const double* row = w + o * in;
        for (std::size_t i = 0; i < in; ++i) s += row[i] * a[i];
        z[o] = s;
        y[o] = activate(activations_[l], s);
      }
    }
    return cache.post.back();
  }

  /// Accumulates dL/dparams into `grad` (must be parameter_count() long) for
  /// the upstream gradient dL/doutput. Returns dL/dinput.
  std::vector<double> backward(const Cache& cache, std::span<const double> grad_out,
                               std::span<double> grad) const {
    if (grad_out.size() != output_size()) throw ParameterError("Mlp::backward: gradient width mismatch");
    if (grad.size() != parameter_count()) throw ParameterError("Mlp::backward: parameter gradient size mismatch");
    if (cache.post.size() != sizes_.size()) throw ParameterError("Mlp::backward: forward pass not cached");
    std::vector<double> delta(grad_out.begin(), grad_out.end());
    for (std::size_t l = sizes_.size() - 1; l-- > 0;) {
      const std::size_t in = sizes_[l], out = sizes_[l + 1];
      for (std::size_t o = 0; o < out; ++o)
        delta[o] *= activate_grad(activations_[l], cache.pre[l][o], cache.post[l + 1][o]);
      const double* w = &params_[weight_offset_[l]];
      double* gw = &grad[weight_offset_[l]];
      double* gb = &grad[bias_offset_[l]];
      const auto& a = cache.post[l];
      std::vector<double> prev(in, 0.0);
      for (std::size_t o = 0; o < out; ++o) {
        const double d = delta[o];
        if (d == 0.0) continue;
        gb[o] += d;
        double* grow = gw + o * in;
        const double* row = w + o * in;
        for (std::size_t i = 0; i < in; ++i) {
          grow[i] += d * a[i];
          prev[i] += d * row[i];
        }
      }
      delta = std::move(prev);
    }
    return delta;
  }

  /// Plain SGD with global-norm clipping. Leaves the parameters untouched and
  /// returns false when the gradient is not finite.
  bool sgd_step(std::span<const double> grad, double learning_rate, double clip_norm) {
    if (grad.size() != parameter_count()) throw ParameterError("Mlp::sgd_step: gradient size mismatch");
    double sq = 0.0;
    for (double g : grad) sq += g * g;
    if (!std::isfinite(sq)) return false;
    const double norm = std::sqrt(sq);
    const double scale = (clip_norm > 0.0 && norm > clip_norm) ? clip_norm / norm : 1.0;
    std::vector<double> next(params_);
    for (std::size_t i = 0; i < next.size(); ++i) next[i] -= learning_rate * scale * grad[i];
    if (!std::all_of(next.begin(), next.end(), [](double v) { return std::isfinite(v); })) return false;
    params_ = std::move(next);
    return true;
  }

  bool all_finite() const {
    return std::all_of(params_.begin(), params_.end(), [](double v) { return std::isfinite(v); });
  }

  /// Snapshot: "CEMLP1", u32 layer count, u32 sizes, u8 activations, then
  /// float64 parameters in host byte order.
  std::vector<std::uint8_t> serialize() const {
    std::vector<std::uint8_t> out(kMagic, kMagic + sizeof(kMagic));
    auto put = [&out](const void* p, std::size_t n) {
      const auto* b = static_cast<const std::uint8_t*>(p);
      out.insert(out.end(), b, b + n);
    };
    const auto n = static_cast<std::uint32_t>(sizes_.size());
    put(&n, sizeof n);
    for (auto s : sizes_) {
      const auto v = static_cast<std::uint32_t>(s);
      put(&v, sizeof v);
    }
    for (auto a : activations_) put(&a, 1);
    put(params_.data(), params_.size() * sizeof(double));
    return out;
  }

  static Mlp deserialize(std::span<const std::uint8_t> bytes) {
    std::size_t pos = 0;
    auto take = [&](void* dst, std::size_t n) {
      if (pos + n > bytes.size()) throw ParameterError("Mlp snapshot truncated");
      std::memcpy(dst, bytes.data() + pos, n);
      pos += n;
    };
    char magic[sizeof(kMagic)];
    take(magic, sizeof magic);
    if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw ParameterError("not an Mlp snapshot");
    std::uint32_t n = 0;
    take(&n, sizeof n);
    if (n < 2 || n > 64) throw ParameterError("Mlp snapshot: bad layer count");
    Mlp m;
    m.sizes_.resize(n);
    for (auto& s : m.sizes_) {
      std::uint32_t v = 0;
      take(&v, sizeof v);
      s = v;
    }
    m.activations_.resize(n - 1);
    for (auto& a : m.activations_) take(&a, 1);
    m.layout();
    take(m.params_.data(), m.params_.size() * sizeof(double));
    if (pos != bytes.size()) throw ParameterError("Mlp snapshot: trailing bytes");
    return m;
  }

  std::size_t snapshot_bytes() const {
    return sizeof(kMagic) + 4 + 4 * sizes_.size() + activations_.size() + params_.size() * sizeof(double);
  }

 private:
  static constexpr char kMagic[6] = {'C', 'E', 'M', 'L', 'P', '1'};

  void layout() {
    weight_offset_.clear();
    bias_offset_.clear();
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      weight_offset_.push_back(off);
      off += sizes_[l] * sizes_[l + 1];
      bias_offset_.push_back(off);
      off += sizes_[l + 1];
    }
    params_.assign(off, 0.0);
  }

  std::vector<std::size_t> sizes_;
  std::vector<Activation> activations_;
  std::vector<std::size_t> weight_offset_;
  std::vector<std::size_t> bias_offset_;
  std::vector<double> params_;
};

/// exp(x/T) / sum exp(x/T), max-subtracted.
inline std::vector<double> softmax_t(std::span<const double> x, double temperature = 1.0) {
  if (!(temperature > 0.0)) throw ParameterError("softmax temperature must be positive");
  if (x.empty()) return {};
  const double m = *std::max_element(x.begin(), x.end());
  std::vector<double> p(x.size());
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    p[i] = std::exp((x[i] - m) / temperature);
    s += p[i];
  }
  for (double& v : p) v /= s;
  return p;
}

/// Softmax restricted to entries with mask[i] != 0; masked entries get 0.
inline std::vector<double> masked_softmax(std::span<const double> x, std::span<const std::uint8_t> mask) {
  if (mask.size() != x.size()) throw ParameterError("masked_softmax: mask width mismatch");
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < x.size(); ++i)
    if (mask[i]) m = std::max(m, x[i]);
  if (!std::isfinite(m)) throw ParameterError("masked_softmax: every entry is masked");
  std::vector<double> p(x.size(), 0.0);
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!mask[i]) continue;
    p[i] = std::exp(x[i] - m);
    s += p[i];
  }
  for (double& v : p) v /= s;
  return p;
}

/// KL(p || q) with log arguments floored at kEpsilon.
inline double kl_div(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ParameterError("kl_div: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    s += p[i] * (std::log(std::max(p[i], kEpsilon)) - std::log(std::max(q[i], kEpsilon)));
  }
  return std::max(s, 0.0);
}

inline std::size_t argmax(std::span<const double> x) {
  return static_cast<std::size_t>(std::max_element(x.begin(), x.end()) - x.begin());
}

}  // namespace celora::nn
