// SPDX-License-Identifier: Apache-2.0
//
// Cloud-side parameter policy used as the distillation teacher and as the
// source of control proposals. This is a stand-in: a small network learns
// the delivery probability of each uplink SF/power class from the class
// margin towards the best gateway, and the policy scores classes by
//
//   u_k = P(delivered | k) - energy_weight * energy_k
//
// with logits u_k / policy_temperature. Any model that maps node features to
// 48 logits can replace it.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "celora/action_space.hpp"
#include "celora/approximator.hpp"
#include "celora/common.hpp"
#include "celora/phy.hpp"
#include "celora/scheduler.hpp"

namespace celora::teacher {

struct TeacherConfig {
  std::vector<std::size_t> model_hidden{16};
  double learning_rate = 5e-2;
  double clip_norm = 5.0;
  std::size_t batch_size = 32;
  std::size_t replay_capacity = 10000;
  double epsilon = 0.1;             // proposal exploration
  double explore_margin_db = 5.0;   // exploration only among classes with at least this margin
  double min_margin_db = 0.0;       // classes below this margin count as certain losses
  int updates_per_slot = 4;
  double energy_weight = 0.3;
  double policy_temperature = 0.05;
  double downlink_margin_db = 5.0;  // required margin when picking the downlink SF
  int proposal_window = 2;
};

/// What the cloud knows about a node when it proposes or learns.
struct Context {
  std::vector<double> features;
  double best_path_loss_db = 0.0;  // towards the strongest gateway
};

struct Experience {
  double margin_db = 0.0;
  std::size_t tx_class = 0;
  bool delivered = false;
};

class Teacher {
 public:
  Teacher(ActionSpace space, phy::RadioParams radio, phy::SfTable table, double noise_floor_dbm,
          double gateway_power_dbm, int payload_bytes, TeacherConfig cfg, Rng& init_rng)
      : space_(std::move(space)),
        table_(table),
        noise_floor_dbm_(noise_floor_dbm),
        gateway_power_dbm_(gateway_power_dbm),
        cfg_(std::move(cfg)),
        replay_(cfg_.replay_capacity) {
    if (!(cfg_.policy_temperature > 0.0)) throw ParameterError("policy temperature must be positive");
    std::vector<std::size_t> sizes{class_feature_size()};
    sizes.insert(sizes.end(), cfg_.model_hidden.begin(), cfg_.model_hidden.end());
    sizes.push_back(1);
    model_ = nn::Mlp(sizes, nn::Activation::kTanh, init_rng);

    // Energy per uplink of each class as a fraction of the costliest one.
    energy_.resize(space_.tx_count());
    for (std::size_t k = 0; k < space_.tx_count(); ++k) {
      const TxChoice t = space_.tx_at(k);
      energy_[k] = dbm_to_mw(t.tx_power_dbm) * phy::airtime(payload_bytes, t.uplink_sf, radio);
    }
    const double emax = *std::max_element(energy_.begin(), energy_.end());
    for (double& e : energy_) e /= emax;
  }

  std::size_t class_feature_size() const { return space_.uplink_sfs.size() + 2; }

  double energy_norm(std::size_t k) const { return energy_.at(k); }

  /// Uplink margin towards the best gateway.
  double margin_db(double best_path_loss_db, std::size_t k) const {
    const TxChoice t = space_.tx_at(k);
    return phy::link_margin_db({t.tx_power_dbm, best_path_loss_db, noise_floor_dbm_}, t.uplink_sf, table_);
  }

  /// Clamped margin, SF one-hot, scaled power.
  std::vector<double> class_features(double margin, std::size_t k) const {
    const TxChoice t = space_.tx_at(k);
    std::vector<double> x;
    x.reserve(class_feature_size());
    x.push_back(std::clamp(margin, -30.0, 30.0) / 10.0);
    for (int u : space_.uplink_sfs) x.push_back(u == t.uplink_sf ? 1.0 : 0.0);
    x.push_back(t.tx_power_dbm / 14.0);
    return x;
  }

  double success_probability(double best_path_loss_db, std::size_t k) const {
    const double m = margin_db(best_path_loss_db, k);
    if (m < cfg_.min_margin_db) return 0.0;
    const double z = model_.forward(class_features(m, k))[0];
    return 1.0 / (1.0 + std::exp(-z));
  }

  std::vector<double> utilities(const Context& ctx) const {
    std::vector<double> u(space_.tx_count());
    for (std::size_t k = 0; k < u.size(); ++k)
      u[k] = success_probability(ctx.best_path_loss_db, k) - cfg_.energy_weight * energy_[k];
    return u;
  }

  std::vector<double> logits(const Context& ctx) const {
    auto z = utilities(ctx);
    for (double& v : z) v /= cfg_.policy_temperature;
    return z;
  }

  /// Best class. With probability epsilon, a uniform pick among the classes
  /// whose margin clears `explore_margin_db` instead.
  TxChoice propose_tx(const Context& ctx, Rng& rng, bool explore = true) const {
    std::size_t k = nn::argmax(utilities(ctx));
    if (explore && cfg_.epsilon > 0.0) {
      std::uniform_real_distribution<double> u(0.0, 1.0);
      if (u(rng) < cfg_.epsilon) {
        std::vector<std::size_t> safe;
        for (std::size_t c = 0; c < space_.tx_count(); ++c)
          if (margin_db(ctx.best_path_loss_db, c) >= cfg_.explore_margin_db) safe.push_back(c);
        if (!safe.empty()) {
          std::uniform_int_distribution<std::size_t> pick(0, safe.size() - 1);
          k = safe[pick(rng)];
        }
      }
    }
    return space_.tx_at(k);
  }

  /// Lowest downlink SF whose margin towards the node meets the target.
  int propose_downlink_sf(double path_loss_db) const {
    for (int d : space_.downlink_sfs) {
      const double rx = gateway_power_dbm_ - path_loss_db;
      if (rx - table_.sensitivity(d) >= cfg_.downlink_margin_db &&
          rx - noise_floor_dbm_ - table_.snr_threshold(d) >= cfg_.downlink_margin_db)
        return d;
    }
    return space_.downlink_sfs.back();
  }

  ActionCombo propose(const Context& ctx, Rng& rng, bool explore = true) const {
    const TxChoice t = propose_tx(ctx, rng, explore);
    int w = cfg_.proposal_window;
    if (std::find(space_.windows.begin(), space_.windows.end(), w) == space_.windows.end()) w = space_.windows.front();
    return {t.uplink_sf, t.tx_power_dbm, propose_downlink_sf(ctx.best_path_loss_db), w};
  }

  void observe(double best_path_loss_db, std::size_t k, bool delivered) {
    replay_.push({margin_db(best_path_loss_db, k), k, delivered});
    ++observations_;
  }

  struct TrainResult {
    double loss = 0.0;
    bool trained = false;
  };

  /// `updates_per_slot` logistic-loss steps, each on a fresh batch.
  TrainResult train(Rng& rng) {
    TrainResult res;
    if (replay_.size() < cfg_.batch_size) return res;
    for (int u = 0; u < std::max(cfg_.updates_per_slot, 1); ++u) res = train_once(rng);
    ++train_steps_;
    return res;
  }

  TrainResult train_once(Rng& rng) {
    TrainResult res;
    const double inv = 1.0 / static_cast<double>(cfg_.batch_size);
    std::vector<double> grad(model_.parameter_count(), 0.0);
    nn::Mlp::Cache cache;
    for (const Experience* e : replay_.sample(cfg_.batch_size, rng)) {
      const double z = model_.forward(class_features(e->margin_db, e->tx_class), cache)[0];
      const double p = 1.0 / (1.0 + std::exp(-z));
      const double y = e->delivered ? 1.0 : 0.0;
      res.loss -= inv * (y * std::log(std::max(p, kEpsilon)) + (1.0 - y) * std::log(std::max(1.0 - p, kEpsilon)));
      const double g = inv * (p - y);
      model_.backward(cache, std::span<const double>(&g, 1), grad);
    }
    if (std::isfinite(res.loss)) model_.sgd_step(grad, cfg_.learning_rate, cfg_.clip_norm);
    res.trained = true;
    return res;
  }

  const nn::Mlp& model() const { return model_; }
  const ActionSpace& space() const { return space_; }
  const TeacherConfig& config() const { return cfg_; }
  std::uint64_t observations() const { return observations_; }
  std::uint64_t train_steps() const { return train_steps_; }

 private:
  ActionSpace space_;
  phy::SfTable table_;
  double noise_floor_dbm_;
  double gateway_power_dbm_;
  TeacherConfig cfg_;
  sched::ReplayBuffer<Experience> replay_;
  nn::Mlp model_;
  std::vector<double> energy_;
  std::uint64_t observations_ = 0;
  std::uint64_t train_steps_ = 0;
};

}  // namespace celora::teacher
