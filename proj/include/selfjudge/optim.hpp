#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "selfjudge/error.hpp"

namespace selfjudge {

enum class Schedule { constant, cosine, linear };

inline std::string_view to_string(Schedule s) {
  switch (s) {
    case Schedule::constant: return "constant";
    case Schedule::cosine: return "cosine";
    case Schedule::linear: return "linear";
  }
  return "constant";
}

inline Schedule schedule_from_string(std::string_view s) {
  if (s == "constant") return Schedule::constant;
  if (s == "cosine") return Schedule::cosine;
  if (s == "linear") return Schedule::linear;
  throw ConfigError("unknown schedule '" + std::string(s) + "'");
}

struct OptimConfig {
  double learning_rate = 2e-5;
  Schedule schedule = Schedule::cosine;
  double warmup_ratio = 0.03;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double grad_clip = 1.0;  // global L2 norm; 0 disables clipping

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (!(warmup_ratio >= 0.0 && warmup_ratio <= 1.0)) throw ConfigError("warmup_ratio must lie in [0, 1]");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
      throw ConfigError("Adam betas must lie in [0, 1)");
    }
    if (!(grad_clip >= 0.0)) throw ConfigError("grad_clip must be >= 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  }

  /// Learning rate for optimizer step `step` (0-based) of `total` steps:
  /// linear warmup over ceil(warmup_ratio·total) steps, then the schedule.
  double lr_at(std::size_t step, std::size_t total) const {
    const auto warm = static_cast<std::size_t>(std::ceil(warmup_ratio * static_cast<double>(total)));
    if (step < warm) return learning_rate * static_cast<double>(step + 1) / static_cast<double>(warm);
    const double span = static_cast<double>(total > warm ? total - warm : 1);
    const double progress = std::min(1.0, static_cast<double>(step - warm) / span);
    switch (schedule) {
      case Schedule::constant: return learning_rate;
      case Schedule::cosine: return learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
      case Schedule::linear: return learning_rate * (1.0 - progress);
    }
    return learning_rate;
  }
};

/// AdamW with bias correction and decoupled weight decay.
class AdamW {
 public:
  AdamW(std::size_t n, const OptimConfig& cfg) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) { cfg_.validate(); }

  /// Applies one update; returns the gradient norm before clipping.
  double step(std::span<float> params, std::span<float> grad, double lr) {
    double sq = 0.0;
    for (float g : grad) sq += static_cast<double>(g) * g;
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw TrainingError("non-finite gradient norm");
    const double scale = (cfg_.grad_clip > 0.0 && norm > cfg_.grad_clip) ? cfg_.grad_clip / norm : 1.0;
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double g = grad[i] * scale;
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g * g;
      const double update = (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + cfg_.eps);
      const double p = params[i] * (1.0 - lr * cfg_.weight_decay) - lr * update;
      params[i] = static_cast<float>(p);
    }
    return norm;
  }

  std::size_t steps() const noexcept { return t_; }

 private:
  OptimConfig cfg_;
  std::vector<double> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace selfjudge
