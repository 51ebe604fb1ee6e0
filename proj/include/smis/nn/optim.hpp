#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "smis/nn/layers.hpp"

namespace smis::nn {

struct OptimizerConfig {
  std::string name = "adam";  // "adam" | "ranger"
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Lookahead (ranger only)
  int lookahead_k = 6;
  double lookahead_alpha = 0.5;
};

// Adam, or Ranger (rectified Adam wrapped in Lookahead). State is laid out
// per parameter so it can be checkpointed next to the weights.
template <typename T>
class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(ParamRefs<T> params, OptimizerConfig cfg) : params_(std::move(params)), cfg_(std::move(cfg)) {
    if (cfg_.name != "adam" && cfg_.name != "ranger") throw ConfigError("unknown optimizer: " + cfg_.name);
    for (auto* p : params_) {
      m_.emplace_back(p->size(), T(0));
      v_.emplace_back(p->size(), T(0));
      if (cfg_.name == "ranger") slow_.emplace_back(p->value.begin(), p->value.end());
    }
  }

  // Applies one update using the accumulated gradients, scaled by grad_scale.
  void step(T grad_scale = T(1)) {
    ++t_;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double bc1 = 1.0 - std::pow(b1, t_);
    const double bc2 = 1.0 - std::pow(b2, t_);
    bool rectified = true;
    double rect = 1.0;
    if (cfg_.name == "ranger") {
      const double rho_inf = 2.0 / (1.0 - b2) - 1.0;
      const double rho_t = rho_inf - 2.0 * t_ * std::pow(b2, t_) / bc2;
      if (rho_t > 5.0) {
        rect = std::sqrt((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));
      } else {
        rectified = false;
      }
    }
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = *params_[k];
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double g = static_cast<double>(p.grad[i]) * grad_scale;
        m[i] = static_cast<T>(b1 * m[i] + (1.0 - b1) * g);
        v[i] = static_cast<T>(b2 * v[i] + (1.0 - b2) * g * g);
        const double mhat = m[i] / bc1;
        double update;
        if (rectified) {
          update = rect * mhat / (std::sqrt(v[i] / bc2) + cfg_.eps);
        } else {
          update = mhat;
        }
        p.value[i] = static_cast<T>(p.value[i] - cfg_.learning_rate * update);
      }
    }
    if (cfg_.name == "ranger" && t_ % cfg_.lookahead_k == 0) {
      for (std::size_t k = 0; k < params_.size(); ++k) {
        auto& p = *params_[k];
        for (std::size_t i = 0; i < p.size(); ++i) {
          slow_[k][i] = static_cast<T>(slow_[k][i] + cfg_.lookahead_alpha * (p.value[i] - slow_[k][i]));
          p.value[i] = slow_[k][i];
        }
      }
    }
  }

  long long steps() const { return t_; }
  const OptimizerConfig& config() const { return cfg_; }
  std::vector<std::vector<T>>& first_moments() { return m_; }
  std::vector<std::vector<T>>& second_moments() { return v_; }
  void set_steps(long long t) { t_ = t; }

 private:
  ParamRefs<T> params_;
  OptimizerConfig cfg_;
  std::vector<std::vector<T>> m_, v_, slow_;
  long long t_ = 0;
};

}  // namespace smis::nn
