#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "dscale/core/errors.hpp"
#include "dscale/core/tape.hpp"

namespace dscale::train {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with decoupled weight decay. The decay path multiplies each decaying
// parameter by (1 - wd) independently of the gradient-driven update, so a
// zero-gradient step contracts it by exactly that factor. Parameters flagged
// decay=false (biases, norm scales/offsets) skip decay. Elementwise math runs
// in double regardless of the parameter scalar type.
template <class S>
class AdamW {
 public:
  explicit AdamW(std::vector<Parameter<S>*> params, AdamConfig cfg = {})
      : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto* p : params_) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }

  void step(double lr, double wd) {
    if (lr <= 0.0) throw ConfigError("adamw: learning rate must be positive");
    if (wd < 0.0) throw ConfigError("adamw: weight decay must be nonnegative");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Parameter<S>& p = *params_[i];
      const double keep = p.decay ? 1.0 - wd : 1.0;
      for (std::size_t j = 0; j < p.numel(); ++j) {
        const double g = static_cast<double>(p.grad[j]);
        const double m = cfg_.beta1 * static_cast<double>(m_[i][j]) + (1.0 - cfg_.beta1) * g;
        const double v = cfg_.beta2 * static_cast<double>(v_[i][j]) + (1.0 - cfg_.beta2) * g * g;
        m_[i][j] = static_cast<S>(m);
        v_[i][j] = static_cast<S>(v);
        const double update = lr * (m / bc1) / (std::sqrt(v / bc2) + cfg_.eps);
        p.value[j] = static_cast<S>(keep * static_cast<double>(p.value[j]) - update);
      }
    }
  }

  std::int64_t steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  std::vector<Parameter<S>*> params_;
  std::vector<Tensor<S>> m_, v_;
  AdamConfig cfg_;
  std::int64_t t_ = 0;
};

}  // namespace dscale::train
