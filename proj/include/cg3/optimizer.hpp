#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "cg3/autodiff.hpp"
#include "cg3/errors.hpp"

namespace cg3 {

struct AdamConfig {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // L2 penalty coefficient, added to the gradient of parameters flagged `decay`.
  double weight_decay = 5e-4;

  void validate() const {
    if (!(lr > 0.0)) throw ValidationError("learning rate must be positive");
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0))
      throw ValidationError("moment decays must lie in (0,1)");
    if (!(epsilon > 0.0)) throw ValidationError("epsilon must be positive");
    if (weight_decay < 0.0) throw ValidationError("weight decay must be non-negative");
  }
};

/// Adam with bias-corrected moments. Moment buffers are bound positionally to the
/// parameter list given to the first step(); later calls must pass the same list.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

  void step(std::span<Parameter* const> params) {
    if (first_.empty()) {
      for (const Parameter* p : params) {
        first_.emplace_back(p->value.rows(), p->value.cols());
        second_.emplace_back(p->value.rows(), p->value.cols());
      }
    }
    if (first_.size() != params.size())
      throw UsageError("Adam::step called with a different parameter list");
    for (std::size_t k = 0; k < params.size(); ++k) {
      const Parameter& p = *params[k];
      if (!first_[k].same_shape(p.value))
        throw UsageError("moment buffer shape mismatch for parameter " + p.name);
      if (p.grad.same_shape(p.value) && !p.grad.all_finite())
        throw TrainingError("non-finite gradient in parameter " + p.name);
    }

    ++steps_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      Parameter& p = *params[k];
      if (!p.grad.same_shape(p.value)) p.zero_grad();
      auto w = p.value.values();
      auto g = p.grad.values();
      auto m = first_[k].values();
      auto v = second_[k].values();
      const double decay = p.decay ? cfg_.weight_decay : 0.0;
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i] + decay * w[i];
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
        w[i] -= cfg_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.epsilon);
      }
      p.zero_grad();
    }
  }

  const AdamConfig& config() const noexcept { return cfg_; }
  std::size_t steps() const noexcept { return steps_; }

 private:
  AdamConfig cfg_;
  std::vector<Matrix> first_;
  std::vector<Matrix> second_;
  std::size_t steps_ = 0;
};

}  // namespace cg3
