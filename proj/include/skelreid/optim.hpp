#pragma once

#include "skelreid/tensor.hpp"

#include <cmath>
#include <span>
#include <stdexcept>

namespace skelreid {

struct OptimConfig {
  double learning_rate = 1e-2;
  double momentum = 0.9;
  double decay_factor = 0.1;
  int decay_every = 10;
  bool nesterov = true;

  void validate() const {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must be in [0, 1)");
    if (!(decay_factor > 0.0 && decay_factor <= 1.0)) {
      throw std::invalid_argument("decay_factor must be in (0, 1]");
    }
    if (decay_every < 1) throw std::invalid_argument("decay_every must be >= 1");
  }
};

/// Step schedule: learning_rate * decay_factor^floor(epoch / decay_every).
inline double scheduled_learning_rate(const OptimConfig& cfg, int epoch) {
  return cfg.learning_rate * std::pow(cfg.decay_factor, epoch / cfg.decay_every);
}

/// One SGD step over every parameter using its populated grad.
///
/// Momentum-buffer Nesterov form:
///   v <- mu v - lr g
///   theta <- theta + mu v - lr g     (nesterov)
///   theta <- theta + v               (plain momentum)
template <typename Scalar>
void sgd_nesterov_step(std::span<ParamTensor<Scalar>* const> params, const OptimConfig& cfg, double lr) {
  const Scalar mu = static_cast<Scalar>(cfg.momentum);
  const Scalar rate = static_cast<Scalar>(lr);
  for (ParamTensor<Scalar>* p : params) {
    auto theta = p->value.values().array();
    auto v = p->velocity.values().array();
    const auto g = p->grad.values().array();
    v = mu * v - rate * g;
    if (cfg.nesterov) {
      theta += mu * v - rate * g;
    } else {
      theta += v;
    }
  }
}

template <typename Scalar>
void sgd_nesterov_step(std::span<ParamTensor<Scalar>* const> params, const OptimConfig& cfg) {
  sgd_nesterov_step(params, cfg, cfg.learning_rate);
}

}  // namespace skelreid
