#include "rlhf/common/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace rlhf {

Adam::Adam(std::size_t n_params, AdamConfig config)
    : config_(config), m_(n_params, 0.0), v_(n_params, 0.0) {}

void Adam::step(std::span<double> params, std::span<const double> grad,
                bool float_params) {
  if (params.size() != m_.size() || grad.size() != m_.size())
    throw std::invalid_argument("adam: parameter/gradient size mismatch");
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grad[i];
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g;
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g * g;
    const double update =
        config_.lr * (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + config_.eps);
    if (update == 0.0) continue;
    params[i] -= update;
    if (float_params) params[i] = static_cast<double>(static_cast<float>(params[i]));
  }
}

}  // namespace rlhf
