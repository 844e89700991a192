#include "tokrl/optimizer.hpp"

#include <cmath>

#include <fmt/format.h>

#include "tokrl/errors.hpp"

namespace tokrl {

double checked_norm(std::span<const double> grad) {
  double sq = 0.0;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!std::isfinite(grad[i])) {
      throw NumericalError(fmt::format("non-finite gradient {} at parameter {}", grad[i], i), i);
    }
    sq += grad[i] * grad[i];
  }
  return std::sqrt(sq);
}

Adam::Adam(std::size_t num_params, AdamConfig config)
    : config_(config), m_(num_params, 0.0), v_(num_params, 0.0) {
  if (!(config_.lr > 0.0)) throw ConfigError(fmt::format("learning rate must be > 0, got {}", config_.lr));
}

double Adam::step(std::span<double> params, std::span<double> grad) {
  if (params.size() != m_.size() || grad.size() != m_.size()) {
    throw std::invalid_argument(fmt::format("Adam: expected {} parameters, got {} / {} gradients",
                                            m_.size(), params.size(), grad.size()));
  }
  const double norm = checked_norm(grad);
  double scale = 1.0;
  if (config_.max_grad_norm > 0.0 && norm > config_.max_grad_norm) {
    scale = config_.max_grad_norm / norm;
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grad[i] * scale;
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g;
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g * g;
    if (m_[i] == 0.0) continue;
    params[i] -= config_.lr * (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + config_.eps);
  }
  return norm;
}

}  // namespace tokrl
