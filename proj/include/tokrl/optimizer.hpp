#pragma once

#include <span>
#include <vector>

namespace tokrl {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double max_grad_norm = 0.0;  // <= 0 disables clipping
};

// Adam with global gradient-norm clipping applied before the moment update.
class Adam {
 public:
  Adam(std::size_t num_params, AdamConfig config);

  // Updates params in place and returns the pre-clip gradient norm.
  // Throws NumericalError naming the first non-finite gradient entry.
  double step(std::span<double> params, std::span<double> grad);

  const AdamConfig& config() const noexcept { return config_; }
  std::size_t steps() const noexcept { return t_; }

 private:
  AdamConfig config_;
  std::vector<double> m_, v_;
  std::size_t t_ = 0;
};

// L2 norm; NumericalError on the first non-finite entry.
double checked_norm(std::span<const double> grad);

}  // namespace tokrl
