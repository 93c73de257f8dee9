#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace rlhf {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(std::size_t n_params, AdamConfig config);

  // params -= lr * m_hat / (sqrt(v_hat) + eps). When float_params is set the
  // updated values are rounded to the nearest float so they serialize exactly.
  void step(std::span<double> params, std::span<const double> grad,
            bool float_params = false);
  void set_lr(double lr) { config_.lr = lr; }
  double lr() const { return config_.lr; }
  std::size_t steps() const { return t_; }

 private:
  AdamConfig config_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::size_t t_ = 0;
};

}  // namespace rlhf
