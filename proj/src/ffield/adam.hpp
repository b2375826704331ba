#pragma once

#include <cstdint>
#include <vector>

#include "ffield/tensor.hpp"

namespace ffield {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-15;
};

// Adam with bias-corrected moments. Moment buffers are created lazily on the
// first step and must keep matching the parameter list order and shapes.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  // Applies one update to every parameter from its accumulated grad. Throws
  // (kNumeric) without touching any parameter if a gradient is non-finite.
  void step(const std::vector<Parameter<T>*>& params);

  std::int64_t step_count() const { return step_count_; }
  const AdamConfig& config() const { return config_; }
  void set_learning_rate(double lr) { config_.learning_rate = lr; }

  const std::vector<Tensor<T>>& first_moments() const { return m_; }
  const std::vector<Tensor<T>>& second_moments() const { return v_; }

 private:
  AdamConfig config_;
  std::int64_t step_count_ = 0;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
};

}  // namespace ffield
