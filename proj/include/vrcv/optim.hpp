#pragma once

#include <span>
#include <string>
#include <vector>

#include "vrcv/tensor.hpp"

namespace vrcv::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam. Moment accumulators mirror parameter shapes and are
/// allocated on the first step.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  /// One update in place. Throws std::runtime_error naming the offending
  /// parameter if its gradient is non-finite.
  void step(std::span<Tensor* const> params, std::span<const Tensor> grads,
            std::span<const std::string> names);

  long steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace vrcv::nn
