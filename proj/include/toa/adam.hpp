#pragma once

#include <cstddef>
#include <vector>

#include "toa/matrix.hpp"

namespace toa {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

// Adam with bias correction over a fixed list of parameter tensors.
class Adam {
 public:
  Adam(AdamConfig config, std::vector<Matrix*> params);

  // grads[i] must match params[i] in shape.
  void step(const std::vector<const Matrix*>& grads);
  std::size_t steps() const { return t_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  std::vector<Matrix*> params_;
  std::vector<Matrix> m_, v_;
  std::size_t t_ = 0;
};

// Global L2 norm over all tensors.
double global_norm(const std::vector<const Matrix*>& tensors);

// Rescales the tensors so their global norm is at most max_norm and returns
// the norm measured before clipping. max_norm <= 0 disables clipping.
double clip_global_norm(const std::vector<Matrix*>& tensors, double max_norm);

}  // namespace toa
