#pragma once

#include <vector>

#include "cardiofuse/tensor/layers.hpp"

namespace cardiofuse::train {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double weight_decay = 0.0;
};

// Adam with bias correction over a fixed parameter list. Gradients are
// scaled by grad_scale before use, then cleared.
class Adam {
 public:
  Adam(std::vector<Var> params, AdamConfig cfg);
  void step(double grad_scale = 1.0);
  void zero_grad();
  std::size_t steps() const { return t_; }
  AdamConfig& config() { return cfg_; }

 private:
  std::vector<Var> params_;
  std::vector<NdArray> m_, v_;
  AdamConfig cfg_;
  std::size_t t_ = 0;
};

}  // namespace cardiofuse::train
