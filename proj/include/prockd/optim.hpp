#pragma once

#include <cstddef>
#include <vector>

#include "prockd/params.hpp"

namespace prockd {

struct AdamWConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

// Adam with decoupled weight decay. Parameters that do not require a gradient
// (frozen) are skipped entirely; each parameter's update depends only on its
// own gradient history.
class AdamW {
 public:
  AdamW(ParamList params, AdamWConfig config);

  void step();
  void zero_grad();
  // L2 norm of all gradients currently held by trainable parameters.
  double grad_norm() const;
  std::size_t steps() const { return step_; }
  const AdamWConfig& config() const { return config_; }

 private:
  ParamList params_;
  AdamWConfig config_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t step_ = 0;
};

}  // namespace prockd
