#pragma once

#include <cstdint>
#include <vector>

#include "efoent/tensor.hpp"

namespace efoent {

// Effective learning rate under linear warmup: base * min(1, step/warmup).
// Steps count from 1; warmup <= 0 means no warmup.
double warmup_lr(double base_lr, int64_t step, int64_t warmup);

// Adam over an ordered parameter list. Moment buffers are addressed by list
// position, so the caller must pass the same parameters in the same order on
// every step.
template <class S>
class Adam {
 public:
  Adam(double base_lr, int64_t warmup, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);

  // Applies one update in place. grads[i] must match params[i] in size.
  // Parameters whose gradient is identically zero stay bit-identical.
  void step(std::vector<Tensor<S>>& params, const std::vector<std::vector<S>>& grads);

  int64_t steps_taken() const { return step_; }
  double last_lr() const { return last_lr_; }

 private:
  double base_lr_, beta1_, beta2_, eps_;
  int64_t warmup_;
  int64_t step_ = 0;
  double last_lr_ = 0.0;
  std::vector<std::vector<double>> m_, v_;  // first and second moments
};

}  // namespace efoent
