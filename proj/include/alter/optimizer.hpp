#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <utility>
#include <vector>

namespace alter {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double grad_clip = 1.0;  // global norm; <= 0 disables
  int64_t warmup_steps = 0;
};

using TensorSpans = std::vector<std::pair<double*, int64_t>>;
using ConstTensorSpans = std::vector<std::pair<const double*, int64_t>>;

class AdamW {
 public:
  AdamW(const AdamWConfig& cfg, int64_t param_count);

  // One update over matching spans. Returns false and leaves everything
  // untouched (including the step count) when the gradient is non-finite.
  bool step(const TensorSpans& params, const ConstTensorSpans& grads);

  double effective_lr(int64_t step_index) const;  // linear warmup ramp
  int64_t steps_taken() const { return steps_; }

  // Exposed for checkpointing.
  Eigen::VectorXd& moment1() { return m_; }
  Eigen::VectorXd& moment2() { return v_; }
  void set_steps_taken(int64_t n) { steps_ = n; }

 private:
  AdamWConfig cfg_;
  int64_t steps_ = 0;
  Eigen::VectorXd m_, v_;
};

}  // namespace alter
