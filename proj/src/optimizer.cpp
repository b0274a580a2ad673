#include "alter/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace alter {

AdamW::AdamW(const AdamWConfig& cfg, int64_t param_count) : cfg_(cfg) {
  if (!(cfg.lr > 0.0)) throw std::invalid_argument("adamw: lr must be positive");
  if (param_count < 0) throw std::invalid_argument("adamw: bad param count");
  m_ = Eigen::VectorXd::Zero(param_count);
  v_ = Eigen::VectorXd::Zero(param_count);
}

double AdamW::effective_lr(int64_t step_index) const {
  if (cfg_.warmup_steps <= 0) return cfg_.lr;
  double ramp = static_cast<double>(step_index) / cfg_.warmup_steps;
  return cfg_.lr * std::min(1.0, ramp);
}

bool AdamW::step(const TensorSpans& params, const ConstTensorSpans& grads) {
  if (params.size() != grads.size()) {
    throw std::invalid_argument("adamw: span count mismatch");
  }
  int64_t total = 0;
  double sq_norm = 0.0;
  for (size_t i = 0; i < grads.size(); ++i) {
    if (params[i].second != grads[i].second) {
      throw std::invalid_argument("adamw: span size mismatch");
    }
    const double* g = grads[i].first;
    for (int64_t k = 0; k < grads[i].second; ++k) sq_norm += g[k] * g[k];
    total += grads[i].second;
  }
  if (total != m_.size()) {
    throw std::invalid_argument("adamw: parameter count changed");
  }
  if (!std::isfinite(sq_norm)) return false;

  double scale = 1.0;
  double norm = std::sqrt(sq_norm);
  if (cfg_.grad_clip > 0.0 && norm > cfg_.grad_clip) {
    scale = cfg_.grad_clip / norm;
  }

  ++steps_;
  double lr = effective_lr(steps_);
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));

  int64_t off = 0;
  for (size_t i = 0; i < params.size(); ++i) {
    double* p = params[i].first;
    const double* g = grads[i].first;
    for (int64_t k = 0; k < params[i].second; ++k) {
      double gk = g[k] * scale;
      double& m = m_[off + k];
      double& v = v_[off + k];
      m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * gk;
      v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * gk * gk;
      double mhat = m / bc1;
      double vhat = v / bc2;
      p[k] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                    cfg_.weight_decay * p[k]);
    }
    off += params[i].second;
  }
  return true;
}

}  // namespace alter
