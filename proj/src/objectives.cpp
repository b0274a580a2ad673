#include "alter/objectives.hpp"

#include <cmath>
#include <stdexcept>

#include "alter/hypernet.hpp"

namespace alter {

void LossWeights::validate() const {
  auto nonneg = [](double v) { return std::isfinite(v) && v >= 0.0; };
  if (!nonneg(lambda_denoise) || !nonneg(lambda_out_kd) ||
      !nonneg(lambda_feat_kd) || !nonneg(lambda_ratio) ||
      !nonneg(lambda_balance)) {
    throw std::invalid_argument("loss weights must be finite and non-negative");
  }
  if (!(target_sparsity > 0.0 && target_sparsity <= 1.0)) {
    throw std::invalid_argument("target_sparsity must lie in (0, 1]");
  }
  if (!(stability_eps > 0.0)) {
    throw std::invalid_argument("stability_eps must be positive");
  }
}

double mse(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument("mse: shape mismatch");
  }
  return (a - b).squaredNorm() / static_cast<double>(a.size());
}

double denoise_loss(const Eigen::MatrixXd& eps, const Eigen::MatrixXd& eps_hat) {
  return mse(eps, eps_hat);
}

double out_kd_loss(const Eigen::MatrixXd& teacher_eps,
                   const Eigen::MatrixXd& student_eps) {
  return mse(teacher_eps, student_eps);
}

double feat_kd_loss(const std::vector<Eigen::MatrixXd>& teacher_taps,
                    const std::vector<Eigen::MatrixXd>& student_taps) {
  if (teacher_taps.size() != student_taps.size()) {
    throw std::invalid_argument("feat_kd: tap count mismatch");
  }
  double total = 0.0;
  for (size_t k = 0; k < teacher_taps.size(); ++k) {
    total += mse(teacher_taps[k], student_taps[k]);
  }
  return total;
}

double unet_loss(double l_denoise, double l_out_kd, double l_feat_kd,
                 const LossWeights& w) {
  return w.lambda_denoise * l_denoise + w.lambda_out_kd * l_out_kd +
         w.lambda_feat_kd * l_feat_kd;
}

double perf_loss(double l_denoise, double l_out_kd, double l_feat_kd,
                 const LossWeights& w) {
  double denoise_w = w.perf_unweighted_denoise ? 1.0 : w.lambda_denoise;
  return denoise_w * l_denoise + w.lambda_out_kd * l_out_kd +
         w.lambda_feat_kd * l_feat_kd;
}

double sparsity(const Eigen::VectorXd& mask, const Eigen::VectorXd& costs) {
  if (mask.size() != costs.size()) {
    throw std::invalid_argument("sparsity: mask/cost size mismatch");
  }
  double denom = costs.sum();
  if (!(denom > 0.0)) throw std::invalid_argument("sparsity: costs must be positive");
  return mask.dot(costs) / denom;
}

double ratio_loss(double s, double target, double eps_stab) {
  double hi = std::max(s, target);
  double lo = std::min(s, target);
  return std::log(hi / (lo + eps_stab));
}

double ratio_loss_grad(double s, double target, double eps_stab) {
  if (s > target) return 1.0 / s;
  if (s < target) return -1.0 / (s + eps_stab);
  return 0.0;
}

BalanceStats balance_stats(const Eigen::MatrixXd& route_logits) {
  const int batch = route_logits.rows();
  const int n_e = route_logits.cols();
  if (batch == 0 || n_e == 0) {
    throw std::invalid_argument("balance_stats: empty logits");
  }
  BalanceStats st;
  st.assign_frac = Eigen::VectorXd::Zero(n_e);
  st.mean_prob = Eigen::VectorXd::Zero(n_e);
  for (int b = 0; b < batch; ++b) {
    Eigen::VectorXd row = route_logits.row(b).transpose();
    st.assign_frac[argmax_lowest(row)] += 1.0;
    double shift = row.maxCoeff();
    Eigen::VectorXd ex = (row.array() - shift).exp();
    st.mean_prob += ex / ex.sum();
  }
  st.assign_frac /= batch;
  st.mean_prob /= batch;
  return st;
}

double balance_loss_from_stats(const BalanceStats& st, int n_experts) {
  if (st.assign_frac.size() != n_experts || st.mean_prob.size() != n_experts) {
    throw std::invalid_argument("balance: stats size mismatch");
  }
  return n_experts * st.assign_frac.dot(st.mean_prob);
}

double balance_loss(const Eigen::MatrixXd& route_logits) {
  return balance_loss_from_stats(balance_stats(route_logits),
                                 route_logits.cols());
}

Eigen::MatrixXd balance_loss_grad(const Eigen::MatrixXd& route_logits) {
  const int batch = route_logits.rows();
  const int n_e = route_logits.cols();
  BalanceStats st = balance_stats(route_logits);
  Eigen::MatrixXd grad(batch, n_e);
  for (int b = 0; b < batch; ++b) {
    Eigen::VectorXd row = route_logits.row(b).transpose();
    double shift = row.maxCoeff();
    Eigen::VectorXd ex = (row.array() - shift).exp();
    Eigen::VectorXd p = ex / ex.sum();
    double dot = st.assign_frac.dot(p);
    grad.row(b) = (static_cast<double>(n_e) / batch) *
                  (p.array() * (st.assign_frac.array() - dot)).transpose();
  }
  return grad;
}

double hypernet_loss(double l_perf, double l_ratio, double l_balance,
                     const LossWeights& w) {
  return l_perf + w.lambda_ratio * l_ratio + w.lambda_balance * l_balance;
}

}  // namespace alter
