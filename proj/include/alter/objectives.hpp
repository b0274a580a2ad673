#pragma once

#include <Eigen/Dense>
#include <vector>

namespace alter {

struct LossWeights {
  double lambda_denoise = 1e-4;
  double lambda_out_kd = 1.0;
  double lambda_feat_kd = 1.0;
  double lambda_ratio = 5.0;
  double lambda_balance = 1.0;
  double target_sparsity = 0.65;
  double stability_eps = 1e-6;
  // When set, the hypernet perf term takes the denoise MSE unweighted (the
  // alternating algorithm's printed form); default reuses lambda_denoise.
  bool perf_unweighted_denoise = false;

  void validate() const;
};

// Mean squared error over all elements; both losses below are this form.
double mse(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);
double denoise_loss(const Eigen::MatrixXd& eps, const Eigen::MatrixXd& eps_hat);
double out_kd_loss(const Eigen::MatrixXd& teacher_eps,
                   const Eigen::MatrixXd& student_eps);

// Sum over taps of per-tap MSE.
double feat_kd_loss(const std::vector<Eigen::MatrixXd>& teacher_taps,
                    const std::vector<Eigen::MatrixXd>& student_taps);

double unet_loss(double l_denoise, double l_out_kd, double l_feat_kd,
                 const LossWeights& w);
// Same combination with the perf_unweighted_denoise flag applied.
double perf_loss(double l_denoise, double l_out_kd, double l_feat_kd,
                 const LossWeights& w);

// Cost-weighted retained-compute fraction over prunable layers.
double sparsity(const Eigen::VectorXd& mask, const Eigen::VectorXd& costs);

// log(max(S,p) / (min(S,p) + eps)), with derivative helper for the trainer.
double ratio_loss(double s, double target, double eps_stab);
double ratio_loss_grad(double s, double target, double eps_stab);

struct BalanceStats {
  Eigen::VectorXd assign_frac;  // F: argmax share per expert, tie -> lowest
  Eigen::VectorXd mean_prob;    // P: mean softmax of the raw logits
};

BalanceStats balance_stats(const Eigen::MatrixXd& route_logits);
double balance_loss_from_stats(const BalanceStats& st, int n_experts);
double balance_loss(const Eigen::MatrixXd& route_logits);
// d balance / d logits; F is treated as constant (only P carries sensitivity).
Eigen::MatrixXd balance_loss_grad(const Eigen::MatrixXd& route_logits);

double hypernet_loss(double l_perf, double l_ratio, double l_balance,
                     const LossWeights& w);

}  // namespace alter
