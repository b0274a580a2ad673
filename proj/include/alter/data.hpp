#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace alter {

struct GmmConfig {
  int modes = 8;
  double radius = 4.0;
  double sigma = 0.15;

  void validate() const;
  int dim() const { return 2; }
};

// Fixed dataset drawn once from the mixture, then cycled with a fresh shuffle
// per epoch. Batch content depends only on (seed, step), so resumed runs see
// identical batches.
class GmmData {
 public:
  GmmData(const GmmConfig& cfg, int dataset_size, uint64_t seed);

  int dim() const { return cfg_.dim(); }
  const Eigen::MatrixXd& dataset() const { return points_; }

  // Rows for 1-based training step `step`.
  Eigen::MatrixXd batch(int64_t step, int batch_size);

  // Held-out draws, independent of the training set.
  Eigen::MatrixXd sample_fresh(int n, uint64_t stream_seed) const;

 private:
  const std::vector<int>& epoch_perm(int64_t epoch);

  GmmConfig cfg_;
  uint64_t seed_;
  Eigen::MatrixXd points_;
  int64_t cached_epoch_ = -1;
  std::vector<int> perm_;
};

}  // namespace alter
