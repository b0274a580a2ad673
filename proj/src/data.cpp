#include "alter/data.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "alter/common.hpp"

namespace alter {

void GmmConfig::validate() const {
  if (modes < 1) throw std::invalid_argument("gmm: modes must be >= 1");
  if (!(radius >= 0.0) || !(sigma > 0.0)) {
    throw std::invalid_argument("gmm: bad radius or sigma");
  }
}

namespace {

Eigen::MatrixXd draw_points(const GmmConfig& cfg, int n, Rng& rng) {
  Eigen::MatrixXd pts(n, 2);
  for (int i = 0; i < n; ++i) {
    int mode = rng.uniform_int(cfg.modes);
    double angle = 2.0 * M_PI * mode / cfg.modes;
    pts(i, 0) = cfg.radius * std::cos(angle) + cfg.sigma * rng.normal();
    pts(i, 1) = cfg.radius * std::sin(angle) + cfg.sigma * rng.normal();
  }
  return pts;
}

}  // namespace

GmmData::GmmData(const GmmConfig& cfg, int dataset_size, uint64_t seed)
    : cfg_(cfg), seed_(seed) {
  cfg.validate();
  if (dataset_size < 1) throw std::invalid_argument("gmm: dataset_size must be >= 1");
  Rng rng(mix_seed(seed, kStreamDataset, 0));
  points_ = draw_points(cfg, dataset_size, rng);
}

const std::vector<int>& GmmData::epoch_perm(int64_t epoch) {
  if (epoch != cached_epoch_) {
    perm_.resize(points_.rows());
    std::iota(perm_.begin(), perm_.end(), 0);
    Rng rng(mix_seed(seed_, kStreamShuffle, static_cast<uint64_t>(epoch)));
    for (int i = static_cast<int>(perm_.size()) - 1; i > 0; --i) {
      std::swap(perm_[i], perm_[rng.uniform_int(i + 1)]);
    }
    cached_epoch_ = epoch;
  }
  return perm_;
}

Eigen::MatrixXd GmmData::batch(int64_t step, int batch_size) {
  if (step < 1 || batch_size < 1) throw std::invalid_argument("gmm: bad batch request");
  const int64_t n = points_.rows();
  Eigen::MatrixXd out(batch_size, 2);
  for (int k = 0; k < batch_size; ++k) {
    int64_t global = (step - 1) * batch_size + k;
    const auto& perm = epoch_perm(global / n);
    out.row(k) = points_.row(perm[global % n]);
  }
  return out;
}

Eigen::MatrixXd GmmData::sample_fresh(int n, uint64_t stream_seed) const {
  Rng rng(mix_seed(seed_, kStreamHeldOut, stream_seed));
  return draw_points(cfg_, n, rng);
}

}  // namespace alter
