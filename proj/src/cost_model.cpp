#include "alter/cost_model.hpp"

#include <stdexcept>

namespace alter {

int64_t linear_macs(const LinearShape& shape) {
  if (shape.in <= 0 || shape.out <= 0) {
    throw std::invalid_argument("linear_macs: dims must be positive");
  }
  return static_cast<int64_t>(shape.in) * shape.out;
}

int64_t block_macs(const BlockShape& shape) {
  int64_t total = 0;
  for (const auto& l : shape.linears) total += linear_macs(l);
  return total;
}

int64_t CostModel::dense_total() const {
  int64_t total = fixed_cost;
  for (int64_t c : layer_costs) total += c;
  return total;
}

Eigen::VectorXd CostModel::costs_as_double() const {
  Eigen::VectorXd v(layer_costs.size());
  for (size_t i = 0; i < layer_costs.size(); ++i) {
    v[i] = static_cast<double>(layer_costs[i]);
  }
  return v;
}

CostModel profile_costs(const DenoiserConfig& cfg) {
  cfg.validate();
  const int w = cfg.hidden_width;
  CostModel cm;
  cm.layer_costs.resize(cfg.n_layers);
  for (int l = 0; l < cfg.n_layers; ++l) {
    BlockShape shape;
    shape.linears.push_back({cfg.is_decoder(l) ? 2 * w : w, w});
    shape.linears.push_back({w, w});
    cm.layer_costs[l] = block_macs(shape);
  }
  cm.fixed_cost = linear_macs({cfg.input_dim(), w}) + linear_macs({w, cfg.data_dim});
  return cm;
}

int64_t masked_macs(const CostModel& cm, const std::vector<int>& mask_bits) {
  if (mask_bits.size() != cm.layer_costs.size()) {
    throw std::invalid_argument("masked_macs: mask size mismatch");
  }
  int64_t total = cm.fixed_cost;
  for (size_t l = 0; l < mask_bits.size(); ++l) {
    if (mask_bits[l]) total += cm.layer_costs[l];
  }
  return total;
}

int64_t schedule_macs(const CostModel& cm, const MaskSet& masks,
                      const std::vector<int>& timesteps) {
  int64_t total = 0;
  for (int t : timesteps) total += masked_macs(cm, masks.bits_for_timestep(t));
  return total;
}

double speedup(double dense, double pruned) {
  if (!(pruned > 0.0) || !(dense > 0.0)) {
    throw std::invalid_argument("speedup: inputs must be positive");
  }
  return dense / pruned;
}

}  // namespace alter
