#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "alter/denoiser.hpp"
#include "alter/hypernet.hpp"

namespace alter {

struct LinearShape {
  int in = 0;
  int out = 0;
};

struct BlockShape {
  std::vector<LinearShape> linears;
};

// MACs per item: each a->b linear contributes a*b.
int64_t linear_macs(const LinearShape& shape);
int64_t block_macs(const BlockShape& shape);

struct CostModel {
  std::vector<int64_t> layer_costs;  // per prunable block
  int64_t fixed_cost = 0;            // projections, never pruned

  int64_t dense_total() const;
  Eigen::VectorXd costs_as_double() const;
};

CostModel profile_costs(const DenoiserConfig& cfg);

int64_t masked_macs(const CostModel& cm, const std::vector<int>& mask_bits);

// Total MACs for visiting the given timesteps once each, applying the routed
// expert's binary mask at every step.
int64_t schedule_macs(const CostModel& cm, const MaskSet& masks,
                      const std::vector<int>& timesteps);

double speedup(double dense, double pruned);

}  // namespace alter
