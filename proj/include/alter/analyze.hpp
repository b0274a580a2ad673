#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "alter/hypernet.hpp"

namespace alter {

struct RunAnalysis {
  int n_experts = 0;
  int n_layers = 0;
  int t_total = 0;
  Eigen::MatrixXd expert_bits;        // N_e x N_L, 0/1
  std::vector<int> routing;           // timestep -> expert
  Eigen::VectorXd retained_fraction;  // cost-weighted kept compute per expert
  Eigen::VectorXd timestep_share;     // routed-timestep share per expert
  double mean_sparsity = 0.0;         // S over the routing table
  double target = 0.0;                // configured p
  double entropy = 0.0;               // nats, over timestep_share
};

// Rebuild a MaskSet from exported masks.csv / routing.csv (logits are not
// exported; routing logits become one-hot indicators).
MaskSet load_mask_csvs(const std::string& run_dir);

// Aggregates masks.csv, routing.csv and config_resolved.txt of a run.
RunAnalysis analyze_run(const std::string& run_dir);

std::string analysis_summary(const RunAnalysis& a);

void write_mask_svg(const std::string& path, const RunAnalysis& a);
void write_routing_svg(const std::string& path, const RunAnalysis& a);

}  // namespace alter
