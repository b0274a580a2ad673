#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "alter/cost_model.hpp"
#include "alter/denoiser.hpp"
#include "alter/hypernet.hpp"
#include "alter/schedule.hpp"

namespace alter {

// Evenly spaced sub-schedule over [0, t_total), includes both 0 and
// t_total - 1. Strictly increasing for any 1 < n_steps <= t_total.
std::vector<int> sample_timesteps(int t_total, int n_steps);

struct SampleOptions {
  int n_steps = 20;
  int n_samples = 2000;
  uint64_t seed = 1;
  bool hard_prune = true;  // physical block skipping vs simulated masking
};

// Deterministic DDIM-style reverse pass. masks == nullptr samples the dense
// model; otherwise each visited timestep applies its routed expert's mask.
Eigen::MatrixXd sample(const DenoiserModel& model, const NoiseSchedule& sched,
                       const Eigen::MatrixXd& emb_table, const MaskSet* masks,
                       const SampleOptions& opt);

void write_samples_csv(const std::string& path, const Eigen::MatrixXd& samples,
                       uint64_t seed);
Eigen::MatrixXd read_samples_csv(const std::string& path);

// Unbiased Gaussian-kernel MMD^2 with k(x,y) = exp(-|x-y|^2 / (2 sigma2)).
// sigma2 <= 0 selects the median heuristic: half the median pairwise squared
// distance over the pooled set. Requires >= 2 rows per side.
double mmd2(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
            double sigma2 = 0.0);

struct BenchReport {
  int n_steps = 0;
  int64_t dense_macs = 0;
  int64_t pruned_macs = 0;
  double mac_speedup = 1.0;
  double dense_ms = 0.0;   // median wall-clock per trajectory
  double pruned_ms = 0.0;
  double wall_speedup = 1.0;
};

// Times one batch-1 trajectory, dense vs routed masks, median of `reps`
// repetitions after warmup. Arithmetic runs in fp32 locally (training stays
// fp64); MAC numbers come from the cost model and are cross-checked against
// executed-block counters, mismatch raises NumericError.
BenchReport bench(const DenoiserModel& model, const MaskSet& masks,
                  const NoiseSchedule& sched, const Eigen::MatrixXd& emb_table,
                  int n_steps, int reps, uint64_t seed);

std::string bench_csv_header();
std::string bench_csv_row(const BenchReport& r);

}  // namespace alter
