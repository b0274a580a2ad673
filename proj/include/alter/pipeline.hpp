#pragma once

#include <string>

#include "alter/checkpoint.hpp"
#include "alter/config.hpp"
#include "alter/sampler.hpp"
#include "alter/trainer.hpp"

namespace alter {

// Run-directory root: explicit override, else $ALTER_RUN_ROOT, else "runs".
std::string run_root(const std::string& override_dir);
// Unique directory name component (wall time + pid + in-process counter).
std::string run_tag(const std::string& prefix);

struct PretrainResult {
  std::string run_dir;
  std::string checkpoint_path;
  double mmd = 0.0;  // 3-seed mean against held-out data
  bool gate_passed = false;
};

// Dense-teacher training plus the sample-quality gate; writes gate.txt.
PretrainResult run_pretrain(const TrainConfig& cfg, const std::string& run_dir);

struct TrainResult {
  std::string run_dir;
  std::string checkpoint_path;
};

// Pruning run distilling from the teacher checkpoint; resume continues the
// checkpointed run (its config governs).
TrainResult run_train(const TrainConfig& cfg, const Checkpoint& teacher_ckpt,
                      const std::string& run_dir,
                      const Checkpoint* resume = nullptr);

// 3-seed mean MMD^2 between hard-pruned samples and fresh held-out data.
// masks == nullptr evaluates the dense model.
double eval_mmd(const DenoiserModel& model, const TrainConfig& cfg,
                const MaskSet* masks, int n_steps, int n_samples,
                uint64_t base_seed);

}  // namespace alter
