#pragma once

#include <optional>
#include <string>
#include <vector>

#include "alter/checkpoint.hpp"
#include "alter/config.hpp"
#include "alter/cost_model.hpp"
#include "alter/data.hpp"
#include "alter/denoiser.hpp"
#include "alter/hypernet.hpp"
#include "alter/objectives.hpp"
#include "alter/optimizer.hpp"
#include "alter/schedule.hpp"

namespace alter {

struct StepMetrics {
  int64_t step = 0;
  std::string phase;  // "hypernet" or "unet"
  double l_denoise = 0, l_out_kd = 0, l_feat_kd = 0;
  double l_ratio = 0, l_balance = 0, l_total = 0;
  double s_current = 0;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const StepMetrics& m);

struct Batch {
  Eigen::MatrixXd x0;     // B x data_dim
  Eigen::MatrixXd eps;    // B x data_dim
  Eigen::MatrixXd input;  // B x input_dim (x_t; one-hot labels would append)
  Eigen::MatrixXd emb;    // B x hidden_width
  std::vector<int> t;
};

// Teacher outputs shared by both phases of one step.
struct TeacherEval {
  Eigen::MatrixXd eps_hat;
  ForwardCache cache;  // block_out rows double as the KD feature taps
};

enum class RunMode { kPretrain, kPrune };

// Alternating co-optimization: per step at most one hypernet update (phi,
// denoiser frozen) followed by one denoiser update (theta, masks frozen from
// the refreshed eval MaskSet); after hypernet_end only the denoiser trains.
class Trainer {
 public:
  // Dense-teacher pretraining: variant forced to static, all-ones masks,
  // KD weights forced to zero.
  static Trainer pretrain(const TrainConfig& cfg);
  static Trainer prune(const TrainConfig& cfg, DenoiserModel teacher);

  // Full loop from the current step to total_steps; writes metrics.csv,
  // config_resolved.txt, checkpoints and (prune mode) masks/routing CSVs.
  void run(const std::string& run_dir);

  Batch make_batch(int64_t step);
  TeacherEval eval_teacher(const Batch& batch);

  struct HyperOut {
    StepMetrics metrics;
    HypernetGrads grads;
    HyperDraw draw;
  };
  // Loss and Phi-gradients for one noisy draw; does not update anything.
  HyperOut hypernet_phase(const Batch& batch, const TeacherEval& teacher,
                          const Eigen::MatrixXd& gen_noise,
                          const Eigen::MatrixXd& route_noise, MaskMode mode);

  struct UnetOut {
    StepMetrics metrics;
    DenoiserGrads grads;
  };
  // teacher == nullptr only in pretrain mode (KD terms zero).
  UnetOut unet_phase(const Batch& batch, const TeacherEval* teacher,
                     const Eigen::MatrixXd& masks);

  // Per-step fresh noise, keyed by (seed, stream, step).
  Eigen::MatrixXd draw_gen_noise(int64_t step);    // N_e x N_L
  Eigen::MatrixXd draw_route_noise(int64_t step);  // B x N_e

  // Standalone halves of the algorithm body. hypernet_step throws when the
  // run has no hypernet phase or the step lies past hypernet_end.
  StepMetrics hypernet_step(int64_t step);
  StepMetrics unet_step(int64_t step);

  // Algorithm body for one 1-based step index; returns the emitted metric
  // rows and advances optimizer state.
  std::vector<StepMetrics> step_once(int64_t step);

  Eigen::MatrixXd masks_for_batch(const Batch& batch) const;
  void refresh_masks();

  bool apply_phi_update(const HypernetGrads& grads);
  bool apply_theta_update(const DenoiserGrads& grads);

  const TrainConfig& config() const { return cfg_; }
  RunMode mode() const { return mode_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  const Eigen::MatrixXd& emb_table() const { return emb_table_; }
  const CostModel& costs() const { return costs_; }
  GmmData& data() { return data_; }
  DenoiserModel& student() { return student_; }
  const DenoiserModel* teacher() const { return teacher_ ? &*teacher_ : nullptr; }
  HypernetState& phi() { return phi_; }
  const MaskSet& masks() const { return masks_; }
  int64_t steps_done() const { return steps_done_; }

  uint64_t theta_hash();
  uint64_t phi_hash();

  Checkpoint to_checkpoint();
  void load_state(const Checkpoint& ckpt);

 private:
  Trainer(const TrainConfig& cfg, RunMode mode,
          std::optional<DenoiserModel> teacher);

  std::vector<int> manual_selection(const std::vector<int>& timesteps) const;

  TrainConfig cfg_;
  RunMode mode_;
  NoiseSchedule schedule_;
  Eigen::MatrixXd emb_table_;
  GmmData data_;
  DenoiserModel student_;
  std::optional<DenoiserModel> teacher_;
  HypernetState phi_;
  CostModel costs_;
  Eigen::VectorXd cost_weights_;  // costs / sum(costs)
  AdamW opt_theta_;
  AdamW opt_phi_;
  MaskSet masks_;
  int64_t steps_done_ = 0;
};

// Checkpoint adapters shared by trainer, CLI and tests.
DenoiserModel model_from_checkpoint(const Checkpoint& ckpt);
HypernetState hypernet_from_checkpoint(const Checkpoint& ckpt);

TensorSpans collect_spans(const std::function<void(const ParamVisitor&)>& visit);
ConstTensorSpans collect_const_spans(const std::function<void(const ParamVisitor&)>& visit);

}  // namespace alter
