#pragma once

#include <Eigen/Dense>
#include <string>

namespace alter {

enum class ScheduleKind { kLinear, kCosine };

ScheduleKind parse_schedule_kind(const std::string& name);
const char* schedule_kind_name(ScheduleKind kind);

// Cumulative signal fraction of the forward process. alpha_bar[t] is the
// variance share of the clean signal after step t.
struct NoiseSchedule {
  int total_timesteps = 0;
  ScheduleKind kind = ScheduleKind::kLinear;
  Eigen::VectorXd alpha_bar;

  // Throws std::invalid_argument unless alpha_bar is non-increasing, inside
  // (0, 1], starts >= 0.99 and ends <= 0.01.
  void validate() const;
};

NoiseSchedule make_schedule(int total_timesteps, ScheduleKind kind);

// x_t = sqrt(ab) * x0 + sqrt(1 - ab) * eps
Eigen::VectorXd q_sample(const Eigen::VectorXd& x0, const Eigen::VectorXd& eps,
                         double alpha_bar_t);

struct DiffusionSample {
  Eigen::VectorXd x0;
  Eigen::VectorXd xt;
  Eigen::VectorXd eps;
  int t = 0;
  int cond = -1;  // class label, -1 when unconditional
};

DiffusionSample forward_noise(const Eigen::VectorXd& x0, int t,
                              const Eigen::VectorXd& eps,
                              const NoiseSchedule& schedule);

// Interleaved sinusoidal features: e[2i] = sin(t * w_i), e[2i+1] = cos(t * w_i)
// with w_i = 10000^(-2i / d_emb). d_emb must be even and positive.
Eigen::VectorXd timestep_embedding(double t, int d_emb);

// Row t = timestep_embedding(t, d_emb) for t in [0, total_timesteps).
Eigen::MatrixXd timestep_embedding_table(int total_timesteps, int d_emb);

}  // namespace alter
