#include "alter/schedule.hpp"

#include <cmath>
#include <stdexcept>

namespace alter {

ScheduleKind parse_schedule_kind(const std::string& name) {
  if (name == "linear") return ScheduleKind::kLinear;
  if (name == "cosine") return ScheduleKind::kCosine;
  throw std::invalid_argument("unknown schedule kind: " + name);
}

const char* schedule_kind_name(ScheduleKind kind) {
  return kind == ScheduleKind::kLinear ? "linear" : "cosine";
}

void NoiseSchedule::validate() const {
  if (total_timesteps < 2) {
    throw std::invalid_argument("schedule needs at least 2 timesteps");
  }
  if (alpha_bar.size() != total_timesteps) {
    throw std::invalid_argument("alpha_bar length does not match timesteps");
  }
  if (alpha_bar[0] < 0.99) {
    throw std::invalid_argument("alpha_bar[0] must be >= 0.99");
  }
  if (alpha_bar[total_timesteps - 1] > 0.01) {
    throw std::invalid_argument("alpha_bar at the last step must be <= 0.01");
  }
  for (int i = 0; i < total_timesteps; ++i) {
    double v = alpha_bar[i];
    if (!(v > 0.0 && v <= 1.0)) {
      throw std::invalid_argument("alpha_bar values must lie in (0, 1]");
    }
    if (i > 0 && v > alpha_bar[i - 1]) {
      throw std::invalid_argument("alpha_bar must be non-increasing");
    }
  }
}

namespace {

Eigen::VectorXd linear_alpha_bar(int t_total) {
  double scale = 1000.0 / t_total;
  double beta_start = std::min(1e-4 * scale, 1e-2);
  double beta_end = std::min(2e-2 * scale, 0.995);
  Eigen::VectorXd ab(t_total);
  double prod = 1.0;
  for (int i = 0; i < t_total; ++i) {
    double frac = t_total == 1 ? 0.0 : static_cast<double>(i) / (t_total - 1);
    double beta = beta_start + (beta_end - beta_start) * frac;
    prod *= 1.0 - beta;
    ab[i] = prod;
  }
  return ab;
}

Eigen::VectorXd cosine_alpha_bar(int t_total) {
  const double s = 0.008;
  auto f = [&](double u) {
    double c = std::cos((u + s) / (1.0 + s) * M_PI / 2.0);
    return c * c;
  };
  double f0 = f(0.0);
  Eigen::VectorXd ab(t_total);
  double prev = 1.0;
  for (int i = 0; i < t_total; ++i) {
    double raw = f(static_cast<double>(i + 1) / t_total) / f0;
    // Clamp per-step beta to 0.999, the usual guard near the end of the
    // cosine curve.
    double ratio = std::max(raw / prev, 1e-3);
    prev *= ratio;
    ab[i] = prev;
  }
  return ab;
}

}  // namespace

NoiseSchedule make_schedule(int total_timesteps, ScheduleKind kind) {
  NoiseSchedule sched;
  sched.total_timesteps = total_timesteps;
  sched.kind = kind;
  if (total_timesteps >= 2) {
    sched.alpha_bar = kind == ScheduleKind::kLinear
                          ? linear_alpha_bar(total_timesteps)
                          : cosine_alpha_bar(total_timesteps);
  }
  sched.validate();
  return sched;
}

Eigen::VectorXd q_sample(const Eigen::VectorXd& x0, const Eigen::VectorXd& eps,
                         double alpha_bar_t) {
  if (x0.size() != eps.size()) {
    throw std::invalid_argument("q_sample: x0 and eps sizes differ");
  }
  if (!(alpha_bar_t >= 0.0 && alpha_bar_t <= 1.0)) {
    throw std::invalid_argument("q_sample: alpha_bar_t outside [0, 1]");
  }
  return std::sqrt(alpha_bar_t) * x0 + std::sqrt(1.0 - alpha_bar_t) * eps;
}

DiffusionSample forward_noise(const Eigen::VectorXd& x0, int t,
                              const Eigen::VectorXd& eps,
                              const NoiseSchedule& schedule) {
  if (t < 0 || t >= schedule.total_timesteps) {
    throw std::invalid_argument("forward_noise: timestep out of range");
  }
  DiffusionSample s;
  s.x0 = x0;
  s.eps = eps;
  s.t = t;
  s.xt = q_sample(x0, eps, schedule.alpha_bar[t]);
  return s;
}

Eigen::VectorXd timestep_embedding(double t, int d_emb) {
  if (d_emb <= 0 || d_emb % 2 != 0) {
    throw std::invalid_argument("timestep_embedding: d_emb must be even");
  }
  Eigen::VectorXd e(d_emb);
  for (int i = 0; i < d_emb / 2; ++i) {
    double w = std::pow(10000.0, -2.0 * i / d_emb);
    e[2 * i] = std::sin(t * w);
    e[2 * i + 1] = std::cos(t * w);
  }
  return e;
}

Eigen::MatrixXd timestep_embedding_table(int total_timesteps, int d_emb) {
  Eigen::MatrixXd table(total_timesteps, d_emb);
  for (int t = 0; t < total_timesteps; ++t) {
    table.row(t) = timestep_embedding(t, d_emb).transpose();
  }
  return table;
}

}  // namespace alter
