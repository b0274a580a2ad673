#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "alter/data.hpp"
#include "alter/denoiser.hpp"
#include "alter/hypernet.hpp"
#include "alter/objectives.hpp"
#include "alter/schedule.hpp"

namespace alter {

enum class Variant { kAlter, kStatic, kManual, kTwoStage };

Variant parse_variant(const std::string& name);
const char* variant_name(Variant v);

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& message, int line = 0)
      : std::runtime_error(line > 0 ? message + " (line " + std::to_string(line) + ")"
                                    : message),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_ = 0;
};

struct TrainConfig {
  // loop
  int64_t total_steps = 3000;
  int64_t hypernet_end = 2000;
  int batch_size = 256;
  int64_t warmup_steps = 250;
  double lr_unet = 1e-5;
  double lr_hypernet = 7e-5;
  double weight_decay = 0.0;
  double grad_clip = 1.0;
  uint64_t seed = 1;
  Variant variant = Variant::kAlter;
  int64_t checkpoint_every = 0;  // 0 disables mid-run checkpoints

  // diffusion process
  int t_total = 100;
  ScheduleKind schedule = ScheduleKind::kLinear;

  // denoiser
  DenoiserConfig model;

  // hypernet
  int n_experts = 4;
  int d_input = 64;
  int d_expert = 256;
  int d_router = 64;
  double tau_gen = 0.4;
  double bias_gen = 4.0;
  double tau_route = 0.4;
  double bias_route = 0.0;
  double hypernet_init_std = 0.02;

  LossWeights weights;

  // data
  GmmConfig data;
  int dataset_size = 8192;

  // teacher acceptance gate used by the pretrain command
  double mmd_threshold = 0.05;

  void validate() const;
  HypernetConfig hypernet_config() const;

  // Canonical echo: every key, fixed order, shortest round-trip doubles.
  // parse(serialize()) reproduces the config exactly.
  std::string serialize() const;
  static TrainConfig parse_text(const std::string& text,
                                const std::string& source_name);
  static TrainConfig parse_file(const std::string& path);
};

}  // namespace alter
