#include "alter/pipeline.hpp"

#include <atomic>
#include <cstdlib>
#include <ctime>
#include <fstream>

#ifdef _WIN32
#include <process.h>
#else
#include <unistd.h>
#endif

#include "alter/common.hpp"
#include "alter/data.hpp"

namespace alter {

std::string run_root(const std::string& override_dir) {
  if (!override_dir.empty()) return override_dir;
  const char* env = std::getenv("ALTER_RUN_ROOT");
  if (env && *env) return env;
  return "runs";
}

std::string run_tag(const std::string& prefix) {
  static std::atomic<int> counter{0};
  const std::time_t now = std::time(nullptr);
  std::tm tm_buf{};
#ifdef _WIN32
  localtime_s(&tm_buf, &now);
#else
  localtime_r(&now, &tm_buf);
#endif
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", &tm_buf);
  std::string tag = prefix + "-" + stamp + "-" + std::to_string(getpid());
  const int c = counter.fetch_add(1);
  if (c > 0) tag += "-" + std::to_string(c);
  return tag;
}

double eval_mmd(const DenoiserModel& model, const TrainConfig& cfg,
                const MaskSet* masks, int n_steps, int n_samples,
                uint64_t base_seed) {
  const NoiseSchedule sched = make_schedule(cfg.t_total, cfg.schedule);
  const Eigen::MatrixXd emb_table =
      timestep_embedding_table(cfg.t_total, cfg.model.emb_dim());
  GmmData data(cfg.data, cfg.dataset_size, cfg.seed);
  double acc = 0.0;
  for (int k = 0; k < 3; ++k) {
    SampleOptions opt;
    opt.n_steps = n_steps;
    opt.n_samples = n_samples;
    opt.seed = base_seed + static_cast<uint64_t>(k);
    opt.hard_prune = true;
    const Eigen::MatrixXd generated = sample(model, sched, emb_table, masks, opt);
    const Eigen::MatrixXd held_out =
        data.sample_fresh(n_samples, base_seed + static_cast<uint64_t>(k));
    acc += mmd2(generated, held_out);
  }
  return acc / 3.0;
}

PretrainResult run_pretrain(const TrainConfig& cfg, const std::string& run_dir) {
  Trainer trainer = Trainer::pretrain(cfg);
  trainer.run(run_dir);

  PretrainResult result;
  result.run_dir = run_dir;
  result.checkpoint_path = run_dir + "/checkpoint.bin";
  result.mmd = eval_mmd(trainer.student(), trainer.config(), nullptr, 20, 2000,
                        cfg.seed);
  result.gate_passed = result.mmd <= cfg.mmd_threshold;

  std::ofstream gate(run_dir + "/gate.txt", std::ios::trunc);
  gate << "teacher_mmd2=" << format_double(result.mmd) << '\n'
       << "threshold=" << format_double(cfg.mmd_threshold) << '\n'
       << "passed=" << (result.gate_passed ? "true" : "false") << '\n';
  return result;
}

TrainResult run_train(const TrainConfig& cfg, const Checkpoint& teacher_ckpt,
                      const std::string& run_dir, const Checkpoint* resume) {
  if (teacher_ckpt.kind != "teacher") {
    throw std::invalid_argument("expected a teacher checkpoint, got kind '" +
                                teacher_ckpt.kind + "'");
  }
  DenoiserModel teacher = model_from_checkpoint(teacher_ckpt);
  TrainConfig effective = cfg;
  if (resume) {
    effective = TrainConfig::parse_text(resume->config_text, "resume checkpoint");
  }
  Trainer trainer = Trainer::prune(effective, std::move(teacher));
  if (resume) trainer.load_state(*resume);
  trainer.run(run_dir);
  return {run_dir, run_dir + "/checkpoint.bin"};
}

}  // namespace alter
