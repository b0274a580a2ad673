#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include "alter/analyze.hpp"
#include "alter/common.hpp"
#include "alter/config.hpp"
#include "alter/pipeline.hpp"

namespace fs = std::filesystem;
using namespace alter;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitValidation = 2;
constexpr int kExitNumeric = 3;

void copy_config_verbatim(const std::string& config_path,
                          const std::string& run_dir) {
  std::ifstream in(config_path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read config: " + config_path);
  std::stringstream body;
  body << in.rdbuf();
  fs::create_directories(run_dir);
  std::ofstream out(run_dir + "/config.txt", std::ios::binary | std::ios::trunc);
  out << body.str();
}

// Mask source for sample/bench: explicit CSV export wins, then the
// checkpoint's own hypernet, else dense.
std::unique_ptr<MaskSet> resolve_masks(const Checkpoint& ckpt,
                                       const TrainConfig& cfg,
                                       const std::string& masks_dir,
                                       bool dense) {
  if (dense) return nullptr;
  if (!masks_dir.empty()) {
    return std::make_unique<MaskSet>(load_mask_csvs(masks_dir));
  }
  if (ckpt.arrays.contains("phi.z")) {
    const HypernetState phi = hypernet_from_checkpoint(ckpt);
    const Eigen::MatrixXd emb =
        timestep_embedding_table(cfg.t_total, cfg.model.emb_dim());
    return std::make_unique<MaskSet>(eval_masks(phi, emb));
  }
  return nullptr;
}

struct CliState {
  int exit_code = kExitOk;

  // pretrain + train
  std::string config_path;
  std::string out_dir;
  std::string variant;
  std::string teacher_path;
  std::string resume_path;

  // sample + bench
  std::string checkpoint_path;
  std::string masks_dir;
  bool dense = false;
  int steps = 20;
  int n_samples = 2000;
  int reps = 20;
  uint64_t seed = 1;
  bool hard = true;
  std::string out_file;

  // analyze
  std::string run_dir;
  bool svg = false;
};

void cmd_pretrain(CliState& st) {
  const TrainConfig cfg = TrainConfig::parse_file(st.config_path);
  const std::string dir = st.out_dir.empty()
                              ? run_root("") + "/" + run_tag("pretrain")
                              : st.out_dir;
  copy_config_verbatim(st.config_path, dir);
  const PretrainResult res = run_pretrain(cfg, dir);
  std::cout << "run_dir: " << res.run_dir << '\n'
            << "checkpoint: " << res.checkpoint_path << '\n'
            << "teacher_mmd2: " << format_double(res.mmd) << " (threshold "
            << format_double(cfg.mmd_threshold) << ")\n";
  if (!res.gate_passed) {
    std::cerr << "teacher quality gate failed: mmd2 " << format_double(res.mmd)
              << " > " << format_double(cfg.mmd_threshold) << '\n';
    st.exit_code = kExitNumeric;
    return;
  }
  std::cout << "gate: passed\n";
}

void cmd_train(CliState& st) {
  const Checkpoint teacher = load_checkpoint(st.teacher_path);
  TrainConfig cfg;
  std::optional<Checkpoint> resume;
  if (!st.resume_path.empty()) {
    resume = load_checkpoint(st.resume_path);
    if (resume->kind != "student") {
      throw std::invalid_argument("--resume expects a student checkpoint");
    }
    cfg = TrainConfig::parse_text(resume->config_text, "resume checkpoint");
  } else {
    if (st.config_path.empty()) throw CLI::RequiredError("--config");
    cfg = TrainConfig::parse_file(st.config_path);
    if (!st.variant.empty()) {
      cfg.variant = parse_variant(st.variant);
      if (cfg.variant == Variant::kStatic) cfg.n_experts = 1;
    }
  }
  const std::string dir =
      st.out_dir.empty()
          ? run_root("") + "/" +
                run_tag(std::string("train-") + variant_name(cfg.variant))
          : st.out_dir;
  if (!st.config_path.empty()) copy_config_verbatim(st.config_path, dir);
  const TrainResult res =
      run_train(cfg, teacher, dir, resume ? &*resume : nullptr);
  std::cout << "run_dir: " << res.run_dir << '\n'
            << "checkpoint: " << res.checkpoint_path << '\n'
            << "masks: " << res.run_dir << "/masks.csv\n"
            << "routing: " << res.run_dir << "/routing.csv\n";
}

void cmd_sample(CliState& st) {
  const Checkpoint ckpt = load_checkpoint(st.checkpoint_path);
  const TrainConfig cfg =
      TrainConfig::parse_text(ckpt.config_text, "checkpoint config");
  const DenoiserModel model = model_from_checkpoint(ckpt);
  const auto masks = resolve_masks(ckpt, cfg, st.masks_dir, st.dense);
  const NoiseSchedule sched = make_schedule(cfg.t_total, cfg.schedule);
  const Eigen::MatrixXd emb =
      timestep_embedding_table(cfg.t_total, cfg.model.emb_dim());
  SampleOptions opt;
  opt.n_steps = st.steps;
  opt.n_samples = st.n_samples;
  opt.seed = st.seed;
  opt.hard_prune = st.hard;
  const Eigen::MatrixXd pts = sample(model, sched, emb, masks.get(), opt);
  const std::string out = st.out_file.empty() ? "samples.csv" : st.out_file;
  write_samples_csv(out, pts, st.seed);
  std::cout << "wrote " << out << " (" << opt.n_samples << " samples, "
            << opt.n_steps << " steps, " << (masks ? "routed" : "dense")
            << (opt.hard_prune ? ", hard-pruned" : ", simulated") << ")\n";
}

void cmd_bench(CliState& st) {
  const Checkpoint ckpt = load_checkpoint(st.checkpoint_path);
  const TrainConfig cfg =
      TrainConfig::parse_text(ckpt.config_text, "checkpoint config");
  const DenoiserModel model = model_from_checkpoint(ckpt);
  const auto masks = resolve_masks(ckpt, cfg, st.masks_dir, false);
  if (!masks) {
    throw std::invalid_argument(
        "bench needs a mask source (--masks or a checkpoint with a hypernet)");
  }
  const NoiseSchedule sched = make_schedule(cfg.t_total, cfg.schedule);
  const Eigen::MatrixXd emb =
      timestep_embedding_table(cfg.t_total, cfg.model.emb_dim());
  const BenchReport r =
      bench(model, *masks, sched, emb, st.steps, st.reps, st.seed);
  std::cout << bench_csv_header() << '\n' << bench_csv_row(r) << '\n';
  if (!st.out_file.empty()) {
    std::ofstream out(st.out_file, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + st.out_file);
    out << bench_csv_header() << '\n' << bench_csv_row(r) << '\n';
  }
}

void cmd_analyze(CliState& st) {
  const RunAnalysis a = analyze_run(st.run_dir);
  std::cout << analysis_summary(a);
  if (st.svg) {
    write_mask_svg(st.run_dir + "/masks.svg", a);
    write_routing_svg(st.run_dir + "/routing.svg", a);
    std::cout << "wrote " << st.run_dir << "/masks.svg and routing.svg\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hypernetwork-routed layer pruning for a toy diffusion denoiser"};
  app.require_subcommand(1);
  CliState st;

  CLI::App* pre = app.add_subcommand("pretrain", "train the dense teacher");
  pre->add_option("--config", st.config_path, "config file")->required();
  pre->add_option("--out", st.out_dir, "run directory (default: timestamped)");
  pre->callback([&] { cmd_pretrain(st); });

  CLI::App* tr = app.add_subcommand("train", "alternating pruning run");
  tr->add_option("--config", st.config_path, "config file");
  tr->add_option("--variant", st.variant,
                 "override variant: alter|static|manual|two_stage");
  tr->add_option("--teacher", st.teacher_path, "teacher checkpoint")->required();
  tr->add_option("--resume", st.resume_path, "student checkpoint to continue");
  tr->add_option("--out", st.out_dir, "run directory (default: timestamped)");
  tr->callback([&] { cmd_train(st); });

  CLI::App* sa = app.add_subcommand("sample", "reverse-diffusion sampling");
  sa->add_option("--checkpoint", st.checkpoint_path, "model checkpoint")->required();
  sa->add_option("--masks", st.masks_dir, "run dir with masks.csv/routing.csv");
  sa->add_flag("--dense", st.dense, "ignore masks, run the full network");
  sa->add_option("--steps", st.steps, "denoising steps");
  sa->add_option("--n", st.n_samples, "number of samples");
  sa->add_option("--seed", st.seed, "sampling seed");
  sa->add_flag("--hard,!--sim", st.hard,
               "physical block skipping (default) vs simulated masking");
  sa->add_option("--out", st.out_file, "output CSV (default samples.csv)");
  sa->callback([&] { cmd_sample(st); });

  CLI::App* be = app.add_subcommand("bench", "MAC and wall-clock benchmark");
  be->add_option("--checkpoint", st.checkpoint_path, "model checkpoint")->required();
  be->add_option("--masks", st.masks_dir, "run dir with masks.csv/routing.csv");
  be->add_option("--steps", st.steps, "denoising steps");
  be->add_option("--reps", st.reps, "timing repetitions");
  be->add_option("--seed", st.seed, "trajectory seed");
  be->add_option("--out", st.out_file, "also write the report CSV here");
  be->callback([&] { cmd_bench(st); });

  CLI::App* an = app.add_subcommand("analyze", "summarize an exported MaskSet");
  an->add_option("--run", st.run_dir, "run directory")->required();
  an->add_flag("--svg", st.svg, "write masks.svg and routing.svg");
  an->callback([&] { cmd_analyze(st); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  }
  return st.exit_code;
}
