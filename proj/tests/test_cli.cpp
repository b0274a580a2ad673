#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>

#include "alter/config.hpp"
#include "alter/sampler.hpp"
#include "support/proc.hpp"
#include "support/test_util.hpp"

using namespace alter;
using testutil::ProcResult;
using testutil::run_cmd;

namespace fs = std::filesystem;

namespace {

const std::string kBin = ALTER_CLI_BIN;
const std::string kBase = "/tmp/alter_cli_tests";

// t_total must cover the pretrain gate's 20-step sampler; the huge threshold
// keeps the gate green for a 6-step toy teacher.
TrainConfig cli_config() {
  TrainConfig cfg = testutil::tiny_config();
  cfg.t_total = 20;
  cfg.mmd_threshold = 100.0;
  cfg.checkpoint_every = 2;
  return cfg;
}

std::string write_config(const std::string& name, const TrainConfig& cfg) {
  fs::create_directories(kBase);
  const std::string path = kBase + "/" + name;
  std::ofstream out(path, std::ios::trunc);
  out << cfg.serialize();
  return path;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

// Pretrain and prune runs shared by the downstream command tests.
const std::string& teacher_dir() {
  static const std::string dir = [] {
    const std::string d = kBase + "/teacher";
    fs::remove_all(d);
    ProcResult r = run_cmd(kBin + " pretrain --config " +
                           write_config("cfg.txt", cli_config()) + " --out " + d);
    REQUIRE(r.code == 0);
    return d;
  }();
  return dir;
}

const std::string& student_dir() {
  static const std::string dir = [] {
    const std::string d = kBase + "/student";
    fs::remove_all(d);
    ProcResult r = run_cmd(kBin + " train --config " + kBase + "/cfg.txt" +
                           " --teacher " + teacher_dir() + "/checkpoint.bin" +
                           " --out " + d);
    REQUIRE(r.code == 0);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("usage errors exit 1 and help exits 0") {
  CHECK(run_cmd(kBin).code == 1);
  CHECK(run_cmd(kBin + " frobnicate").code == 1);
  CHECK(run_cmd(kBin + " train").code == 1);  // --teacher is required
  ProcResult help = run_cmd(kBin + " --help");
  CHECK(help.code == 0);
  CHECK(help.output.find("pretrain") != std::string::npos);
  CHECK(help.output.find("bench") != std::string::npos);
}

TEST_CASE("pretrain emits a gated teacher run") {
  const std::string& dir = teacher_dir();
  CHECK(fs::exists(dir + "/checkpoint.bin"));
  CHECK(fs::exists(dir + "/metrics.csv"));
  CHECK(fs::exists(dir + "/config_resolved.txt"));
  CHECK(slurp(dir + "/gate.txt").find("passed=true") != std::string::npos);
  // The submitted config is preserved byte for byte.
  CHECK(slurp(dir + "/config.txt") == slurp(kBase + "/cfg.txt"));

  // An unreachable threshold turns the same run into exit 3.
  TrainConfig strict = cli_config();
  strict.mmd_threshold = 1e-9;
  ProcResult r = run_cmd(kBin + " pretrain --config " +
                         write_config("strict.txt", strict) + " --out " + kBase +
                         "/teacher_strict");
  CHECK(r.code == 3);
  CHECK(r.output.find("quality gate failed") != std::string::npos);
}

TEST_CASE("bad inputs exit 2 and name the problem") {
  ProcResult miss = run_cmd(kBin + " pretrain --config /tmp/alter_nope.txt");
  CHECK(miss.code == 2);
  CHECK(miss.output.find("/tmp/alter_nope.txt") != std::string::npos);

  // A student checkpoint is not a teacher.
  ProcResult wrong = run_cmd(kBin + " train --config " + kBase + "/cfg.txt" +
                             " --teacher " + student_dir() + "/checkpoint.bin" +
                             " --out " + kBase + "/x1");
  CHECK(wrong.code == 2);
  CHECK(wrong.output.find("teacher") != std::string::npos);

  ProcResult variant = run_cmd(kBin + " train --config " + kBase + "/cfg.txt" +
                               " --teacher " + teacher_dir() +
                               "/checkpoint.bin --variant bogus --out " + kBase +
                               "/x2");
  CHECK(variant.code == 2);
  CHECK(variant.output.find("bogus") != std::string::npos);
}

TEST_CASE("training runs are reproducible and export mask artifacts") {
  const std::string& dir = student_dir();
  CHECK(fs::exists(dir + "/masks.csv"));
  CHECK(fs::exists(dir + "/routing.csv"));
  CHECK(fs::exists(dir + "/checkpoint_step2.bin"));

  const std::string twin = kBase + "/student_twin";
  fs::remove_all(twin);
  ProcResult r = run_cmd(kBin + " train --config " + kBase + "/cfg.txt" +
                         " --teacher " + teacher_dir() + "/checkpoint.bin" +
                         " --out " + twin);
  CHECK(r.code == 0);
  CHECK(slurp(twin + "/checkpoint.bin") == slurp(dir + "/checkpoint.bin"));
  CHECK(slurp(twin + "/metrics.csv") == slurp(dir + "/metrics.csv"));
  CHECK(slurp(twin + "/masks.csv") == slurp(dir + "/masks.csv"));

  // Variant override trims the expert axis down to one row.
  const std::string stat = kBase + "/student_static";
  fs::remove_all(stat);
  ProcResult rs = run_cmd(kBin + " train --config " + kBase + "/cfg.txt" +
                          " --variant static --teacher " + teacher_dir() +
                          "/checkpoint.bin --out " + stat);
  CHECK(rs.code == 0);
  TrainConfig echoed = TrainConfig::parse_file(stat + "/config_resolved.txt");
  CHECK(echoed.variant == Variant::kStatic);
  CHECK(echoed.n_experts == 1);
}

TEST_CASE("resume continues a checkpoint to the same final state") {
  const std::string& dir = student_dir();
  const std::string cont = kBase + "/student_resumed";
  fs::remove_all(cont);
  ProcResult r = run_cmd(kBin + " train --teacher " + teacher_dir() +
                         "/checkpoint.bin --resume " + dir +
                         "/checkpoint_step4.bin --out " + cont);
  CHECK(r.code == 0);
  CHECK(slurp(cont + "/checkpoint.bin") == slurp(dir + "/checkpoint.bin"));

  // The resumed log holds exactly the post-checkpoint tail.
  const std::string full = slurp(dir + "/metrics.csv");
  const std::string tail = slurp(cont + "/metrics.csv");
  CHECK(tail.size() < full.size());
  CHECK(full.substr(full.size() - tail.size()) == tail);

  ProcResult bad = run_cmd(kBin + " train --teacher " + teacher_dir() +
                           "/checkpoint.bin --resume " + teacher_dir() +
                           "/checkpoint.bin --out " + kBase + "/x3");
  CHECK(bad.code == 2);
  CHECK(bad.output.find("student checkpoint") != std::string::npos);
}

TEST_CASE("sample writes deterministic CSVs and honors mask sources") {
  const std::string& dir = student_dir();
  const std::string ck = dir + "/checkpoint.bin";
  auto sample_cmd = [&](const std::string& out, const std::string& extra) {
    return kBin + " sample --checkpoint " + ck + " --steps 5 --n 40 --seed 9 " +
           extra + " --out " + out;
  };

  ProcResult a = run_cmd(sample_cmd(kBase + "/s_a.csv", ""));
  CHECK(a.code == 0);
  Eigen::MatrixXd pa = read_samples_csv(kBase + "/s_a.csv");
  CHECK(pa.rows() == 40);
  CHECK(pa.allFinite());

  // Same seed, same bytes; new seed, new points.
  CHECK(run_cmd(sample_cmd(kBase + "/s_b.csv", "")).code == 0);
  CHECK(slurp(kBase + "/s_a.csv") == slurp(kBase + "/s_b.csv"));
  CHECK(run_cmd(kBin + " sample --checkpoint " + ck +
                " --steps 5 --n 40 --seed 10 --out " + kBase + "/s_c.csv")
            .code == 0);
  CHECK(slurp(kBase + "/s_c.csv") != slurp(kBase + "/s_a.csv"));

  // The exported mask CSVs reproduce the checkpoint's own hypernet masks.
  CHECK(run_cmd(sample_cmd(kBase + "/s_m.csv", "--masks " + dir)).code == 0);
  CHECK(slurp(kBase + "/s_m.csv") == slurp(kBase + "/s_a.csv"));

  // Simulated masking tracks physical skipping to rounding error.
  CHECK(run_cmd(sample_cmd(kBase + "/s_sim.csv", "--sim")).code == 0);
  Eigen::MatrixXd sim = read_samples_csv(kBase + "/s_sim.csv");
  CHECK((sim - pa).cwiseAbs().maxCoeff() <= 1e-9);

  // Dense ignores the masks; a teacher checkpoint has none to begin with.
  CHECK(run_cmd(sample_cmd(kBase + "/s_d.csv", "--dense")).code == 0);
  CHECK(run_cmd(kBin + " sample --checkpoint " + teacher_dir() +
                "/checkpoint.bin --steps 5 --n 40 --seed 9 --out " + kBase +
                "/s_t.csv")
            .code == 0);
}

TEST_CASE("bench prints the report and needs a mask source") {
  const std::string& dir = student_dir();
  ProcResult r = run_cmd(kBin + " bench --checkpoint " + dir +
                         "/checkpoint.bin --steps 5 --reps 3 --seed 2 --out " +
                         kBase + "/bench.csv");
  CHECK(r.code == 0);
  CHECK(r.output.find(bench_csv_header()) != std::string::npos);
  const std::string csv = slurp(kBase + "/bench.csv");
  CHECK(csv.rfind(bench_csv_header(), 0) == 0);
  CHECK(csv.find("\n5,") != std::string::npos);

  ProcResult no_masks = run_cmd(kBin + " bench --checkpoint " + teacher_dir() +
                                "/checkpoint.bin --steps 5 --reps 3");
  CHECK(no_masks.code == 2);
  CHECK(no_masks.output.find("mask source") != std::string::npos);
}

TEST_CASE("analyze summarizes an exported run") {
  const std::string& dir = student_dir();
  ProcResult r = run_cmd(kBin + " analyze --run " + dir + " --svg");
  CHECK(r.code == 0);
  CHECK(r.output.find("experts: 2") != std::string::npos);
  CHECK(r.output.find("mean sparsity S:") != std::string::npos);
  CHECK(r.output.find("routing entropy:") != std::string::npos);
  CHECK(slurp(dir + "/masks.svg").rfind("<svg", 0) == 0);
  CHECK(slurp(dir + "/routing.svg").rfind("<svg", 0) == 0);

  CHECK(run_cmd(kBin + " analyze --run /tmp/alter_absent_run").code == 2);
}
