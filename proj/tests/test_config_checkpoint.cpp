#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <string>

#include "alter/checkpoint.hpp"
#include "alter/config.hpp"
#include "support/test_util.hpp"

using namespace alter;

namespace {

std::string tmp_path(const std::string& name) {
  return std::string("/tmp/alter_test_") + name;
}

}  // namespace

TEST_CASE("variant names round-trip") {
  for (auto v : {Variant::kAlter, Variant::kStatic, Variant::kManual,
                 Variant::kTwoStage}) {
    CHECK(parse_variant(variant_name(v)) == v);
  }
  CHECK_THROWS_AS(parse_variant("bogus"), std::invalid_argument);
}

TEST_CASE("serialize/parse round-trips every field exactly") {
  TrainConfig cfg = testutil::tiny_config();
  cfg.variant = Variant::kManual;
  cfg.schedule = ScheduleKind::kCosine;
  cfg.lr_unet = 3.0000000000000004e-05;  // shortest form must survive
  cfg.weights.lambda_ratio = 1.25;
  cfg.weights.perf_unweighted_denoise = true;
  cfg.mmd_threshold = 0.07;
  cfg.checkpoint_every = 123;

  std::string text = cfg.serialize();
  TrainConfig back = TrainConfig::parse_text(text, "mem");
  CHECK(back.serialize() == text);
  CHECK(back.total_steps == cfg.total_steps);
  CHECK(back.lr_unet == cfg.lr_unet);
  CHECK(back.variant == cfg.variant);
  CHECK(back.schedule == cfg.schedule);
  CHECK(back.weights.lambda_ratio == cfg.weights.lambda_ratio);
  CHECK(back.weights.perf_unweighted_denoise == true);
  CHECK(back.seed == cfg.seed);
  CHECK(back.data.sigma == cfg.data.sigma);
  CHECK(back.mmd_threshold == cfg.mmd_threshold);

  // Defaults also survive a round trip.
  TrainConfig dflt;
  CHECK(TrainConfig::parse_text(dflt.serialize(), "mem").serialize() ==
        dflt.serialize());
}

TEST_CASE("parser reports the offending line") {
  // Comments and blank lines are skipped and do not shift the count.
  std::string text = "# comment\n\ntotal_steps = 10\nnot a pair\n";
  try {
    TrainConfig::parse_text(text, "unit");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.line() == 4);
    CHECK(std::string(e.what()).find("expected key = value") !=
          std::string::npos);
  }

  try {
    TrainConfig::parse_text("mystery = 1\n", "unit");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.line() == 1);
    CHECK(std::string(e.what()).find("unknown key") != std::string::npos);
    CHECK(std::string(e.what()).find("mystery") != std::string::npos);
  }

  try {
    TrainConfig::parse_text("total_steps = 10\nbatch_size = soon\n", "unit");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.line() == 2);
    CHECK(std::string(e.what()).find("batch_size") != std::string::npos);
  }

  CHECK_THROWS_AS(TrainConfig::parse_file("/nonexistent/alter.cfg"),
                  ConfigError);
}

TEST_CASE("semantic validation is separate from parsing") {
  // Parsing accepts any well-formed text; validate() owns the rules.
  TrainConfig cfg = TrainConfig::parse_text("warmup_steps = 9999\n", "mem");
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  auto expect_reject = [](const std::function<void(TrainConfig&)>& mutate,
                          const std::string& needle) {
    TrainConfig c = testutil::tiny_config();
    mutate(c);
    try {
      c.validate();
      FAIL(("expected ConfigError for " + needle));
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find(needle) != std::string::npos);
    }
  };
  expect_reject([](TrainConfig& c) { c.total_steps = 0; }, "total_steps");
  expect_reject([](TrainConfig& c) { c.hypernet_end = c.total_steps + 1; },
                "hypernet_end");
  expect_reject([](TrainConfig& c) { c.warmup_steps = c.total_steps; },
                "warmup_steps");
  expect_reject([](TrainConfig& c) { c.lr_unet = 0.0; }, "learning rates");
  expect_reject([](TrainConfig& c) { c.t_total = 1; }, "t_total");
  expect_reject([](TrainConfig& c) { c.model.n_layers = 3; }, "even");
  expect_reject([](TrainConfig& c) { c.n_experts = 0; }, "n_experts");
  expect_reject(
      [](TrainConfig& c) {
        c.variant = Variant::kStatic;
        c.n_experts = 2;
      },
      "static");
  expect_reject([](TrainConfig& c) { c.dataset_size = c.batch_size - 1; },
                "dataset_size");
  expect_reject([](TrainConfig& c) { c.mmd_threshold = 0.0; }, "mmd_threshold");
  expect_reject([](TrainConfig& c) { c.checkpoint_every = -1; },
                "checkpoint_every");

  TrainConfig ok = testutil::tiny_config();
  CHECK_NOTHROW(ok.validate());
  ok.variant = Variant::kStatic;
  ok.n_experts = 1;
  CHECK_NOTHROW(ok.validate());

  // The derived hypernet config carries the denoiser's embedding width.
  TrainConfig t = testutil::tiny_config();
  HypernetConfig h = t.hypernet_config();
  CHECK(h.n_layers == t.model.n_layers);
  CHECK(h.d_emb == t.model.emb_dim());
  CHECK(h.n_experts == t.n_experts);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  Checkpoint ckpt;
  ckpt.kind = "student";
  ckpt.step = 1234;
  ckpt.config_text = testutil::tiny_config().serialize();
  // Values chosen to stress exactness: denormals, negative zero, extremes.
  std::vector<double> a = {0.1, -0.2, 5e-324, -0.0, 1e308, 0.65};
  std::vector<double> b = {42.0};
  ckpt.arrays.add("theta", a.data(), static_cast<int64_t>(a.size()));
  ckpt.arrays.add("phi", b.data(), static_cast<int64_t>(b.size()));

  const std::string path = tmp_path("roundtrip.ckpt");
  save_checkpoint(path, ckpt);
  Checkpoint back = load_checkpoint(path);
  CHECK(back.kind == "student");
  CHECK(back.step == 1234);
  CHECK(back.config_text == ckpt.config_text);
  REQUIRE(back.arrays.contains("theta"));
  REQUIRE(back.arrays.contains("phi"));
  CHECK_FALSE(back.arrays.contains("thets"));
  const auto& ta = back.arrays.find("theta");
  REQUIRE(ta.size() == a.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(std::memcmp(&ta[i], &a[i], sizeof(double)) == 0);
  }
  CHECK(back.arrays.find("phi")[0] == 42.0);
  CHECK_THROWS_AS(back.arrays.find("missing"), std::runtime_error);

  // Saving the loaded copy reproduces identical bytes.
  const std::string path2 = tmp_path("roundtrip2.ckpt");
  save_checkpoint(path2, back);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string bytes1((std::istreambuf_iterator<char>(f1)), {});
  std::string bytes2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(bytes1 == bytes2);
  std::remove(path.c_str());
  std::remove(path2.c_str());
}

TEST_CASE("malformed checkpoints are rejected") {
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/x.ckpt"), std::runtime_error);

  const std::string bad = tmp_path("bad.ckpt");
  {
    std::ofstream out(bad, std::ios::binary);
    out << "definitely not a checkpoint";
  }
  CHECK_THROWS_AS(load_checkpoint(bad), std::runtime_error);

  // Valid file truncated mid-payload.
  Checkpoint ckpt;
  ckpt.kind = "teacher";
  std::vector<double> a(64, 1.5);
  ckpt.arrays.add("theta", a.data(), 64);
  const std::string good = tmp_path("good.ckpt");
  save_checkpoint(good, ckpt);
  std::ifstream in(good, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  in.close();
  {
    std::ofstream out(bad, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 100));
  }
  CHECK_THROWS_AS(load_checkpoint(bad), std::runtime_error);
  std::remove(bad.c_str());
  std::remove(good.c_str());
}
