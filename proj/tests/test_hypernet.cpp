#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "alter/common.hpp"
#include "alter/hypernet.hpp"
#include "alter/schedule.hpp"
#include "support/test_util.hpp"

using namespace alter;
using testutil::fd_compare;
using testutil::hash_params;
using testutil::random_matrix;

namespace {

HypernetConfig small_cfg() {
  HypernetConfig cfg;
  cfg.n_experts = 2;
  cfg.n_layers = 3;
  cfg.d_input = 8;
  cfg.d_expert = 6;
  cfg.d_router = 5;
  cfg.d_emb = 4;
  return cfg;
}

// Finite differences need interior sigmoids: with the production bias/tau the
// generator saturates and true gradients sink below the fp noise of the loss.
// Neutral bias, unit temperatures and wider init keep every path O(1).
HypernetConfig fd_cfg() {
  HypernetConfig cfg = small_cfg();
  cfg.bias_gen = 0.0;
  cfg.tau_gen = 1.0;
  cfg.tau_route = 1.0;
  cfg.init_std = 0.5;
  return cfg;
}

struct Fixture {
  HypernetState state;
  Eigen::MatrixXd emb, gen_noise, route_noise;

  explicit Fixture(uint64_t seed, int batch = 5,
                   const HypernetConfig& cfg = small_cfg())
      : state(HypernetState::init(cfg, seed)) {
    Rng rng(mix_seed(seed, kStreamNoise, 21));
    emb = random_matrix(batch, state.cfg.d_emb, rng);
    // Gumbel draws from the central band; the transform's tails are covered
    // by the dedicated sampling cases.
    gen_noise.resize(state.cfg.n_experts, state.cfg.n_layers);
    for (int e = 0; e < gen_noise.rows(); ++e) {
      for (int l = 0; l < gen_noise.cols(); ++l) {
        gen_noise(e, l) = gumbel_from_uniform(0.1 + 0.8 * rng.uniform());
      }
    }
    route_noise.resize(batch, state.cfg.n_experts);
    for (int b = 0; b < batch; ++b) {
      for (int e = 0; e < route_noise.cols(); ++e) {
        route_noise(b, e) = gumbel_from_uniform(0.1 + 0.8 * rng.uniform());
      }
    }
  }
};

}  // namespace

TEST_CASE("config validation") {
  HypernetConfig cfg = small_cfg();
  cfg.n_experts = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = small_cfg();
  cfg.d_input = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = small_cfg();
  cfg.tau_gen = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = small_cfg();
  cfg.tau_route = -0.1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = small_cfg();
  cfg.init_std = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  CHECK_NOTHROW(small_cfg().validate());
}

TEST_CASE("expert embeddings are orthonormal and excluded from training") {
  // Wide Z (rows <= d_input): rows orthonormal.
  HypernetState s = HypernetState::init(small_cfg(), 3);
  Eigen::MatrixXd gram = s.z * s.z.transpose();
  Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(gram.rows(), gram.cols());
  CHECK((gram - eye).cwiseAbs().maxCoeff() <= 1e-12);

  // Tall Z (rows > d_input): columns orthonormal instead.
  HypernetConfig tall = small_cfg();
  tall.n_experts = 3;
  tall.n_layers = 4;
  tall.d_input = 5;
  HypernetState st = HypernetState::init(tall, 3);
  Eigen::MatrixXd gram_c = st.z.transpose() * st.z;
  Eigen::MatrixXd eye_c = Eigen::MatrixXd::Identity(5, 5);
  CHECK((gram_c - eye_c).cwiseAbs().maxCoeff() <= 1e-12);

  // visit_params never exposes z, so optimizer steps cannot touch it.
  const HypernetConfig& cfg = s.cfg;
  int64_t expected = cfg.d_expert * cfg.d_input + cfg.d_expert  // gen_fc1
                     + 2 * cfg.d_expert                         // gen_ln
                     + cfg.d_expert                             // gen_out
                     + cfg.d_router * cfg.d_emb + cfg.d_router  // route_fc1
                     + 2 * cfg.d_router                         // route_ln
                     + cfg.n_experts * cfg.d_router;            // route_out
  CHECK(s.param_count() == expected);
  int64_t visited = 0;
  s.visit_params([&](const std::string& name, double*, int64_t n) {
    CHECK(name.find('z') == std::string::npos);
    visited += n;
  });
  CHECK(visited == expected);
}

TEST_CASE("init is deterministic and grads mirror the parameter layout") {
  HypernetState a = HypernetState::init(small_cfg(), 9);
  HypernetState b = HypernetState::init(small_cfg(), 9);
  CHECK(hash_params([&](const ParamVisitor& fn) { a.visit_params(fn); }) ==
        hash_params([&](const ParamVisitor& fn) { b.visit_params(fn); }));
  CHECK(a.z == b.z);
  HypernetState c = HypernetState::init(small_cfg(), 10);
  CHECK(hash_params([&](const ParamVisitor& fn) { a.visit_params(fn); }) !=
        hash_params([&](const ParamVisitor& fn) { c.visit_params(fn); }));

  std::vector<std::string> names;
  a.visit_params([&](const std::string& n, double*, int64_t) {
    names.push_back(n);
  });
  CHECK(names.front() == "gen_fc1.w");
  CHECK(names.back() == "route_out");

  HypernetGrads g = HypernetGrads::zeros_like(a);
  std::vector<std::string> gnames;
  int64_t total = 0;
  double sum = 0.0;
  g.visit_params([&](const std::string& n, double* d, int64_t cnt) {
    gnames.push_back(n);
    total += cnt;
    for (int64_t i = 0; i < cnt; ++i) sum += std::abs(d[i]);
  });
  CHECK(gnames == names);
  CHECK(total == a.param_count());
  CHECK(sum == 0.0);
}

TEST_CASE("gumbel transform and sigmoid sampling") {
  // Deterministic transform of the underlying uniform.
  Rng rng(mix_seed(5, kStreamGumbelGen, 1));
  for (int i = 0; i < 200; ++i) {
    double u = rng.uniform();
    CHECK(gumbel_from_uniform(u) ==
          doctest::Approx(-std::log(-std::log(u))).epsilon(1e-12));
  }

  // soft matches the closed form, hard is the half threshold.
  Rng rng2(mix_seed(5, kStreamGumbelGen, 2));
  int zeros = 0, ones = 0;
  for (int i = 0; i < 200; ++i) {
    double logit = 4.0 * (rng2.uniform() - 0.5);
    double g = gumbel_from_uniform(rng2.uniform());
    StgsResult r = st_gumbel_sigmoid(logit, 0.4, 4.0, g);
    double want = 1.0 / (1.0 + std::exp(-(logit + 4.0 + g) / 0.4));
    CHECK(testutil::rel_err(r.soft, want) <= 1e-12);
    CHECK(r.hard == (r.soft >= 0.5 ? 1 : 0));
    (r.hard ? ones : zeros) += 1;
  }
  CHECK(ones > 0);  // bias 4 keeps most draws on

  CHECK_THROWS_AS(
      st_gumbel_sigmoid(std::numeric_limits<double>::quiet_NaN(), 0.4, 0.0, 0.0),
      NumericError);
  CHECK_THROWS_AS(
      st_gumbel_sigmoid(std::numeric_limits<double>::infinity(), 0.4, 0.0, 0.0),
      NumericError);
}

TEST_CASE("gumbel softmax sampling") {
  Rng rng(mix_seed(6, kStreamGumbelRouter, 1));
  for (int i = 0; i < 100; ++i) {
    Eigen::VectorXd logits = random_matrix(4, 1, rng, -2.0, 2.0).col(0);
    Eigen::VectorXd g(4);
    for (int j = 0; j < 4; ++j) g[j] = gumbel_from_uniform(rng.uniform());
    StgmResult r = st_gumbel_softmax(logits, 0.4, 0.0, g);

    Eigen::ArrayXd shifted = (logits + g).array() / 0.4;
    Eigen::ArrayXd ex = (shifted - shifted.maxCoeff()).exp();
    Eigen::VectorXd want = (ex / ex.sum()).matrix();
    CHECK((r.soft - want).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(r.soft.sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.argmax == argmax_lowest((logits + g)));
    CHECK(r.argmax == argmax_lowest(r.soft));

    // Shift invariance up to rounding of the shifted sums.
    StgmResult rs = st_gumbel_softmax(
        (logits.array() + 137.0).matrix(), 0.4, 0.0, g);
    CHECK((rs.soft - r.soft).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(rs.argmax == r.argmax);
  }

  // Max-shifted exponentials keep huge logits finite.
  Eigen::VectorXd huge(3);
  huge << 5000.0, 4999.0, 0.0;
  StgmResult rh = st_gumbel_softmax(huge, 0.4, 0.0, Eigen::VectorXd::Zero(3));
  CHECK(std::isfinite(rh.soft.sum()));
  CHECK(rh.soft.sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rh.argmax == 0);

  Eigen::VectorXd ties(3);
  ties << 1.0, 1.0, 0.0;
  CHECK(argmax_lowest(ties) == 0);
  CHECK(st_gumbel_softmax(ties, 0.4, 0.0, Eigen::VectorXd::Zero(3)).argmax == 0);

  Eigen::VectorXd bad(2);
  bad << 0.0, std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(st_gumbel_softmax(bad, 0.4, 0.0, Eigen::VectorXd::Zero(2)),
                  NumericError);
  CHECK_THROWS_AS(st_gumbel_softmax(ties, 0.4, 0.0, Eigen::VectorXd::Zero(2)),
                  std::invalid_argument);
}

TEST_CASE("compose_mask is the expert-weighted mixture") {
  Rng rng(mix_seed(7, kStreamNoise, 3));
  for (int i = 0; i < 20; ++i) {
    Eigen::MatrixXd masks = random_matrix(3, 5, rng, 0.0, 1.0);
    Eigen::VectorXd w = random_matrix(3, 1, rng, 0.0, 1.0).col(0);
    w /= w.sum();
    Eigen::VectorXd got = compose_mask(masks, w);
    Eigen::VectorXd want = masks.transpose() * w;
    CHECK((got - want).cwiseAbs().maxCoeff() <= 1e-15);

    // One-hot weights select a row.
    Eigen::VectorXd onehot = Eigen::VectorXd::Zero(3);
    onehot[i % 3] = 1.0;
    CHECK((compose_mask(masks, onehot) -
           masks.row(i % 3).transpose()).cwiseAbs().maxCoeff() <= 1e-15);
  }
  CHECK_THROWS_AS(compose_mask(Eigen::MatrixXd::Zero(3, 5),
                               Eigen::VectorXd::Zero(4)),
                  std::invalid_argument);
}

TEST_CASE("eval masks match the noise-free brute force") {
  Fixture f(12);
  const int t_total = 100;
  Rng rng(mix_seed(12, kStreamNoise, 4));
  Eigen::MatrixXd emb_table = random_matrix(t_total, f.state.cfg.d_emb, rng);
  MaskSet ms = eval_masks(f.state, emb_table);

  Eigen::MatrixXd logits = generator_logits(f.state, nullptr);
  CHECK((ms.expert_logits - logits).cwiseAbs().maxCoeff() <= 1e-15);
  for (int e = 0; e < f.state.cfg.n_experts; ++e) {
    for (int l = 0; l < f.state.cfg.n_layers; ++l) {
      // Zero noise: thresholding the biased logit is the whole story.
      int want = logits(e, l) + f.state.cfg.bias_gen >= 0.0 ? 1 : 0;
      CHECK(ms.expert_masks(e, l) == want);
      StgsResult r = st_gumbel_sigmoid(logits(e, l), f.state.cfg.tau_gen,
                                       f.state.cfg.bias_gen, 0.0);
      CHECK(ms.expert_masks(e, l) == r.hard);
    }
  }

  Eigen::MatrixXd rl = router_logits(f.state, emb_table, nullptr);
  CHECK((ms.routing_logits - rl).cwiseAbs().maxCoeff() <= 1e-15);
  CHECK(static_cast<int>(ms.routing_table.size()) == t_total);
  for (int t = 0; t < t_total; ++t) {
    CHECK(ms.routing_table[t] == argmax_lowest(rl.row(t).transpose()));
    Eigen::VectorXd m = ms.mask_for_timestep(t);
    CHECK((m - ms.expert_masks.row(ms.routing_table[t]).transpose())
              .cwiseAbs().maxCoeff() == 0.0);
    std::vector<int> bits = ms.bits_for_timestep(t);
    for (int l = 0; l < f.state.cfg.n_layers; ++l) {
      CHECK(bits[static_cast<size_t>(l)] == (m[l] >= 0.5 ? 1 : 0));
    }
  }
  CHECK_THROWS_AS(ms.mask_for_timestep(-1), std::invalid_argument);
  CHECK_THROWS_AS(ms.mask_for_timestep(t_total), std::invalid_argument);

  // Hash keys on content: same set agrees, a flipped bit does not.
  MaskSet again = eval_masks(f.state, emb_table);
  CHECK(again.hash() == ms.hash());
  again.expert_masks(0, 0) = 1.0 - again.expert_masks(0, 0);
  CHECK(again.hash() != ms.hash());
}

TEST_CASE("forward draw contracts") {
  Fixture f(21);
  HyperDraw d = hyper_forward(f.state, f.emb, f.gen_noise, f.route_noise,
                              MaskMode::kHard);
  const int batch = f.emb.rows();
  CHECK(d.masks.rows() == batch);
  CHECK(d.masks.cols() == f.state.cfg.n_layers);
  CHECK(static_cast<int>(d.selected.size()) == batch);
  for (int b = 0; b < batch; ++b) {
    // Hard mode: each row is the selected expert's thresholded mask.
    CHECK((d.masks.row(b) - d.gen_hard.row(d.selected[b]))
              .cwiseAbs().maxCoeff() == 0.0);
    CHECK(d.selected[b] ==
          argmax_lowest((d.route_logits.row(b) + f.route_noise.row(b))
                            .transpose()));
  }
  for (int e = 0; e < d.gen_soft.rows(); ++e) {
    for (int l = 0; l < d.gen_soft.cols(); ++l) {
      CHECK(d.gen_hard(e, l) == (d.gen_soft(e, l) >= 0.5 ? 1.0 : 0.0));
    }
  }

  // Same noise, same draw; eval extraction is noise-free and can differ.
  HyperDraw d2 = hyper_forward(f.state, f.emb, f.gen_noise, f.route_noise,
                               MaskMode::kHard);
  CHECK(d2.masks == d.masks);
  CHECK(d2.selected == d.selected);

  HyperDraw ds = hyper_forward(f.state, f.emb, f.gen_noise, f.route_noise,
                               MaskMode::kSoft);
  for (int b = 0; b < batch; ++b) {
    Eigen::VectorXd want = compose_mask(ds.gen_soft,
                                        ds.route_soft.row(b).transpose());
    CHECK((ds.masks.row(b).transpose() - want).cwiseAbs().maxCoeff() <= 1e-15);
  }
  CHECK(ds.masks.minCoeff() >= 0.0);
  CHECK(ds.masks.maxCoeff() <= 1.0);

  // Shape validation.
  CHECK_THROWS_AS(hyper_forward(f.state, f.emb.leftCols(2), f.gen_noise,
                                f.route_noise, MaskMode::kHard),
                  std::invalid_argument);
  CHECK_THROWS_AS(hyper_forward(f.state, f.emb, f.gen_noise.leftCols(2),
                                f.route_noise, MaskMode::kHard),
                  std::invalid_argument);
  CHECK_THROWS_AS(hyper_forward(f.state, f.emb, f.gen_noise,
                                f.route_noise.topRows(2), MaskMode::kHard),
                  std::invalid_argument);
  std::vector<int> short_forced(batch - 1, 0);
  CHECK_THROWS_AS(hyper_forward(f.state, f.emb, f.gen_noise, f.route_noise,
                                MaskMode::kHard, &short_forced),
                  std::invalid_argument);

  // Non-finite parameters surface as NumericError, not silent NaN masks.
  HypernetState broken = HypernetState::init(small_cfg(), 21);
  broken.gen_fc1.b[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(hyper_forward(broken, f.emb, f.gen_noise, f.route_noise,
                                MaskMode::kHard),
                  NumericError);
}

TEST_CASE("forced routing overrides the sampled selection") {
  Fixture f(30);
  const int batch = f.emb.rows();
  std::vector<int> forced(batch);
  for (int b = 0; b < batch; ++b) forced[b] = b % f.state.cfg.n_experts;
  HyperDraw d = hyper_forward(f.state, f.emb, f.gen_noise, f.route_noise,
                              MaskMode::kHard, &forced);
  CHECK(d.forced);
  CHECK(d.selected == forced);
  for (int b = 0; b < batch; ++b) {
    CHECK((d.masks.row(b) - d.gen_hard.row(forced[b])).cwiseAbs().maxCoeff() ==
          0.0);
  }

  // Forced mode cuts the router out of the mask gradient; only the extra
  // logit path can reach router parameters.
  HypernetGrads g = HypernetGrads::zeros_like(f.state);
  Rng rng(mix_seed(30, kStreamNoise, 5));
  Eigen::MatrixXd w = random_matrix(batch, f.state.cfg.n_layers, rng);
  hyper_backward(f.state, d, w, Eigen::MatrixXd(), g);
  double route_abs = g.route_fc1.w.cwiseAbs().sum() +
                     g.route_fc1.b.cwiseAbs().sum() +
                     g.route_ln.gamma.cwiseAbs().sum() +
                     g.route_ln.beta.cwiseAbs().sum() +
                     g.route_out.cwiseAbs().sum();
  CHECK(route_abs == 0.0);
  double gen_abs = g.gen_fc1.w.cwiseAbs().sum() + g.gen_out.cwiseAbs().sum();
  CHECK(gen_abs > 0.0);
}

TEST_CASE("soft-mode gradients match finite differences") {
  Fixture f(41, 4, fd_cfg());
  Rng rng(mix_seed(41, kStreamNoise, 6));
  Eigen::MatrixXd w = random_matrix(4, f.state.cfg.n_layers, rng);

  HyperDraw d = hyper_forward(f.state, f.emb, f.gen_noise, f.route_noise,
                              MaskMode::kSoft);
  HypernetGrads g = HypernetGrads::zeros_like(f.state);
  hyper_backward(f.state, d, w, Eigen::MatrixXd(), g);

  auto loss = [&]() {
    HyperDraw p = hyper_forward(f.state, f.emb, f.gen_noise, f.route_noise,
                                MaskMode::kSoft);
    return (w.array() * p.masks.array()).sum();
  };
  auto rep = fd_compare(
      [&](const ParamVisitor& fn) { f.state.visit_params(fn); },
      [&](const ParamVisitor& fn) { g.visit_params(fn); }, loss, 6, 1e-5);
  CHECK(rep.checked >= 40);
  INFO("worst ", rep.worst_name, " rel err ", rep.worst);
  CHECK(rep.worst < 1e-6);
}

TEST_CASE("straight-through generator gradient matches its soft surrogate") {
  // Hard forward, forced routing: backward pretends the mask row was the
  // selected expert's soft value. FD of that surrogate is the contract.
  Fixture f(52, 4, fd_cfg());
  const int batch = 4;
  std::vector<int> forced = {0, 1, 1, 0};
  Rng rng(mix_seed(52, kStreamNoise, 7));
  Eigen::MatrixXd w = random_matrix(batch, f.state.cfg.n_layers, rng);

  HyperDraw d = hyper_forward(f.state, f.emb, f.gen_noise, f.route_noise,
                              MaskMode::kHard, &forced);
  HypernetGrads g = HypernetGrads::zeros_like(f.state);
  hyper_backward(f.state, d, w, Eigen::MatrixXd(), g);

  const auto& cfg = f.state.cfg;
  auto surrogate = [&]() {
    Eigen::MatrixXd logits = generator_logits(f.state, nullptr);
    double v = 0.0;
    for (int b = 0; b < batch; ++b) {
      for (int l = 0; l < cfg.n_layers; ++l) {
        StgsResult r = st_gumbel_sigmoid(logits(forced[b], l), cfg.tau_gen,
                                         cfg.bias_gen,
                                         f.gen_noise(forced[b], l));
        v += w(b, l) * r.soft;
      }
    }
    return v;
  };
  auto rep = fd_compare(
      [&](const ParamVisitor& fn) { f.state.visit_params(fn); },
      [&](const ParamVisitor& fn) { g.visit_params(fn); }, surrogate, 6, 1e-5);
  INFO("worst ", rep.worst_name, " rel err ", rep.worst);
  CHECK(rep.worst < 1e-6);
}

TEST_CASE("hard-mode router gradient uses hard masks through the softmax") {
  // The router path of the straight-through backward must equal injecting
  // d_route_logits = J_softmax^T (d_masks . gen_hard^T) via the extra hook.
  Fixture f(63, 4);
  const int batch = 4;
  const auto& cfg = f.state.cfg;
  Rng rng(mix_seed(63, kStreamNoise, 8));
  Eigen::MatrixXd w = random_matrix(batch, cfg.n_layers, rng);

  HyperDraw d = hyper_forward(f.state, f.emb, f.gen_noise, f.route_noise,
                              MaskMode::kHard);
  HypernetGrads got = HypernetGrads::zeros_like(f.state);
  hyper_backward(f.state, d, w, Eigen::MatrixXd(), got);

  Eigen::MatrixXd d_route_soft = w * d.gen_hard.transpose();
  Eigen::MatrixXd extra(batch, cfg.n_experts);
  for (int b = 0; b < batch; ++b) {
    Eigen::VectorXd y = d.route_soft.row(b).transpose();
    Eigen::VectorXd dy = d_route_soft.row(b).transpose();
    extra.row(b) = (y.array() * (dy.array() - y.dot(dy)) / cfg.tau_route)
                       .matrix().transpose();
  }
  // Forcing the sampled selection keeps masks identical but cuts the built-in
  // router path, so the extra hook carries the whole router gradient.
  HyperDraw df = hyper_forward(f.state, f.emb, f.gen_noise, f.route_noise,
                               MaskMode::kHard, &d.selected);
  CHECK(df.masks == d.masks);
  HypernetGrads want = HypernetGrads::zeros_like(f.state);
  hyper_backward(f.state, df, w, extra, want);

  double worst = 0.0;
  std::vector<std::pair<double*, int64_t>> gv, wv;
  got.visit_params([&](const std::string&, double* p, int64_t n) {
    gv.emplace_back(p, n);
  });
  want.visit_params([&](const std::string&, double* p, int64_t n) {
    wv.emplace_back(p, n);
  });
  for (size_t i = 0; i < gv.size(); ++i) {
    for (int64_t k = 0; k < gv[i].second; ++k) {
      worst = std::max(worst,
                       std::abs(gv[i].first[k] - wv[i].first[k]));
    }
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("extra router-logit gradients flow through the router mlp alone") {
  Fixture f(74, 3, fd_cfg());
  const auto& cfg = f.state.cfg;
  Rng rng(mix_seed(74, kStreamNoise, 9));
  Eigen::MatrixXd v = random_matrix(3, cfg.n_experts, rng);

  HyperDraw d = hyper_forward(f.state, f.emb, f.gen_noise, f.route_noise,
                              MaskMode::kSoft);
  HypernetGrads g = HypernetGrads::zeros_like(f.state);
  hyper_backward(f.state, d, Eigen::MatrixXd::Zero(3, cfg.n_layers), v, g);

  // Zero mask gradient: generator untouched.
  CHECK(g.gen_fc1.w.cwiseAbs().sum() == 0.0);
  CHECK(g.gen_out.cwiseAbs().sum() == 0.0);

  auto loss = [&]() {
    Eigen::MatrixXd rl = router_logits(f.state, f.emb, nullptr);
    return (v.array() * rl.array()).sum();
  };
  auto rep = fd_compare(
      [&](const ParamVisitor& fn) { f.state.visit_params(fn); },
      [&](const ParamVisitor& fn) { g.visit_params(fn); }, loss, 6, 1e-5);
  INFO("worst ", rep.worst_name, " rel err ", rep.worst);
  CHECK(rep.worst < 1e-6);

  CHECK_THROWS_AS(hyper_backward(f.state, d,
                                 Eigen::MatrixXd::Zero(3, cfg.n_layers),
                                 Eigen::MatrixXd::Zero(2, cfg.n_experts), g),
                  std::invalid_argument);
  CHECK_THROWS_AS(hyper_backward(f.state, d,
                                 Eigen::MatrixXd::Zero(2, cfg.n_layers),
                                 Eigen::MatrixXd(), g),
                  std::invalid_argument);
}
