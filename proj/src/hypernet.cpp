#include "alter/hypernet.hpp"

#include <cmath>
#include <stdexcept>

#include "alter/common.hpp"

namespace alter {

namespace {
constexpr double kLnEps = 1e-5;
}

void HypernetConfig::validate() const {
  if (n_experts < 1 || n_layers < 1 || d_input < 1 || d_expert < 1 ||
      d_router < 1 || d_emb < 1) {
    throw std::invalid_argument("hypernet dims must be positive");
  }
  if (tau_gen <= 0.0 || tau_route <= 0.0) {
    throw std::invalid_argument("temperatures must be positive");
  }
  if (init_std <= 0.0) throw std::invalid_argument("init_std must be positive");
}

namespace {

void fill_normal(Eigen::MatrixXd& m, Rng& rng, double std_dev) {
  for (int r = 0; r < m.rows(); ++r) {
    for (int c = 0; c < m.cols(); ++c) m(r, c) = std_dev * rng.normal();
  }
}

// Orthonormal rows when rows <= cols, orthonormal columns otherwise.
Eigen::MatrixXd orthogonal_init(int rows, int cols, Rng& rng) {
  bool tall = rows > cols;
  int r = tall ? rows : cols;
  int c = tall ? cols : rows;
  Eigen::MatrixXd gauss(r, c);
  fill_normal(gauss, rng, 1.0);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gauss);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(r, c);
  // Fix signs so the factorization is unique (positive diagonal of R).
  Eigen::MatrixXd rmat = qr.matrixQR().topRows(c).triangularView<Eigen::Upper>();
  for (int i = 0; i < c; ++i) {
    if (rmat(i, i) < 0.0) q.col(i) = -q.col(i);
  }
  return tall ? q : Eigen::MatrixXd(q.transpose());
}

template <typename State, typename Fn>
void visit_state(State& s, const Fn& fn) {
  fn("gen_fc1.w", s.gen_fc1.w.data(), s.gen_fc1.w.size());
  fn("gen_fc1.b", s.gen_fc1.b.data(), s.gen_fc1.b.size());
  fn("gen_ln.gamma", s.gen_ln.gamma.data(), s.gen_ln.gamma.size());
  fn("gen_ln.beta", s.gen_ln.beta.data(), s.gen_ln.beta.size());
  fn("gen_out", s.gen_out.data(), s.gen_out.size());
  fn("route_fc1.w", s.route_fc1.w.data(), s.route_fc1.w.size());
  fn("route_fc1.b", s.route_fc1.b.data(), s.route_fc1.b.size());
  fn("route_ln.gamma", s.route_ln.gamma.data(), s.route_ln.gamma.size());
  fn("route_ln.beta", s.route_ln.beta.data(), s.route_ln.beta.size());
  fn("route_out", s.route_out.data(), s.route_out.size());
}

struct LnForward {
  Eigen::MatrixXd xhat;
  Eigen::VectorXd inv_std;
};

LnForward layer_norm_rows(const Eigen::MatrixXd& x) {
  LnForward out;
  Eigen::VectorXd mean = x.rowwise().mean();
  Eigen::MatrixXd centered = x.colwise() - mean;
  Eigen::VectorXd var = centered.array().square().rowwise().mean();
  out.inv_std = (var.array() + kLnEps).rsqrt();
  out.xhat = centered.array().colwise() * out.inv_std.array();
  return out;
}

// dx for y = gamma .* xhat + beta, given dy and the forward cache.
Eigen::MatrixXd layer_norm_backward(const Eigen::MatrixXd& dy,
                                    const Eigen::MatrixXd& xhat,
                                    const Eigen::VectorXd& inv_std,
                                    const Eigen::VectorXd& gamma,
                                    Eigen::VectorXd* d_gamma,
                                    Eigen::VectorXd* d_beta) {
  if (d_gamma) {
    *d_gamma += (dy.array() * xhat.array()).colwise().sum().matrix().transpose();
  }
  if (d_beta) *d_beta += dy.colwise().sum().transpose();
  Eigen::MatrixXd dxhat = (dy.array().rowwise() * gamma.transpose().array()).matrix();
  Eigen::VectorXd m1 = dxhat.rowwise().mean();
  Eigen::VectorXd m2 = (dxhat.array() * xhat.array()).rowwise().mean();
  Eigen::MatrixXd dx =
      ((dxhat.colwise() - m1).array() - xhat.array().colwise() * m2.array()).matrix();
  return (dx.array().colwise() * inv_std.array()).matrix();
}

// Shared two-layer MLP: fc1 -> layer norm -> relu -> linear, rows batched.
Eigen::MatrixXd mlp_forward(const Eigen::MatrixXd& in, const LinearLayer& fc1,
                            const LayerNorm& ln, const Eigen::MatrixXd& out_w,
                            MlpCache* cache) {
  Eigen::MatrixXd h = (in * fc1.w.transpose()).rowwise() + fc1.b.transpose();
  LnForward lnf = layer_norm_rows(h);
  Eigen::MatrixXd y =
      ((lnf.xhat.array().rowwise() * ln.gamma.transpose().array()).rowwise() +
       ln.beta.transpose().array())
          .matrix();
  Eigen::MatrixXd act = y.cwiseMax(0.0);
  if (cache) {
    cache->in = in;
    cache->xhat = std::move(lnf.xhat);
    cache->inv_std = std::move(lnf.inv_std);
    cache->act = act;
  }
  return act * out_w.transpose();
}

// Backward through the same stack; d_out is the gradient at the MLP output.
void mlp_backward(const Eigen::MatrixXd& d_out, const MlpCache& cache,
                  const LayerNorm& ln, const Eigen::MatrixXd& out_w,
                  LinearLayer& d_fc1, LayerNorm& d_ln,
                  Eigen::MatrixXd& d_out_w) {
  d_out_w += d_out.transpose() * cache.act;
  Eigen::MatrixXd dact = d_out * out_w;
  Eigen::MatrixXd dy =
      ((cache.act.array() > 0.0).cast<double>() * dact.array()).matrix();
  Eigen::MatrixXd dh = layer_norm_backward(dy, cache.xhat, cache.inv_std,
                                           ln.gamma, &d_ln.gamma, &d_ln.beta);
  d_fc1.w += dh.transpose() * cache.in;
  d_fc1.b += dh.colwise().sum().transpose();
}

}  // namespace

HypernetState HypernetState::init(const HypernetConfig& cfg, uint64_t seed) {
  cfg.validate();
  HypernetState s;
  s.cfg = cfg;
  Rng rng(mix_seed(seed, kStreamInitPhi, 0));
  s.z = orthogonal_init(cfg.n_experts * cfg.n_layers, cfg.d_input, rng);
  s.gen_fc1.w.resize(cfg.d_expert, cfg.d_input);
  fill_normal(s.gen_fc1.w, rng, cfg.init_std);
  s.gen_fc1.b = Eigen::VectorXd::Zero(cfg.d_expert);
  s.gen_ln.gamma = Eigen::VectorXd::Ones(cfg.d_expert);
  s.gen_ln.beta = Eigen::VectorXd::Zero(cfg.d_expert);
  Eigen::MatrixXd tmp(1, cfg.d_expert);
  fill_normal(tmp, rng, cfg.init_std);
  s.gen_out = tmp.row(0).transpose();
  s.route_fc1.w.resize(cfg.d_router, cfg.d_emb);
  fill_normal(s.route_fc1.w, rng, cfg.init_std);
  s.route_fc1.b = Eigen::VectorXd::Zero(cfg.d_router);
  s.route_ln.gamma = Eigen::VectorXd::Ones(cfg.d_router);
  s.route_ln.beta = Eigen::VectorXd::Zero(cfg.d_router);
  s.route_out.resize(cfg.n_experts, cfg.d_router);
  fill_normal(s.route_out, rng, cfg.init_std);
  return s;
}

void HypernetState::visit_params(const ParamVisitor& fn) { visit_state(*this, fn); }

int64_t HypernetState::param_count() {
  int64_t n = 0;
  visit_params([&](const std::string&, double*, int64_t c) { n += c; });
  return n;
}

HypernetGrads HypernetGrads::zeros_like(const HypernetState& state) {
  HypernetGrads g;
  const auto& cfg = state.cfg;
  g.gen_fc1.w = Eigen::MatrixXd::Zero(cfg.d_expert, cfg.d_input);
  g.gen_fc1.b = Eigen::VectorXd::Zero(cfg.d_expert);
  g.gen_ln.gamma = Eigen::VectorXd::Zero(cfg.d_expert);
  g.gen_ln.beta = Eigen::VectorXd::Zero(cfg.d_expert);
  g.gen_out = Eigen::VectorXd::Zero(cfg.d_expert);
  g.route_fc1.w = Eigen::MatrixXd::Zero(cfg.d_router, cfg.d_emb);
  g.route_fc1.b = Eigen::VectorXd::Zero(cfg.d_router);
  g.route_ln.gamma = Eigen::VectorXd::Zero(cfg.d_router);
  g.route_ln.beta = Eigen::VectorXd::Zero(cfg.d_router);
  g.route_out = Eigen::MatrixXd::Zero(cfg.n_experts, cfg.d_router);
  return g;
}

void HypernetGrads::visit_params(const ParamVisitor& fn) { visit_state(*this, fn); }

void HypernetGrads::set_zero() {
  visit_params([](const std::string&, double* d, int64_t n) {
    std::fill(d, d + n, 0.0);
  });
}

Eigen::MatrixXd generator_logits(const HypernetState& state, MlpCache* cache) {
  const auto& cfg = state.cfg;
  Eigen::MatrixXd flat = mlp_forward(state.z, state.gen_fc1, state.gen_ln,
                                     state.gen_out.transpose(), cache);
  Eigen::MatrixXd logits(cfg.n_experts, cfg.n_layers);
  for (int e = 0; e < cfg.n_experts; ++e) {
    for (int l = 0; l < cfg.n_layers; ++l) {
      logits(e, l) = flat(e * cfg.n_layers + l, 0);
    }
  }
  return logits;
}

Eigen::MatrixXd router_logits(const HypernetState& state,
                              const Eigen::MatrixXd& emb, MlpCache* cache) {
  if (emb.cols() != state.cfg.d_emb) {
    throw std::invalid_argument("router: embedding width mismatch");
  }
  return mlp_forward(emb, state.route_fc1, state.route_ln, state.route_out,
                     cache);
}

double gumbel_from_uniform(double u) {
  u = std::clamp(u, 1e-10, 1.0 - 1e-10);
  return -std::log(-std::log(u));
}

StgsResult st_gumbel_sigmoid(double logit, double tau, double bias, double g) {
  if (!std::isfinite(logit)) throw NumericError("st_gumbel_sigmoid: non-finite logit");
  StgsResult r;
  r.soft = 1.0 / (1.0 + std::exp(-(logit + g + bias) / tau));
  r.hard = r.soft >= 0.5 ? 1 : 0;
  return r;
}

int argmax_lowest(const Eigen::VectorXd& v) {
  int best = 0;
  for (int i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

StgmResult st_gumbel_softmax(const Eigen::VectorXd& logits, double tau,
                             double bias, const Eigen::VectorXd& g) {
  if (logits.size() != g.size()) {
    throw std::invalid_argument("st_gumbel_softmax: noise size mismatch");
  }
  if (!logits.allFinite()) throw NumericError("st_gumbel_softmax: non-finite logits");
  Eigen::VectorXd scaled = (logits + g).array() + bias;
  scaled /= tau;
  double shift = scaled.maxCoeff();
  Eigen::VectorXd ex = (scaled.array() - shift).exp();
  StgmResult r;
  r.soft = ex / ex.sum();
  r.argmax = argmax_lowest(r.soft);
  return r;
}

Eigen::VectorXd compose_mask(const Eigen::MatrixXd& expert_masks,
                             const Eigen::VectorXd& weights) {
  if (weights.size() != expert_masks.rows()) {
    throw std::invalid_argument("compose_mask: weight count != expert count");
  }
  // Convex combination of [0,1] rows; clamp away summation ulp overshoot so
  // downstream range checks stay strict.
  return (expert_masks.transpose() * weights).cwiseMax(0.0).cwiseMin(1.0);
}

Eigen::VectorXd MaskSet::mask_for_timestep(int t) const {
  if (t < 0 || t >= static_cast<int>(routing_table.size())) {
    throw std::invalid_argument("mask_for_timestep: unrouted timestep");
  }
  return expert_masks.row(routing_table[t]).transpose();
}

std::vector<int> MaskSet::bits_for_timestep(int t) const {
  Eigen::VectorXd m = mask_for_timestep(t);
  std::vector<int> bits(m.size());
  for (int i = 0; i < m.size(); ++i) bits[i] = m[i] >= 0.5 ? 1 : 0;
  return bits;
}

uint64_t MaskSet::hash() const {
  uint64_t h = fnv1a(expert_masks.data(), sizeof(double) * expert_masks.size());
  h ^= fnv1a(routing_table.data(), sizeof(int) * routing_table.size());
  return h;
}

MaskSet eval_masks(const HypernetState& state, const Eigen::MatrixXd& emb_table) {
  const auto& cfg = state.cfg;
  MaskSet ms;
  ms.expert_logits = generator_logits(state, nullptr);
  ms.expert_masks.resize(cfg.n_experts, cfg.n_layers);
  for (int e = 0; e < cfg.n_experts; ++e) {
    for (int l = 0; l < cfg.n_layers; ++l) {
      ms.expert_masks(e, l) =
          st_gumbel_sigmoid(ms.expert_logits(e, l), cfg.tau_gen, cfg.bias_gen, 0.0).hard;
    }
  }
  ms.routing_logits = router_logits(state, emb_table, nullptr);
  ms.routing_table.resize(emb_table.rows());
  for (int t = 0; t < emb_table.rows(); ++t) {
    ms.routing_table[t] = argmax_lowest(ms.routing_logits.row(t).transpose());
  }
  return ms;
}

HyperDraw hyper_forward(const HypernetState& state, const Eigen::MatrixXd& emb,
                        const Eigen::MatrixXd& gen_noise,
                        const Eigen::MatrixXd& route_noise, MaskMode mode,
                        const std::vector<int>* forced_selection) {
  const auto& cfg = state.cfg;
  const int batch = emb.rows();
  if (gen_noise.rows() != cfg.n_experts || gen_noise.cols() != cfg.n_layers) {
    throw std::invalid_argument("hyper_forward: generator noise shape");
  }
  if (route_noise.rows() != batch || route_noise.cols() != cfg.n_experts) {
    throw std::invalid_argument("hyper_forward: router noise shape");
  }

  HyperDraw d;
  d.mode = mode;
  d.gen_noise = gen_noise;
  d.route_noise = route_noise;
  d.gen_logits = generator_logits(state, &d.gen_cache);
  d.gen_soft.resize(cfg.n_experts, cfg.n_layers);
  d.gen_hard.resize(cfg.n_experts, cfg.n_layers);
  for (int e = 0; e < cfg.n_experts; ++e) {
    for (int l = 0; l < cfg.n_layers; ++l) {
      auto r = st_gumbel_sigmoid(d.gen_logits(e, l), cfg.tau_gen, cfg.bias_gen,
                                 gen_noise(e, l));
      d.gen_soft(e, l) = r.soft;
      d.gen_hard(e, l) = r.hard;
    }
  }

  d.route_logits = router_logits(state, emb, &d.route_cache);
  d.route_soft.resize(batch, cfg.n_experts);
  d.selected.resize(batch);
  for (int b = 0; b < batch; ++b) {
    auto r = st_gumbel_softmax(d.route_logits.row(b).transpose(), cfg.tau_route,
                               cfg.bias_route, route_noise.row(b).transpose());
    d.route_soft.row(b) = r.soft.transpose();
    d.selected[b] = r.argmax;
  }
  if (forced_selection) {
    if (static_cast<int>(forced_selection->size()) != batch) {
      throw std::invalid_argument("hyper_forward: forced selection size");
    }
    d.forced = true;
    d.selected = *forced_selection;
  }

  d.masks.resize(batch, cfg.n_layers);
  if (mode == MaskMode::kHard) {
    for (int b = 0; b < batch; ++b) {
      d.masks.row(b) = d.gen_hard.row(d.selected[b]);
    }
  } else {
    // Convex combination; clamp summation ulp overshoot (backward still uses
    // the product rule, exact wherever the clamp is inactive).
    d.masks = (d.route_soft * d.gen_soft).cwiseMax(0.0).cwiseMin(1.0);
  }
  return d;
}

void hyper_backward(const HypernetState& state, const HyperDraw& draw,
                    const Eigen::MatrixXd& d_masks,
                    const Eigen::MatrixXd& d_route_logits_extra,
                    HypernetGrads& grads) {
  const auto& cfg = state.cfg;
  const int batch = draw.masks.rows();
  if (d_masks.rows() != batch || d_masks.cols() != cfg.n_layers) {
    throw std::invalid_argument("hyper_backward: d_masks shape");
  }

  // Sensitivities reach the expert-mask values and the routing weights along
  // the straight-through paths; which matrices appear depends on the mode.
  const Eigen::MatrixXd& mask_values =
      draw.mode == MaskMode::kHard ? draw.gen_hard : draw.gen_soft;

  Eigen::MatrixXd d_gen(cfg.n_experts, cfg.n_layers);
  d_gen.setZero();
  Eigen::MatrixXd d_route_soft;
  if (draw.mode == MaskMode::kHard) {
    for (int b = 0; b < batch; ++b) {
      d_gen.row(draw.selected[b]) += d_masks.row(b);
    }
  } else {
    d_gen = draw.route_soft.transpose() * d_masks;
  }
  if (!draw.forced) {
    d_route_soft = d_masks * mask_values.transpose();  // B x N_e
  }

  // Sigmoid straight-through: d logit = d value * y(1-y)/tau.
  Eigen::MatrixXd d_gen_logits =
      (d_gen.array() * draw.gen_soft.array() * (1.0 - draw.gen_soft.array()) /
       cfg.tau_gen)
          .matrix();

  Eigen::MatrixXd d_route_logits = Eigen::MatrixXd::Zero(batch, cfg.n_experts);
  if (!draw.forced) {
    // Tempered softmax Jacobian rowwise: dy/dl = (diag(y) - y y^T)/tau.
    for (int b = 0; b < batch; ++b) {
      Eigen::VectorXd y = draw.route_soft.row(b).transpose();
      Eigen::VectorXd dy = d_route_soft.row(b).transpose();
      double dot = y.dot(dy);
      d_route_logits.row(b) =
          (y.array() * (dy.array() - dot) / cfg.tau_route).matrix().transpose();
    }
  }
  if (d_route_logits_extra.size() > 0) {
    if (d_route_logits_extra.rows() != batch ||
        d_route_logits_extra.cols() != cfg.n_experts) {
      throw std::invalid_argument("hyper_backward: extra logits grad shape");
    }
    d_route_logits += d_route_logits_extra;
  }

  // Flatten expert-layer grads back to Z-row order.
  Eigen::MatrixXd d_flat(cfg.n_experts * cfg.n_layers, 1);
  for (int e = 0; e < cfg.n_experts; ++e) {
    for (int l = 0; l < cfg.n_layers; ++l) {
      d_flat(e * cfg.n_layers + l, 0) = d_gen_logits(e, l);
    }
  }
  Eigen::MatrixXd gen_out_w = state.gen_out.transpose();
  Eigen::MatrixXd d_gen_out_w = Eigen::MatrixXd::Zero(1, cfg.d_expert);
  mlp_backward(d_flat, draw.gen_cache, state.gen_ln, gen_out_w, grads.gen_fc1,
               grads.gen_ln, d_gen_out_w);
  grads.gen_out += d_gen_out_w.row(0).transpose();

  mlp_backward(d_route_logits, draw.route_cache, state.route_ln, state.route_out,
               grads.route_fc1, grads.route_ln, grads.route_out);
}

}  // namespace alter
