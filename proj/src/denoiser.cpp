#include "alter/denoiser.hpp"

#include <cassert>
#include <stdexcept>

#include "alter/common.hpp"

namespace alter {

void DenoiserConfig::validate() const {
  if (n_layers < 1) throw std::invalid_argument("n_layers must be >= 1");
  if (hidden_width < 2 || hidden_width % 2 != 0) {
    throw std::invalid_argument("hidden_width must be even (sinusoidal embedding)");
  }
  if (data_dim < 1) throw std::invalid_argument("data_dim must be >= 1");
  if (n_classes < 0) throw std::invalid_argument("n_classes must be >= 0");
}

namespace {

void fill_normal(Eigen::MatrixXd& m, Rng& rng, double std_dev) {
  for (int r = 0; r < m.rows(); ++r) {
    for (int c = 0; c < m.cols(); ++c) m(r, c) = std_dev * rng.normal();
  }
}

LinearLayer make_linear(int out, int in, Rng& rng, double std_dev) {
  LinearLayer l;
  l.w.resize(out, in);
  fill_normal(l.w, rng, std_dev);
  l.b = Eigen::VectorXd::Zero(out);
  return l;
}

LinearLayer zero_linear(int out, int in) {
  LinearLayer l;
  l.w = Eigen::MatrixXd::Zero(out, in);
  l.b = Eigen::VectorXd::Zero(out);
  return l;
}

inline Eigen::MatrixXd linear_forward(const LinearLayer& l,
                                      const Eigen::MatrixXd& x) {
  return (x * l.w.transpose()).rowwise() + l.b.transpose();
}

template <typename Model, typename Fn>
void visit_model(Model& m, const Fn& fn) {
  fn("in_proj.w", m.in_proj.w.data(), m.in_proj.w.size());
  fn("in_proj.b", m.in_proj.b.data(), m.in_proj.b.size());
  for (size_t i = 0; i < m.blocks.size(); ++i) {
    std::string p = "block" + std::to_string(i) + ".";
    fn(p + "fc1.w", m.blocks[i].fc1.w.data(), m.blocks[i].fc1.w.size());
    fn(p + "fc1.b", m.blocks[i].fc1.b.data(), m.blocks[i].fc1.b.size());
    fn(p + "fc2.w", m.blocks[i].fc2.w.data(), m.blocks[i].fc2.w.size());
    fn(p + "fc2.b", m.blocks[i].fc2.b.data(), m.blocks[i].fc2.b.size());
  }
  fn("out_proj.w", m.out_proj.w.data(), m.out_proj.w.size());
  fn("out_proj.b", m.out_proj.b.data(), m.out_proj.b.size());
}

}  // namespace

DenoiserModel DenoiserModel::init(const DenoiserConfig& cfg, uint64_t seed) {
  cfg.validate();
  DenoiserModel m;
  m.cfg = cfg;
  Rng rng(mix_seed(seed, kStreamInitTheta, 0));
  const int w = cfg.hidden_width;
  m.in_proj = make_linear(w, cfg.input_dim(), rng, 1.0 / std::sqrt(cfg.input_dim()));
  m.blocks.resize(cfg.n_layers);
  for (int l = 0; l < cfg.n_layers; ++l) {
    int in1 = cfg.is_decoder(l) ? 2 * w : w;
    m.blocks[l].fc1 = make_linear(w, in1, rng, std::sqrt(2.0 / in1));
    // Residual branches start small so the deep stack is stable at init.
    m.blocks[l].fc2 = make_linear(w, w, rng, 0.1 * std::sqrt(2.0 / w));
  }
  m.out_proj = make_linear(cfg.data_dim, w, rng, 1.0 / std::sqrt(w));
  return m;
}

void DenoiserModel::visit_params(const ParamVisitor& fn) { visit_model(*this, fn); }

int64_t DenoiserModel::param_count() {
  int64_t n = 0;
  visit_params([&](const std::string&, double*, int64_t c) { n += c; });
  return n;
}

DenoiserGrads DenoiserGrads::zeros_like(const DenoiserModel& model) {
  DenoiserGrads g;
  const auto& cfg = model.cfg;
  const int w = cfg.hidden_width;
  g.in_proj = zero_linear(w, cfg.input_dim());
  g.blocks.resize(cfg.n_layers);
  for (int l = 0; l < cfg.n_layers; ++l) {
    g.blocks[l].fc1 = zero_linear(w, cfg.is_decoder(l) ? 2 * w : w);
    g.blocks[l].fc2 = zero_linear(w, w);
  }
  g.out_proj = zero_linear(cfg.data_dim, w);
  return g;
}

void DenoiserGrads::visit_params(const ParamVisitor& fn) { visit_model(*this, fn); }

void DenoiserGrads::set_zero() {
  visit_params([](const std::string&, double* d, int64_t n) {
    std::fill(d, d + n, 0.0);
  });
}

bool mask_value_valid(double m) { return m >= 0.0 && m <= 1.0; }

double layer_apply(double x_in, double f_out, double m) {
  assert(mask_value_valid(m));
  return (1.0 - m) * x_in + m * f_out;
}

Eigen::VectorXd layer_apply(const Eigen::VectorXd& x_in,
                            const Eigen::VectorXd& f_out, double m) {
  assert(mask_value_valid(m));
  if (x_in.size() != f_out.size()) {
    throw std::invalid_argument("layer_apply: size mismatch");
  }
  return (1.0 - m) * x_in + m * f_out;
}

namespace {

inline void check_forward_shapes(const DenoiserModel& model,
                                 const Eigen::MatrixXd& input,
                                 const Eigen::MatrixXd& emb,
                                 const Eigen::MatrixXd* masks) {
  const auto& cfg = model.cfg;
  if (input.cols() != cfg.input_dim()) {
    throw std::invalid_argument("denoiser: input width mismatch");
  }
  if (emb.rows() != input.rows() || emb.cols() != cfg.emb_dim()) {
    throw std::invalid_argument("denoiser: embedding shape mismatch");
  }
  if (masks && (masks->rows() != input.rows() || masks->cols() != cfg.n_layers)) {
    throw std::invalid_argument("denoiser: mask shape mismatch");
  }
}

}  // namespace

void denoiser_forward(const DenoiserModel& model, const Eigen::MatrixXd& input,
                      const Eigen::MatrixXd& emb, const Eigen::MatrixXd& masks,
                      Eigen::MatrixXd& eps_hat, ForwardCache* cache) {
  check_forward_shapes(model, input, emb, &masks);
  if (masks.size() > 0 &&
      (!(masks.minCoeff() >= 0.0) || !(masks.maxCoeff() <= 1.0))) {
    throw std::invalid_argument("denoiser: mask value outside [0,1]");
  }
  const auto& cfg = model.cfg;
  const int n_layers = cfg.n_layers;

  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  c.block_in.resize(n_layers);
  c.hpre.resize(n_layers);
  c.sig.resize(n_layers);
  c.mlp_out.resize(n_layers);
  c.block_out.resize(n_layers);
  c.input = input;
  c.proj = linear_forward(model.in_proj, input);

  Eigen::MatrixXd x = c.proj;
  for (int l = 0; l < n_layers; ++l) {
    if (cfg.is_decoder(l)) {
      Eigen::MatrixXd cat(x.rows(), 2 * cfg.hidden_width);
      cat << x, c.block_out[cfg.skip_source(l)];
      c.block_in[l] = std::move(cat);
    } else {
      c.block_in[l] = x;
    }
    c.hpre[l] = linear_forward(model.blocks[l].fc1, c.block_in[l]);
    c.hpre[l] += emb;
    c.sig[l] = (1.0 + (-c.hpre[l].array()).exp()).inverse().matrix();
    Eigen::MatrixXd act = (c.hpre[l].array() * c.sig[l].array()).matrix();
    c.mlp_out[l] = linear_forward(model.blocks[l].fc2, act);
    c.block_out[l] =
        (x.array() + c.mlp_out[l].array().colwise() * masks.col(l).array()).matrix();
    x = c.block_out[l];
  }
  eps_hat = linear_forward(model.out_proj, x);
}

void denoiser_backward(const DenoiserModel& model, const ForwardCache& cache,
                       const Eigen::MatrixXd& masks, const BackwardRequest& req) {
  if (!req.d_eps_hat) throw std::invalid_argument("backward: d_eps_hat required");
  const auto& cfg = model.cfg;
  const int n_layers = cfg.n_layers;
  const int w = cfg.hidden_width;
  const int batch = cache.input.rows();

  if (req.d_masks) req.d_masks->setZero(batch, n_layers);

  // Gradient flowing into the output of the block currently processed.
  Eigen::MatrixXd g = *req.d_eps_hat * model.out_proj.w;
  if (req.param_grads) {
    req.param_grads->out_proj.w += req.d_eps_hat->transpose() * cache.block_out[n_layers - 1];
    req.param_grads->out_proj.b += req.d_eps_hat->colwise().sum().transpose();
  }

  // Skip-connection gradients land on encoder outputs visited later in this
  // reversed loop.
  std::vector<Eigen::MatrixXd> pending(n_layers);

  for (int l = n_layers - 1; l >= 0; --l) {
    if (pending[l].size() > 0) g += pending[l];
    if (req.d_taps) g += (*req.d_taps)[l];

    if (req.d_masks) {
      req.d_masks->col(l) =
          (g.array() * cache.mlp_out[l].array()).rowwise().sum().matrix();
    }
    Eigen::MatrixXd gm = (g.array().colwise() * masks.col(l).array()).matrix();
    if (req.param_grads) {
      Eigen::MatrixXd act = (cache.hpre[l].array() * cache.sig[l].array()).matrix();
      req.param_grads->blocks[l].fc2.w += gm.transpose() * act;
      req.param_grads->blocks[l].fc2.b += gm.colwise().sum().transpose();
    }
    Eigen::MatrixXd gh =
        ((gm * model.blocks[l].fc2.w).array() *
         (cache.sig[l].array() *
          (1.0 + cache.hpre[l].array() * (1.0 - cache.sig[l].array()))))
            .matrix();
    if (req.param_grads) {
      req.param_grads->blocks[l].fc1.w += gh.transpose() * cache.block_in[l];
      req.param_grads->blocks[l].fc1.b += gh.colwise().sum().transpose();
    }
    Eigen::MatrixXd gcat = gh * model.blocks[l].fc1.w;
    if (cfg.is_decoder(l)) {
      int src = cfg.skip_source(l);
      if (pending[src].size() == 0) {
        pending[src] = gcat.rightCols(w);
      } else {
        pending[src] += gcat.rightCols(w);
      }
      g += gcat.leftCols(w);
    } else {
      g += gcat;
    }
  }

  if (req.param_grads) {
    req.param_grads->in_proj.w += g.transpose() * cache.input;
    req.param_grads->in_proj.b += g.colwise().sum().transpose();
  }
}

void denoiser_forward_pruned(const DenoiserModel& model,
                             const Eigen::MatrixXd& input,
                             const Eigen::MatrixXd& emb,
                             const std::vector<int>& mask_bits,
                             Eigen::MatrixXd& eps_hat,
                             std::vector<int64_t>* block_calls) {
  check_forward_shapes(model, input, emb, nullptr);
  const auto& cfg = model.cfg;
  if (static_cast<int>(mask_bits.size()) != cfg.n_layers) {
    throw std::invalid_argument("pruned forward: mask size mismatch");
  }
  for (int bit : mask_bits) {
    if (bit != 0 && bit != 1) {
      throw std::invalid_argument("pruned forward: mask bit not 0/1");
    }
  }
  if (block_calls && static_cast<int>(block_calls->size()) != cfg.n_layers) {
    throw std::invalid_argument("pruned forward: counter size mismatch");
  }

  // Activation after each block position, executed or bypassed; decoder skip
  // inputs read from here.
  std::vector<Eigen::MatrixXd> stage(cfg.n_layers);
  Eigen::MatrixXd x = linear_forward(model.in_proj, input);
  for (int l = 0; l < cfg.n_layers; ++l) {
    if (mask_bits[l]) {
      if (block_calls) ++(*block_calls)[l];
      Eigen::MatrixXd hpre;
      if (cfg.is_decoder(l)) {
        Eigen::MatrixXd cat(x.rows(), 2 * cfg.hidden_width);
        cat << x, stage[cfg.skip_source(l)];
        hpre = linear_forward(model.blocks[l].fc1, cat);
      } else {
        hpre = linear_forward(model.blocks[l].fc1, x);
      }
      hpre += emb;
      Eigen::ArrayXXd sig = (1.0 + (-hpre.array()).exp()).inverse();
      Eigen::MatrixXd act = (hpre.array() * sig).matrix();
      x = x + linear_forward(model.blocks[l].fc2, act);
    }
    stage[l] = x;
  }
  eps_hat = linear_forward(model.out_proj, x);
}

}  // namespace alter
