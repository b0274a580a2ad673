#include "alter/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "alter/common.hpp"

namespace alter {

std::string metrics_csv_header() {
  return "step,phase,L_denoise,L_outKD,L_featKD,L_ratio,L_balance,L_total,S_current";
}

std::string metrics_csv_row(const StepMetrics& m) {
  std::string row = std::to_string(m.step) + "," + m.phase;
  for (double v : {m.l_denoise, m.l_out_kd, m.l_feat_kd, m.l_ratio, m.l_balance,
                   m.l_total, m.s_current}) {
    row += ',';
    row += format_double(v);
  }
  return row;
}

TensorSpans collect_spans(const std::function<void(const ParamVisitor&)>& visit) {
  TensorSpans spans;
  visit([&](const std::string&, double* d, int64_t n) { spans.emplace_back(d, n); });
  return spans;
}

ConstTensorSpans collect_const_spans(
    const std::function<void(const ParamVisitor&)>& visit) {
  ConstTensorSpans spans;
  visit([&](const std::string&, double* d, int64_t n) { spans.emplace_back(d, n); });
  return spans;
}

namespace {

AdamWConfig make_opt_cfg(const TrainConfig& cfg, double lr) {
  AdamWConfig oc;
  oc.lr = lr;
  oc.weight_decay = cfg.weight_decay;
  oc.grad_clip = cfg.grad_clip;
  oc.warmup_steps = cfg.warmup_steps;
  return oc;
}

MaskSet all_ones_masks(int n_layers, int t_total) {
  MaskSet ms;
  ms.expert_logits = Eigen::MatrixXd::Zero(1, n_layers);
  ms.expert_masks = Eigen::MatrixXd::Ones(1, n_layers);
  ms.routing_logits = Eigen::MatrixXd::Zero(t_total, 1);
  ms.routing_table.assign(static_cast<size_t>(t_total), 0);
  return ms;
}

void copy_array(const Checkpoint& ck, const std::string& name, double* dst,
                int64_t count) {
  const std::vector<double>& v = ck.arrays.find(name);
  if (static_cast<int64_t>(v.size()) != count) {
    throw std::runtime_error("checkpoint: array '" + name + "' holds " +
                             std::to_string(v.size()) + " values, expected " +
                             std::to_string(count));
  }
  std::copy(v.begin(), v.end(), dst);
}

}  // namespace

Trainer::Trainer(const TrainConfig& cfg, RunMode mode,
                 std::optional<DenoiserModel> teacher)
    : cfg_(cfg),
      mode_(mode),
      schedule_(make_schedule(cfg.t_total, cfg.schedule)),
      emb_table_(timestep_embedding_table(cfg.t_total, cfg.model.emb_dim())),
      data_(cfg.data, cfg.dataset_size, cfg.seed),
      student_(mode == RunMode::kPrune ? *teacher
                                       : DenoiserModel::init(cfg.model, cfg.seed)),
      teacher_(std::move(teacher)),
      phi_(HypernetState::init(cfg.hypernet_config(), cfg.seed)),
      costs_(profile_costs(cfg.model)),
      opt_theta_(make_opt_cfg(cfg, cfg.lr_unet), student_.param_count()),
      opt_phi_(make_opt_cfg(cfg, cfg.lr_hypernet), phi_.param_count()) {
  if (cfg_.model.n_classes != 0) {
    throw ConfigError("the mixture data source is unconditional; n_classes must be 0");
  }
  Eigen::VectorXd c = costs_.costs_as_double();
  cost_weights_ = c / c.sum();
  refresh_masks();
}

Trainer Trainer::pretrain(const TrainConfig& cfg_in) {
  TrainConfig cfg = cfg_in;
  // Dense teacher: plain denoising objective, trivial mask machinery.
  cfg.variant = Variant::kStatic;
  cfg.n_experts = 1;
  cfg.weights.lambda_denoise = 1.0;
  cfg.weights.lambda_out_kd = 0.0;
  cfg.weights.lambda_feat_kd = 0.0;
  cfg.validate();
  return Trainer(cfg, RunMode::kPretrain, std::nullopt);
}

Trainer Trainer::prune(const TrainConfig& cfg, DenoiserModel teacher) {
  cfg.validate();
  const auto& t = teacher.cfg;
  const auto& m = cfg.model;
  if (t.n_layers != m.n_layers || t.hidden_width != m.hidden_width ||
      t.data_dim != m.data_dim || t.n_classes != m.n_classes) {
    throw std::invalid_argument("teacher architecture differs from the configured model");
  }
  return Trainer(cfg, RunMode::kPrune, std::move(teacher));
}

Batch Trainer::make_batch(int64_t step) {
  const int B = cfg_.batch_size;
  const int d = data_.dim();
  Batch batch;
  batch.x0 = data_.batch(step, B);
  batch.t.resize(static_cast<size_t>(B));
  Rng trng(mix_seed(cfg_.seed, kStreamTimestep, static_cast<uint64_t>(step)));
  for (int b = 0; b < B; ++b) batch.t[static_cast<size_t>(b)] = trng.uniform_int(cfg_.t_total);
  batch.eps.resize(B, d);
  Rng nrng(mix_seed(cfg_.seed, kStreamNoise, static_cast<uint64_t>(step)));
  for (int b = 0; b < B; ++b) {
    for (int j = 0; j < d; ++j) batch.eps(b, j) = nrng.normal();
  }
  batch.input.resize(B, d);
  batch.emb.resize(B, cfg_.model.emb_dim());
  for (int b = 0; b < B; ++b) {
    const int t = batch.t[static_cast<size_t>(b)];
    const double ab = schedule_.alpha_bar[t];
    batch.input.row(b) =
        std::sqrt(ab) * batch.x0.row(b) + std::sqrt(1.0 - ab) * batch.eps.row(b);
    batch.emb.row(b) = emb_table_.row(t);
  }
  return batch;
}

TeacherEval Trainer::eval_teacher(const Batch& batch) {
  if (!teacher_) throw std::logic_error("eval_teacher: this run has no teacher");
  TeacherEval te;
  Eigen::MatrixXd ones =
      Eigen::MatrixXd::Ones(batch.input.rows(), cfg_.model.n_layers);
  denoiser_forward(*teacher_, batch.input, batch.emb, ones, te.eps_hat, &te.cache);
  return te;
}

Eigen::MatrixXd Trainer::draw_gen_noise(int64_t step) {
  Eigen::MatrixXd g(cfg_.n_experts, cfg_.model.n_layers);
  Rng rng(mix_seed(cfg_.seed, kStreamGumbelGen, static_cast<uint64_t>(step)));
  for (int e = 0; e < g.rows(); ++e) {
    for (int l = 0; l < g.cols(); ++l) g(e, l) = rng.gumbel();
  }
  return g;
}

Eigen::MatrixXd Trainer::draw_route_noise(int64_t step) {
  Eigen::MatrixXd g(cfg_.batch_size, cfg_.n_experts);
  Rng rng(mix_seed(cfg_.seed, kStreamGumbelRouter, static_cast<uint64_t>(step)));
  for (int b = 0; b < g.rows(); ++b) {
    for (int e = 0; e < g.cols(); ++e) g(b, e) = rng.gumbel();
  }
  return g;
}

std::vector<int> Trainer::manual_selection(const std::vector<int>& timesteps) const {
  std::vector<int> sel(timesteps.size());
  for (size_t i = 0; i < timesteps.size(); ++i) {
    sel[i] = static_cast<int>(static_cast<int64_t>(timesteps[i]) * cfg_.n_experts /
                              cfg_.t_total);
  }
  return sel;
}

Trainer::HyperOut Trainer::hypernet_phase(const Batch& batch,
                                          const TeacherEval& teacher,
                                          const Eigen::MatrixXd& gen_noise,
                                          const Eigen::MatrixXd& route_noise,
                                          MaskMode mode) {
  const LossWeights& w = cfg_.weights;
  const int B = static_cast<int>(batch.input.rows());
  const int d = data_.dim();
  const int n_layers = cfg_.model.n_layers;

  std::vector<int> forced;
  const std::vector<int>* forced_ptr = nullptr;
  if (cfg_.variant == Variant::kManual) {
    forced = manual_selection(batch.t);
    forced_ptr = &forced;
  }

  HyperOut out;
  out.draw = hyper_forward(phi_, batch.emb, gen_noise, route_noise, mode, forced_ptr);

  Eigen::MatrixXd eps_hat;
  ForwardCache cache;
  denoiser_forward(student_, batch.input, batch.emb, out.draw.masks, eps_hat, &cache);

  const double l_den = denoise_loss(batch.eps, eps_hat);
  const double l_out = out_kd_loss(teacher.eps_hat, eps_hat);
  const double l_feat = feat_kd_loss(teacher.cache.block_out, cache.block_out);
  const double l_perf = perf_loss(l_den, l_out, l_feat, w);

  const double den_w = w.perf_unweighted_denoise ? 1.0 : w.lambda_denoise;
  Eigen::MatrixXd d_eps =
      (den_w * 2.0 / (B * d)) * (eps_hat - batch.eps) +
      (w.lambda_out_kd * 2.0 / (B * d)) * (eps_hat - teacher.eps_hat);
  std::vector<Eigen::MatrixXd> d_taps(static_cast<size_t>(n_layers));
  for (int l = 0; l < n_layers; ++l) {
    const auto& s_tap = cache.block_out[static_cast<size_t>(l)];
    const auto& t_tap = teacher.cache.block_out[static_cast<size_t>(l)];
    d_taps[static_cast<size_t>(l)] =
        (w.lambda_feat_kd * 2.0 / static_cast<double>(s_tap.size())) * (s_tap - t_tap);
  }

  Eigen::MatrixXd d_masks = Eigen::MatrixXd::Zero(B, n_layers);
  BackwardRequest req;
  req.d_eps_hat = &d_eps;
  req.d_taps = &d_taps;
  req.d_masks = &d_masks;  // theta stays frozen in this phase
  denoiser_backward(student_, cache, out.draw.masks, req);

  double l_ratio = 0.0;
  double s_sum = 0.0;
  for (int b = 0; b < B; ++b) {
    const double s = out.draw.masks.row(b).dot(cost_weights_);
    s_sum += s;
    l_ratio += ratio_loss(s, w.target_sparsity, w.stability_eps);
    const double g = ratio_loss_grad(s, w.target_sparsity, w.stability_eps);
    d_masks.row(b) += (w.lambda_ratio * g / B) * cost_weights_.transpose();
  }
  l_ratio /= B;

  double l_balance = 0.0;
  Eigen::MatrixXd extra;
  if (cfg_.variant != Variant::kManual) {
    l_balance = balance_loss(out.draw.route_logits);
    extra = w.lambda_balance * balance_loss_grad(out.draw.route_logits);
  }

  out.grads = HypernetGrads::zeros_like(phi_);
  hyper_backward(phi_, out.draw, d_masks, extra, out.grads);

  out.metrics.phase = "hypernet";
  out.metrics.l_denoise = l_den;
  out.metrics.l_out_kd = l_out;
  out.metrics.l_feat_kd = l_feat;
  out.metrics.l_ratio = l_ratio;
  out.metrics.l_balance = l_balance;
  out.metrics.l_total = hypernet_loss(l_perf, l_ratio, l_balance, w);
  out.metrics.s_current = s_sum / B;
  if (!std::isfinite(out.metrics.l_total)) {
    throw NumericError("hypernet loss is non-finite");
  }
  return out;
}

Trainer::UnetOut Trainer::unet_phase(const Batch& batch, const TeacherEval* teacher,
                                     const Eigen::MatrixXd& masks) {
  const LossWeights& w = cfg_.weights;
  const int B = static_cast<int>(batch.input.rows());
  const int d = data_.dim();
  const int n_layers = cfg_.model.n_layers;

  UnetOut out;
  Eigen::MatrixXd eps_hat;
  ForwardCache cache;
  denoiser_forward(student_, batch.input, batch.emb, masks, eps_hat, &cache);

  const double l_den = denoise_loss(batch.eps, eps_hat);
  double l_out = 0.0;
  double l_feat = 0.0;
  Eigen::MatrixXd d_eps = (w.lambda_denoise * 2.0 / (B * d)) * (eps_hat - batch.eps);
  std::vector<Eigen::MatrixXd> d_taps;
  if (teacher) {
    l_out = out_kd_loss(teacher->eps_hat, eps_hat);
    l_feat = feat_kd_loss(teacher->cache.block_out, cache.block_out);
    d_eps += (w.lambda_out_kd * 2.0 / (B * d)) * (eps_hat - teacher->eps_hat);
    d_taps.resize(static_cast<size_t>(n_layers));
    for (int l = 0; l < n_layers; ++l) {
      const auto& s_tap = cache.block_out[static_cast<size_t>(l)];
      const auto& t_tap = teacher->cache.block_out[static_cast<size_t>(l)];
      d_taps[static_cast<size_t>(l)] =
          (w.lambda_feat_kd * 2.0 / static_cast<double>(s_tap.size())) *
          (s_tap - t_tap);
    }
  }

  out.grads = DenoiserGrads::zeros_like(student_);
  BackwardRequest req;
  req.d_eps_hat = &d_eps;
  if (teacher) req.d_taps = &d_taps;
  req.param_grads = &out.grads;  // masks stay frozen in this phase
  denoiser_backward(student_, cache, masks, req);

  out.metrics.phase = "unet";
  out.metrics.l_denoise = l_den;
  out.metrics.l_out_kd = l_out;
  out.metrics.l_feat_kd = l_feat;
  out.metrics.l_total = unet_loss(l_den, l_out, l_feat, w);
  double s_sum = 0.0;
  for (int b = 0; b < B; ++b) s_sum += masks.row(b).dot(cost_weights_);
  out.metrics.s_current = s_sum / B;
  if (!std::isfinite(out.metrics.l_total)) {
    throw NumericError("denoiser loss is non-finite");
  }
  return out;
}

Eigen::MatrixXd Trainer::masks_for_batch(const Batch& batch) const {
  const int B = static_cast<int>(batch.t.size());
  Eigen::MatrixXd m(B, cfg_.model.n_layers);
  for (int b = 0; b < B; ++b) {
    m.row(b) = masks_.mask_for_timestep(batch.t[static_cast<size_t>(b)]).transpose();
  }
  return m;
}

void Trainer::refresh_masks() {
  if (mode_ == RunMode::kPretrain) {
    masks_ = all_ones_masks(cfg_.model.n_layers, cfg_.t_total);
    return;
  }
  masks_ = eval_masks(phi_, emb_table_);
  if (cfg_.variant == Variant::kManual) {
    // Routing is fixed to contiguous timestep bands, one per expert.
    for (int t = 0; t < cfg_.t_total; ++t) {
      const int e = static_cast<int>(static_cast<int64_t>(t) * cfg_.n_experts /
                                     cfg_.t_total);
      masks_.routing_table[static_cast<size_t>(t)] = e;
      masks_.routing_logits.row(t).setZero();
      masks_.routing_logits(t, e) = 1.0;
    }
  }
}

bool Trainer::apply_phi_update(const HypernetGrads& grads) {
  TensorSpans params =
      collect_spans([&](const ParamVisitor& v) { phi_.visit_params(v); });
  // visit_params only exists in mutable form; the gradient is not written.
  auto& g = const_cast<HypernetGrads&>(grads);
  ConstTensorSpans gs =
      collect_const_spans([&](const ParamVisitor& v) { g.visit_params(v); });
  const bool ok = opt_phi_.step(params, gs);
  if (!ok) std::cerr << "hypernet update skipped: non-finite gradient\n";
  return ok;
}

bool Trainer::apply_theta_update(const DenoiserGrads& grads) {
  TensorSpans params =
      collect_spans([&](const ParamVisitor& v) { student_.visit_params(v); });
  auto& g = const_cast<DenoiserGrads&>(grads);
  ConstTensorSpans gs =
      collect_const_spans([&](const ParamVisitor& v) { g.visit_params(v); });
  const bool ok = opt_theta_.step(params, gs);
  if (!ok) std::cerr << "denoiser update skipped: non-finite gradient\n";
  return ok;
}

StepMetrics Trainer::hypernet_step(int64_t step) {
  if (mode_ != RunMode::kPrune) {
    throw std::logic_error("hypernet_step: pretraining has no hypernet phase");
  }
  if (step > cfg_.hypernet_end) {
    throw std::logic_error("hypernet_step: step " + std::to_string(step) +
                           " lies past hypernet_end");
  }
  Batch batch = make_batch(step);
  TeacherEval te = eval_teacher(batch);
  HyperOut h = hypernet_phase(batch, te, draw_gen_noise(step),
                              draw_route_noise(step), MaskMode::kHard);
  h.metrics.step = step;
  apply_phi_update(h.grads);
  refresh_masks();
  return h.metrics;
}

StepMetrics Trainer::unet_step(int64_t step) {
  Batch batch = make_batch(step);
  std::optional<TeacherEval> te;
  if (mode_ == RunMode::kPrune) te.emplace(eval_teacher(batch));
  UnetOut u = unet_phase(batch, te ? &*te : nullptr, masks_for_batch(batch));
  u.metrics.step = step;
  apply_theta_update(u.grads);
  return u.metrics;
}

std::vector<StepMetrics> Trainer::step_once(int64_t step) {
  if (step < 1 || step > cfg_.total_steps) {
    throw std::invalid_argument("step_once: step out of range");
  }
  std::vector<StepMetrics> rows;
  Batch batch = make_batch(step);
  std::optional<TeacherEval> te;
  if (mode_ == RunMode::kPrune) te.emplace(eval_teacher(batch));

  const bool hyper_active = mode_ == RunMode::kPrune && step <= cfg_.hypernet_end;
  const bool unet_active = !(hyper_active && cfg_.variant == Variant::kTwoStage);

  if (hyper_active) {
    HyperOut h = hypernet_phase(batch, *te, draw_gen_noise(step),
                                draw_route_noise(step), MaskMode::kHard);
    h.metrics.step = step;
    apply_phi_update(h.grads);
    refresh_masks();
    rows.push_back(std::move(h.metrics));
  }
  if (unet_active) {
    UnetOut u = unet_phase(batch, te ? &*te : nullptr, masks_for_batch(batch));
    u.metrics.step = step;
    apply_theta_update(u.grads);
    rows.push_back(std::move(u.metrics));
  }
  steps_done_ = step;
  return rows;
}

void Trainer::run(const std::string& run_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(run_dir);
  {
    std::ofstream cfg_out(run_dir + "/config_resolved.txt");
    if (!cfg_out) throw std::runtime_error("cannot write " + run_dir + "/config_resolved.txt");
    cfg_out << cfg_.serialize();
  }
  const bool fresh = steps_done_ == 0;
  std::ofstream metrics(run_dir + "/metrics.csv",
                        fresh ? std::ios::trunc : std::ios::app);
  if (!metrics) throw std::runtime_error("cannot write " + run_dir + "/metrics.csv");
  if (fresh) metrics << metrics_csv_header() << '\n';

  for (int64_t step = steps_done_ + 1; step <= cfg_.total_steps; ++step) {
    for (const StepMetrics& row : step_once(step)) {
      metrics << metrics_csv_row(row) << '\n';
    }
    if (cfg_.checkpoint_every > 0 && step % cfg_.checkpoint_every == 0 &&
        step < cfg_.total_steps) {
      save_checkpoint(run_dir + "/checkpoint_step" + std::to_string(step) + ".bin",
                      to_checkpoint());
    }
  }
  metrics.flush();
  save_checkpoint(run_dir + "/checkpoint.bin", to_checkpoint());

  if (mode_ == RunMode::kPrune) {
    std::ofstream mf(run_dir + "/masks.csv");
    mf << "expert,layer,bit\n";
    for (int e = 0; e < masks_.expert_masks.rows(); ++e) {
      for (int l = 0; l < masks_.expert_masks.cols(); ++l) {
        mf << e << ',' << l << ',' << (masks_.expert_masks(e, l) >= 0.5 ? 1 : 0)
           << '\n';
      }
    }
    std::ofstream rf(run_dir + "/routing.csv");
    rf << "timestep,expert\n";
    for (size_t t = 0; t < masks_.routing_table.size(); ++t) {
      rf << t << ',' << masks_.routing_table[t] << '\n';
    }
  }
}

uint64_t Trainer::theta_hash() {
  uint64_t h = 1469598103934665603ull;
  student_.visit_params([&](const std::string&, double* d, int64_t n) {
    h = (h * 1099511628211ull) ^ fnv1a(d, sizeof(double) * static_cast<size_t>(n));
  });
  return h;
}

uint64_t Trainer::phi_hash() {
  uint64_t h = 1469598103934665603ull;
  phi_.visit_params([&](const std::string&, double* d, int64_t n) {
    h = (h * 1099511628211ull) ^ fnv1a(d, sizeof(double) * static_cast<size_t>(n));
  });
  return h;
}

Checkpoint Trainer::to_checkpoint() {
  Checkpoint ck;
  ck.kind = mode_ == RunMode::kPretrain ? "teacher" : "student";
  ck.step = steps_done_;
  ck.config_text = cfg_.serialize();
  student_.visit_params([&](const std::string& name, double* d, int64_t n) {
    ck.arrays.add("theta." + name, d, n);
  });
  ck.arrays.add("opt_theta.m", opt_theta_.moment1().data(), opt_theta_.moment1().size());
  ck.arrays.add("opt_theta.v", opt_theta_.moment2().data(), opt_theta_.moment2().size());
  double theta_steps = static_cast<double>(opt_theta_.steps_taken());
  ck.arrays.add("opt_theta.steps", &theta_steps, 1);
  if (mode_ == RunMode::kPrune) {
    phi_.visit_params([&](const std::string& name, double* d, int64_t n) {
      ck.arrays.add("phi." + name, d, n);
    });
    ck.arrays.add("phi.z", phi_.z.data(), phi_.z.size());
    ck.arrays.add("opt_phi.m", opt_phi_.moment1().data(), opt_phi_.moment1().size());
    ck.arrays.add("opt_phi.v", opt_phi_.moment2().data(), opt_phi_.moment2().size());
    double phi_steps = static_cast<double>(opt_phi_.steps_taken());
    ck.arrays.add("opt_phi.steps", &phi_steps, 1);
  }
  return ck;
}

void Trainer::load_state(const Checkpoint& ck) {
  student_.visit_params([&](const std::string& name, double* d, int64_t n) {
    copy_array(ck, "theta." + name, d, n);
  });
  copy_array(ck, "opt_theta.m", opt_theta_.moment1().data(),
             opt_theta_.moment1().size());
  copy_array(ck, "opt_theta.v", opt_theta_.moment2().data(),
             opt_theta_.moment2().size());
  double theta_steps = 0.0;
  copy_array(ck, "opt_theta.steps", &theta_steps, 1);
  opt_theta_.set_steps_taken(static_cast<int64_t>(theta_steps));
  if (mode_ == RunMode::kPrune) {
    phi_.visit_params([&](const std::string& name, double* d, int64_t n) {
      copy_array(ck, "phi." + name, d, n);
    });
    copy_array(ck, "phi.z", phi_.z.data(), phi_.z.size());
    copy_array(ck, "opt_phi.m", opt_phi_.moment1().data(), opt_phi_.moment1().size());
    copy_array(ck, "opt_phi.v", opt_phi_.moment2().data(), opt_phi_.moment2().size());
    double phi_steps = 0.0;
    copy_array(ck, "opt_phi.steps", &phi_steps, 1);
    opt_phi_.set_steps_taken(static_cast<int64_t>(phi_steps));
  }
  steps_done_ = ck.step;
  refresh_masks();
}

DenoiserModel model_from_checkpoint(const Checkpoint& ck) {
  TrainConfig tc = TrainConfig::parse_text(ck.config_text, "checkpoint config");
  DenoiserModel model = DenoiserModel::init(tc.model, tc.seed);
  model.visit_params([&](const std::string& name, double* d, int64_t n) {
    copy_array(ck, "theta." + name, d, n);
  });
  return model;
}

HypernetState hypernet_from_checkpoint(const Checkpoint& ck) {
  TrainConfig tc = TrainConfig::parse_text(ck.config_text, "checkpoint config");
  HypernetState state = HypernetState::init(tc.hypernet_config(), tc.seed);
  state.visit_params([&](const std::string& name, double* d, int64_t n) {
    copy_array(ck, "phi." + name, d, n);
  });
  copy_array(ck, "phi.z", state.z.data(), state.z.size());
  return state;
}

}  // namespace alter
