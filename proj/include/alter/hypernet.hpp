#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "alter/denoiser.hpp"

namespace alter {

struct HypernetConfig {
  int n_experts = 4;
  int n_layers = 12;
  int d_input = 64;   // expert-embedding width (rows of Z)
  int d_expert = 256; // generator hidden width
  int d_router = 64;  // router hidden width
  int d_emb = 128;    // timestep-embedding width fed to the router
  double tau_gen = 0.4;
  double bias_gen = 4.0;
  double tau_route = 0.4;
  double bias_route = 0.0;
  double init_std = 0.02;

  void validate() const;
};

struct LayerNorm {
  Eigen::VectorXd gamma;
  Eigen::VectorXd beta;
};

struct HypernetState {
  HypernetConfig cfg;
  // Frozen embeddings, one row per (expert, layer) pair: row e*n_layers + l.
  Eigen::MatrixXd z;
  LinearLayer gen_fc1;       // d_input -> d_expert
  LayerNorm gen_ln;
  Eigen::VectorXd gen_out;   // d_expert -> 1, no bias
  LinearLayer route_fc1;     // d_emb -> d_router
  LayerNorm route_ln;
  Eigen::MatrixXd route_out; // n_experts x d_router, no bias

  static HypernetState init(const HypernetConfig& cfg, uint64_t seed);
  // Trainable tensors only; z is frozen and excluded.
  void visit_params(const ParamVisitor& fn);
  int64_t param_count();
};

struct HypernetGrads {
  LinearLayer gen_fc1;
  LayerNorm gen_ln;
  Eigen::VectorXd gen_out;
  LinearLayer route_fc1;
  LayerNorm route_ln;
  Eigen::MatrixXd route_out;

  static HypernetGrads zeros_like(const HypernetState& state);
  void visit_params(const ParamVisitor& fn);
  void set_zero();
};

// MLP caches for the backward pass (layer norm keeps normalized rows).
struct MlpCache {
  Eigen::MatrixXd in;       // rows fed to fc1
  Eigen::MatrixXd xhat;     // normalized pre-activation
  Eigen::VectorXd inv_std;  // per row
  Eigen::MatrixXd act;      // relu output
};

// Expert-layer logits via the generator MLP, one row of Z per (e, l).
Eigen::MatrixXd generator_logits(const HypernetState& state, MlpCache* cache);

// Router logits for a batch of timestep embeddings (n x d_emb) -> n x N_e.
Eigen::MatrixXd router_logits(const HypernetState& state,
                              const Eigen::MatrixXd& emb, MlpCache* cache);

// --- straight-through sampling primitives ---

double gumbel_from_uniform(double u);  // clamps u to [1e-10, 1 - 1e-10]

struct StgsResult {
  double soft;  // sigmoid((logit + g + bias) / tau)
  int hard;     // soft >= 0.5, forward value under straight-through
};
StgsResult st_gumbel_sigmoid(double logit, double tau, double bias, double g);

struct StgmResult {
  Eigen::VectorXd soft;  // softmax((logits + g + bias) / tau)
  int argmax;            // lowest index on ties
};
StgmResult st_gumbel_softmax(const Eigen::VectorXd& logits, double tau,
                             double bias, const Eigen::VectorXd& g);

int argmax_lowest(const Eigen::VectorXd& v);

// m = weights^T * expert_masks; selection when weights is one-hot.
Eigen::VectorXd compose_mask(const Eigen::MatrixXd& expert_masks,
                             const Eigen::VectorXd& weights);

// --- deterministic eval-mode extraction ---

struct MaskSet {
  Eigen::MatrixXd expert_logits;   // N_e x N_L
  Eigen::MatrixXd expert_masks;    // N_e x N_L, binary in eval mode
  Eigen::MatrixXd routing_logits;  // T_total x N_e, raw
  std::vector<int> routing_table;  // argmax per timestep, lowest index wins

  Eigen::VectorXd mask_for_timestep(int t) const;
  std::vector<int> bits_for_timestep(int t) const;
  uint64_t hash() const;
};

// emb_table rows are the frozen timestep embeddings for t = 0..T-1.
MaskSet eval_masks(const HypernetState& state, const Eigen::MatrixXd& emb_table);

// --- one noisy training draw for a batch ---

enum class MaskMode {
  kHard,  // straight-through: hard values forward, soft sensitivities back
  kSoft,  // fully soft composition (used by gradient checks)
};

struct HyperDraw {
  MaskMode mode = MaskMode::kHard;
  bool forced = false;             // routing fixed externally (manual variant)
  MlpCache gen_cache, route_cache;
  Eigen::MatrixXd gen_logits;      // N_e x N_L
  Eigen::MatrixXd gen_noise;       // N_e x N_L
  Eigen::MatrixXd gen_soft;        // sigmoid path values
  Eigen::MatrixXd gen_hard;        // thresholded
  Eigen::MatrixXd route_logits;    // B x N_e, raw
  Eigen::MatrixXd route_noise;     // B x N_e
  Eigen::MatrixXd route_soft;      // B x N_e, noisy tempered softmax
  std::vector<int> selected;       // per-item expert
  Eigen::MatrixXd masks;           // B x N_L, as composed for the mode
};

HyperDraw hyper_forward(const HypernetState& state, const Eigen::MatrixXd& emb,
                        const Eigen::MatrixXd& gen_noise,
                        const Eigen::MatrixXd& route_noise, MaskMode mode,
                        const std::vector<int>* forced_selection = nullptr);

// d_masks: B x N_L. d_route_logits_extra adds straight onto the raw router
// logits (balance loss path); pass an empty matrix when unused.
void hyper_backward(const HypernetState& state, const HyperDraw& draw,
                    const Eigen::MatrixXd& d_masks,
                    const Eigen::MatrixXd& d_route_logits_extra,
                    HypernetGrads& grads);

}  // namespace alter
