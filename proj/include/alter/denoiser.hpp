#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace alter {

struct DenoiserConfig {
  int n_layers = 12;      // residual blocks; first half encoder, second decoder
  int hidden_width = 128; // also the timestep-embedding width (added in-block)
  int data_dim = 2;
  int n_classes = 0;      // >0 appends a one-hot label to the input projection

  void validate() const;
  int input_dim() const { return data_dim + n_classes; }
  int emb_dim() const { return hidden_width; }
  int encoder_count() const { return (n_layers + 1) / 2; }
  bool is_decoder(int layer) const { return layer >= encoder_count(); }
  // Decoder block l concatenates the recorded output of this encoder block.
  int skip_source(int layer) const { return n_layers - 1 - layer; }
};

// y = x * w^T + b, with w stored out x in.
struct LinearLayer {
  Eigen::MatrixXd w;
  Eigen::VectorXd b;
};

struct ResidualBlock {
  LinearLayer fc1;  // width (encoder) or 2*width (decoder) -> width
  LinearLayer fc2;  // width -> width
};

// Fixed-order traversal of every parameter tensor; shared by the optimizer,
// the checkpoint writer and the parameter hashing in tests.
using ParamVisitor =
    std::function<void(const std::string& name, double* data, int64_t count)>;

struct DenoiserModel {
  DenoiserConfig cfg;
  LinearLayer in_proj;
  std::vector<ResidualBlock> blocks;
  LinearLayer out_proj;

  static DenoiserModel init(const DenoiserConfig& cfg, uint64_t seed);
  void visit_params(const ParamVisitor& fn);
  int64_t param_count();
};

struct DenoiserGrads {
  LinearLayer in_proj;
  std::vector<ResidualBlock> blocks;
  LinearLayer out_proj;

  static DenoiserGrads zeros_like(const DenoiserModel& model);
  void visit_params(const ParamVisitor& fn);
  void set_zero();
};

// Activations recorded by the simulated forward pass. block_out doubles as
// the feature-tap record (one tap per prunable block).
struct ForwardCache {
  Eigen::MatrixXd input;                  // B x input_dim
  Eigen::MatrixXd proj;                   // B x W, after the input projection
  std::vector<Eigen::MatrixXd> block_in;  // B x W (encoder) or B x 2W (decoder, concatenated)
  std::vector<Eigen::MatrixXd> hpre;      // B x W, fc1 output + embedding
  std::vector<Eigen::MatrixXd> sig;       // B x W, sigmoid(hpre)
  std::vector<Eigen::MatrixXd> mlp_out;   // B x W, fc2(silu(hpre))
  std::vector<Eigen::MatrixXd> block_out; // B x W, post-mixing
};

// Eq.-2 mixing for one layer; m must lie in [0,1] (asserted in the scalar
// forms, thrown by the batch forward).
double layer_apply(double x_in, double f_out, double m);
Eigen::VectorXd layer_apply(const Eigen::VectorXd& x_in,
                            const Eigen::VectorXd& f_out, double m);
bool mask_value_valid(double m);

// Simulated layer skipping over a batch: out = x + m * blockMLP(x), one mask
// row per sample, entries in [0,1]. cache may be null when only eps_hat is
// needed and no backward pass follows.
void denoiser_forward(const DenoiserModel& model, const Eigen::MatrixXd& input,
                      const Eigen::MatrixXd& emb, const Eigen::MatrixXd& masks,
                      Eigen::MatrixXd& eps_hat, ForwardCache* cache);

struct BackwardRequest {
  const Eigen::MatrixXd* d_eps_hat = nullptr;          // required, B x data_dim
  const std::vector<Eigen::MatrixXd>* d_taps = nullptr; // optional, per block B x W
  DenoiserGrads* param_grads = nullptr;                 // optional, accumulated
  Eigen::MatrixXd* d_masks = nullptr;                   // optional, B x n_layers
};

void denoiser_backward(const DenoiserModel& model, const ForwardCache& cache,
                       const Eigen::MatrixXd& masks, const BackwardRequest& req);

// Physical skipping for inference: blocks whose bit is 0 are never executed.
// All rows share one mask; bits must be 0 or 1. block_calls[l], when given,
// must arrive sized n_layers and counts executions.
void denoiser_forward_pruned(const DenoiserModel& model,
                             const Eigen::MatrixXd& input,
                             const Eigen::MatrixXd& emb,
                             const std::vector<int>& mask_bits,
                             Eigen::MatrixXd& eps_hat,
                             std::vector<int64_t>* block_calls);

}  // namespace alter
