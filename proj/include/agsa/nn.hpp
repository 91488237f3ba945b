#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "agsa/autodiff.hpp"
#include "agsa/gradcheck.hpp"
#include "agsa/rng.hpp"

namespace agsa::nn {

using ad::Tensor;

// Appends (prefix + name, tensor) pairs; shared by optimizer, checkpoints and
// parameter counting so every consumer sees the same ordering.
using ParamList = std::vector<ad::NamedParam>;

std::size_t count_scalars(const ParamList& params);

// uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)), leaf with requires_grad.
Tensor init_uniform(ad::Shape shape, std::size_t fan_in, Rng& rng);
Tensor init_zeros(ad::Shape shape);

struct LinearParams {
  Tensor weight;  // (in, out)
  Tensor bias;    // (out)
  std::size_t in_dim() const { return weight.dim(0); }
  std::size_t out_dim() const { return weight.dim(1); }
  void collect(ParamList& out, const std::string& prefix) const;
};

LinearParams init_linear(std::size_t in, std::size_t out, Rng& rng);
LinearParams zero_linear(std::size_t in, std::size_t out);
// x (B, in) -> (B, out)
Tensor linear(const LinearParams& p, const Tensor& x);

// 1x1 convolution over (B,C,H,W) with per-channel bias.
struct Conv1x1Params {
  Tensor weight;  // (out, in, 1, 1)
  Tensor bias;    // (out)
  void collect(ParamList& out, const std::string& prefix) const;
};

Conv1x1Params init_conv1x1(std::size_t in, std::size_t out, Rng& rng);
Conv1x1Params zero_conv1x1(std::size_t in, std::size_t out);
Tensor conv1x1(const Conv1x1Params& p, const Tensor& x);

// ---------------------------------------------------------------------------
// CNN encoder: Conv8x8 -> ReLU -> Conv4x4 -> ReLU -> Conv3x3 -> ReLU -> Linear(d)

inline constexpr std::array<std::size_t, 3> kEncoderKernels = {8, 4, 3};

struct CnnEncoderConfig {
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t in_channels = 2;
  std::array<std::size_t, 3> channels = {8, 8, 8};
  std::array<std::size_t, 3> strides = {4, 2, 1};
  std::array<std::size_t, 3> paddings = {2, 1, 1};
  std::size_t out_dim = 64;

  // Spatial size after each conv; throws ConfigError when a kernel does not fit.
  std::array<std::array<std::size_t, 2>, 3> feature_sizes() const;
  std::size_t flat_features() const;
  bool operator==(const CnnEncoderConfig&) const = default;
};

// Smallest total padding for which every kernel fits and the final map is at
// least 2x2; ties go to the lexicographically smallest padding triple.
std::array<std::size_t, 3> auto_paddings(std::size_t height, std::size_t width,
                                         const std::array<std::size_t, 3>& strides);

struct CnnEncoderParams {
  CnnEncoderConfig config;
  std::array<Tensor, 3> conv_weight;  // (C_out, C_in, k, k)
  std::array<Tensor, 3> conv_bias;
  LinearParams proj;
  void collect(ParamList& out, const std::string& prefix) const;
};

CnnEncoderParams init_cnn_encoder(const CnnEncoderConfig& config, Rng& rng);

// (B,C,H,W) -> (B, C3, H3, W3): the conv stack with ReLUs.
Tensor cnn_features(const CnnEncoderParams& p, const Tensor& x_nchw);
// (B, C3, H3, W3) -> (B, d)
Tensor cnn_head(const CnnEncoderParams& p, const Tensor& features);
// Full encoder over channel-last images: (H,W,C) -> (d) or (B,H,W,C) -> (B,d).
// Images are inputs only; no gradient flows back into them.
Tensor cnn_encoder_forward(const CnnEncoderParams& p, const Tensor& image_hwc);

// Re-lays out (H,W,C) or (B,H,W,C) data as (B,C,H,W).
Tensor hwc_to_nchw(const Tensor& image_hwc);

// ---------------------------------------------------------------------------
// Multi-head scaled dot-product attention.

struct MhaParams {
  std::size_t heads = 4;
  Tensor wq, wk, wv;  // (d_m, d_m); head h uses columns [h*d_head, (h+1)*d_head)
  LinearParams out;   // (d_m, d_m)
  std::size_t model_dim() const { return wq.dim(0); }
  void collect(ParamList& out_list, const std::string& prefix) const;
};

MhaParams init_mha(std::size_t model_dim, std::size_t heads, Rng& rng);

struct MhaOutput {
  Tensor output;                 // (B, n_q, d_m) or (n_q, d_m)
  std::vector<Tensor> weights;   // per head, (B, n_q, n_k) or (n_q, n_k)
};

// query (B,n_q,d_m), context (B,n_k,d_m); rank-2 inputs are treated as B = 1.
MhaOutput mha_forward(const MhaParams& p, const Tensor& query, const Tensor& context);

// ---------------------------------------------------------------------------
// GRU cell:
//   z = sigmoid(x W_z + h U_z + b_z)
//   r = sigmoid(x W_r + h U_r + b_r)
//   c = tanh(x W_c + (r * h) U_c + b_c)
//   h' = (1 - z) * h + z * c

struct GruParams {
  Tensor w_z, w_r, w_c;  // (in, hidden)
  Tensor u_z, u_r, u_c;  // (hidden, hidden)
  Tensor b_z, b_r, b_c;  // (hidden)
  std::size_t input_dim() const { return w_z.dim(0); }
  std::size_t hidden_dim() const { return w_z.dim(1); }
  void collect(ParamList& out, const std::string& prefix) const;
};

GruParams init_gru(std::size_t input_dim, std::size_t hidden_dim, Rng& rng);

// input (B,in) or (in); h_prev with matching leading shape.
Tensor gru_step(const GruParams& p, const Tensor& input, const Tensor& h_prev);

}  // namespace agsa::nn
