#pragma once

// Audio-guided dynamic fusion. The embedded audio feature queries the
// embedded audio-visual concatenation through multi-head attention; a sigmoid
// gate then mixes the attended feature with the embedded audio feature:
//
//   f_av  = Cat(f_a, f_v)
//   f'_av = MHA(E_a f_a, E_av f_av)
//   w     = sigmoid(f'_av W'_av + (E_a f_a) W_a + b)
//   K_f   = w * f'_av + (1 - w) * (E_a f_a)

#include "agsa/nn.hpp"

namespace agsa::agdf {

using ad::Tensor;

struct AgdfConfig {
  std::size_t feature_dim = 64;  // d
  std::size_t model_dim = 96;    // d_m
  std::size_t heads = 4;
  bool per_component_gate = false;  // gate logits of width d_m instead of a scalar
  bool two_token_context = false;   // f_a and f_v as separate context tokens
  bool operator==(const AgdfConfig&) const = default;
};

struct AgdfParams {
  AgdfConfig config;
  nn::LinearParams audio_embed;  // d -> d_m
  nn::LinearParams av_embed;     // 2d -> d_m
  nn::MhaParams attention;
  Tensor gate_w_av;  // (d_m, 1) or (d_m, d_m)
  Tensor gate_w_a;   // (d_m, 1) or (d_m, d_m)
  Tensor gate_b;     // (1) or (d_m)
  void collect(nn::ParamList& out, const std::string& prefix) const;
};

AgdfParams init_agdf(const AgdfConfig& config, Rng& rng);

struct GuidedAttention {
  Tensor attended;    // f'_av, (B, d_m)
  Tensor audio_emb;   // E_a f_a, (B, d_m)
  Tensor weights;     // head-0 attention weights, (B, 1, n_tokens)
};

// f_a, f_v: (B, d) or (d).
GuidedAttention guided_attention(const AgdfParams& p, const Tensor& f_a, const Tensor& f_v);

struct GatedFusion {
  Tensor fused;  // K_f, (B, d_m)
  Tensor gate;   // omega, (B, 1) or (B, d_m)
};

GatedFusion gated_fuse(const AgdfParams& p, const Tensor& attended, const Tensor& audio_emb);

// guided_attention followed by gated_fuse; returns K_f with the rank of f_a.
Tensor agdf_forward(const AgdfParams& p, const Tensor& f_a, const Tensor& f_v);

}  // namespace agsa::agdf
