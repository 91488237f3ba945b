#pragma once

// Stereo-aware attention: the audio feature map is split into left/right
// channel halves, each half attends over the other, and a residual 1x1
// projection restores the half; the two halves are concatenated back.

#include <array>
#include <utility>

#include "agsa/nn.hpp"

namespace agsa::sam {

using ad::Tensor;

struct SamConfig {
  std::size_t channels = 8;  // C, must be even
  std::size_t heads = 1;     // over the C/2 embedding
  // Share Q/K/V and the output projection between the L->R and R->L
  // directions. Required for swap equivariance.
  bool shared = true;
  bool operator==(const SamConfig&) const = default;
};

struct SamDirection {
  nn::Conv1x1Params query, key, value;  // C/2 -> C/2
  nn::Conv1x1Params proj;               // C/2 -> C/2, zero at init
};

struct SamParams {
  SamConfig config;
  SamDirection left;   // used by the left half querying the right half
  SamDirection right;  // aliases `left` when config.shared
  void collect(nn::ParamList& out, const std::string& prefix) const;
};

SamParams init_sam(const SamConfig& config, Rng& rng);

// (B,C,H,W) -> first C/2 channels, last C/2 channels.
std::pair<Tensor, Tensor> channel_split(const Tensor& x);

// Tokens are the H*W positions of each half. Returns proj(attn(x_q over x_kv)) + x_q.
Tensor cross_attend(const SamDirection& params, std::size_t heads, const Tensor& x_q, const Tensor& x_kv);

Tensor sam_forward(const SamParams& params, const Tensor& x);

// Exchanges the two channel halves of a (B,C,H,W) map (no gradient).
Tensor swap_halves(const Tensor& x);

}  // namespace agsa::sam
