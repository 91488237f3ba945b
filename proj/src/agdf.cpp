#include "agsa/agdf.hpp"

#include "agsa/error.hpp"

namespace agsa::agdf {

using namespace agsa::ad;

namespace {

Tensor as_batch(const Tensor& v) { return v.rank() == 1 ? reshape(v, {1, v.dim(0)}) : v; }

}  // namespace

void AgdfParams::collect(nn::ParamList& out, const std::string& prefix) const {
  audio_embed.collect(out, prefix + ".audio_embed");
  av_embed.collect(out, prefix + ".av_embed");
  attention.collect(out, prefix + ".attention");
  out.push_back({prefix + ".gate_w_av", gate_w_av});
  out.push_back({prefix + ".gate_w_a", gate_w_a});
  out.push_back({prefix + ".gate_b", gate_b});
}

AgdfParams init_agdf(const AgdfConfig& config, Rng& rng) {
  if (config.feature_dim == 0 || config.model_dim == 0) throw ConfigError("fusion dims must be positive");
  AgdfParams p;
  p.config = config;
  const std::size_t d = config.feature_dim, dm = config.model_dim;
  p.audio_embed = nn::init_linear(d, dm, rng);
  p.av_embed = nn::init_linear(2 * d, dm, rng);
  p.attention = nn::init_mha(dm, config.heads, rng);
  const std::size_t gate_out = config.per_component_gate ? dm : 1;
  p.gate_w_av = nn::init_uniform({dm, gate_out}, dm, rng);
  p.gate_w_a = nn::init_uniform({dm, gate_out}, dm, rng);
  p.gate_b = nn::init_zeros({gate_out});
  return p;
}

GuidedAttention guided_attention(const AgdfParams& p, const Tensor& f_a_in, const Tensor& f_v_in) {
  const std::size_t d = p.config.feature_dim, dm = p.config.model_dim;
  const Tensor f_a = as_batch(f_a_in);
  const Tensor f_v = as_batch(f_v_in);
  if (f_a.rank() != 2 || f_v.rank() != 2 || f_a.dim(1) != d || f_v.dim(1) != d || f_a.dim(0) != f_v.dim(0)) {
    throw ShapeError("fusion expects audio and visual features (B," + std::to_string(d) + "), got " +
                     to_string(f_a_in.shape()) + " and " + to_string(f_v_in.shape()));
  }
  const std::size_t batch = f_a.dim(0);
  const Tensor audio_emb = nn::linear(p.audio_embed, f_a);
  Tensor context;
  if (!p.config.two_token_context) {
    const Tensor f_av = concat({f_a, f_v}, 1);
    context = reshape(nn::linear(p.av_embed, f_av), {batch, 1, dm});
  } else {
    // Same embedding weights, applied to each modality's rows separately.
    const Tensor w_a = slice(p.av_embed.weight, 0, 0, d);
    const Tensor w_v = slice(p.av_embed.weight, 0, d, d);
    const Tensor token_a = reshape(bias_add(matmul(f_a, w_a), p.av_embed.bias), {batch, 1, dm});
    const Tensor token_v = reshape(bias_add(matmul(f_v, w_v), p.av_embed.bias), {batch, 1, dm});
    context = concat({token_a, token_v}, 1);
  }
  auto mha = nn::mha_forward(p.attention, reshape(audio_emb, {batch, 1, dm}), context);
  return {reshape(mha.output, {batch, dm}), audio_emb, mha.weights[0]};
}

GatedFusion gated_fuse(const AgdfParams& p, const Tensor& attended_in, const Tensor& audio_emb_in) {
  const std::size_t dm = p.config.model_dim;
  const Tensor attended = as_batch(attended_in);
  const Tensor audio_emb = as_batch(audio_emb_in);
  if (attended.shape() != audio_emb.shape() || attended.rank() != 2 || attended.dim(1) != dm) {
    throw ShapeError("gated_fuse expects two (B," + std::to_string(dm) + ") inputs, got " +
                     to_string(attended_in.shape()) + " and " + to_string(audio_emb_in.shape()));
  }
  const Tensor logit = bias_add(add(matmul(attended, p.gate_w_av), matmul(audio_emb, p.gate_w_a)), p.gate_b);
  const Tensor gate = sigmoid(logit);
  const Tensor gate_wide = p.config.per_component_gate ? gate : matmul(gate, Tensor::full({1, dm}, 1.0));
  // a + w * (b - a): equal inputs give back a exactly.
  Tensor fused = add(audio_emb, mul(gate_wide, sub(attended, audio_emb)));
  if (attended_in.rank() == 1) fused = reshape(fused, {dm});
  return {fused, gate};
}

Tensor agdf_forward(const AgdfParams& p, const Tensor& f_a, const Tensor& f_v) {
  const auto ga = guided_attention(p, f_a, f_v);
  Tensor fused = gated_fuse(p, ga.attended, ga.audio_emb).fused;
  if (f_a.rank() == 1) fused = reshape(fused, {p.config.model_dim});
  return fused;
}

}  // namespace agsa::agdf
