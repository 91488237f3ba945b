#include "agsa/pipeline.hpp"

#include "agsa/error.hpp"

namespace agsa::pipeline {

using namespace agsa::ad;

const char* profile_name(Profile p) { return p == Profile::kPaper ? "paper" : "desk"; }

Profile parse_profile(std::string_view s) {
  if (s == "desk") return Profile::kDesk;
  if (s == "paper") return Profile::kPaper;
  throw ConfigError("unknown profile '" + std::string(s) + "' (expected desk|paper)");
}

const char* visual_kind_name(VisualKind k) { return k == VisualKind::kRgb ? "rgb" : "depth"; }

VisualKind parse_visual_kind(std::string_view s) {
  if (s == "depth") return VisualKind::kDepth;
  if (s == "rgb") return VisualKind::kRgb;
  throw ConfigError("unknown visual kind '" + std::string(s) + "' (expected depth|rgb)");
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::paper() {
  ModelConfig c;
  c.profile = Profile::kPaper;
  c.feature_dim = 512;
  c.model_dim = 768;
  c.hidden_dim = 512;
  c.attention_heads = 4;
  c.bands = 65;
  c.frames = 26;
  c.image_height = 128;
  c.image_width = 128;
  c.channels = {32, 64, 64};
  return c;
}

namespace {

nn::CnnEncoderConfig encoder_config(std::size_t h, std::size_t w, std::size_t in_ch,
                                    const std::array<std::size_t, 3>& channels, std::size_t out_dim) {
  nn::CnnEncoderConfig c;
  c.height = h;
  c.width = w;
  c.in_channels = in_ch;
  c.channels = channels;
  c.paddings = nn::auto_paddings(h, w, c.strides);
  c.out_dim = out_dim;
  return c;
}

}  // namespace

nn::CnnEncoderConfig ModelConfig::audio_encoder() const {
  return encoder_config(bands, frames, 2, channels, feature_dim);
}

nn::CnnEncoderConfig ModelConfig::visual_encoder() const {
  return encoder_config(image_height, image_width, visual_channels(), channels, feature_dim);
}

void ModelConfig::validate() const {
  if (feature_dim == 0 || model_dim == 0 || hidden_dim == 0) throw ConfigError("model dims must be positive");
  if (use_sam && channels[2] % 2 != 0) throw ConfigError("SAM needs an even channel count after the last conv");
  if (use_agdf && (attention_heads == 0 || model_dim % attention_heads != 0)) {
    throw ConfigError("model.model_dim must be divisible by model.attention_heads");
  }
  if (use_sam && (sam_heads == 0 || (channels[2] / 2) % sam_heads != 0)) {
    throw ConfigError("model.sam_heads must divide half the audio channels");
  }
  audio_encoder().flat_features();
  visual_encoder().flat_features();
}

nn::ParamList AgentModel::parameters() const {
  nn::ParamList out;
  visual.collect(out, "visual");
  audio.collect(out, "audio");
  if (sam) sam->collect(out, "sam");
  if (agdf) agdf->collect(out, "agdf");
  if (concat) concat->collect(out, "fusion");
  policy.collect(out, "policy");
  return out;
}

AgentModel build_model(const ModelConfig& config, Rng& rng) {
  config.validate();
  AgentModel m;
  m.config = config;
  // Fixed draw order: visual, audio, SAM, fusion, policy. Disabled modules
  // draw nothing, so shared components keep identical initial weights.
  m.visual = nn::init_cnn_encoder(config.visual_encoder(), rng);
  m.audio = nn::init_cnn_encoder(config.audio_encoder(), rng);
  if (config.use_sam) {
    m.sam = sam::init_sam({config.channels[2], config.sam_heads, true}, rng);
  }
  if (config.use_agdf) {
    agdf::AgdfConfig ac;
    ac.feature_dim = config.feature_dim;
    ac.model_dim = config.model_dim;
    ac.heads = config.attention_heads;
    m.agdf = agdf::init_agdf(ac, rng);
  } else {
    m.concat = nn::init_linear(2 * config.feature_dim, config.model_dim, rng);
  }
  m.policy = policy::init_policy(config.model_dim, config.hidden_dim, rng);
  return m;
}

std::size_t count_parameters(const AgentModel& model) { return nn::count_scalars(model.parameters()); }

namespace {

Tensor stack(std::span<const env::Observation* const> obs, bool audio) {
  if (obs.empty()) throw ShapeError("empty observation batch");
  const Tensor& first = audio ? obs[0]->spectrogram : obs[0]->depth;
  Shape shape{obs.size()};
  shape.insert(shape.end(), first.shape().begin(), first.shape().end());
  std::vector<double> data;
  data.reserve(numel(shape));
  for (const auto* o : obs) {
    const Tensor& t = audio ? o->spectrogram : o->depth;
    if (t.shape() != first.shape()) throw ShapeError("observation batch mixes shapes");
    data.insert(data.end(), t.data().begin(), t.data().end());
  }
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace

Tensor stack_spectrograms(std::span<const env::Observation* const> obs) { return stack(obs, true); }
Tensor stack_depths(std::span<const env::Observation* const> obs) { return stack(obs, false); }

Features encode(const AgentModel& model, std::span<const env::Observation* const> obs) {
  const auto& c = model.config;
  const std::size_t batch = obs.size();
  const Tensor spec = stack_spectrograms(obs);
  if (spec.dim(1) != c.bands || spec.dim(2) != c.frames || spec.dim(3) != 2) {
    throw ConfigError("spectrogram " + to_string(obs[0]->spectrogram.shape()) + " does not match the " +
                      profile_name(c.profile) + " profile (" + std::to_string(c.bands) + "," +
                      std::to_string(c.frames) + ",2)");
  }
  Tensor audio_map = nn::cnn_features(model.audio, nn::hwc_to_nchw(spec));
  if (model.sam) audio_map = sam::sam_forward(*model.sam, audio_map);
  Features f;
  f.audio = nn::cnn_head(model.audio, audio_map);

  if (c.blind) {
    // Zeroed visual input; the branch contributes a constant zero feature.
    f.visual = Tensor::zeros({batch, c.feature_dim});
  } else {
    const Tensor depth = stack_depths(obs);
    if (depth.dim(1) != c.image_height || depth.dim(2) != c.image_width || depth.dim(3) != c.visual_channels()) {
      throw ConfigError("visual observation " + to_string(obs[0]->depth.shape()) + " does not match the " +
                        profile_name(c.profile) + " profile");
    }
    f.visual = nn::cnn_encoder_forward(model.visual, depth);
  }

  if (model.agdf) {
    f.fused = agdf::agdf_forward(*model.agdf, f.audio, f.visual);
  } else {
    f.fused = nn::linear(*model.concat, concat({f.audio, f.visual}, 1));
  }
  return f;
}

ForwardResult forward(const AgentModel& model, std::span<const env::Observation* const> obs, const Tensor& h_prev) {
  const Features f = encode(model, obs);
  const Tensor h = nn::gru_step(model.policy.gru, f.fused, h_prev);
  return {policy::policy_heads(model.policy, h), h};
}

ForwardResult forward(const AgentModel& model, const env::Observation& obs, const Tensor& h_prev) {
  const env::Observation* ptr = &obs;
  const Tensor h = h_prev.rank() == 1 ? reshape(h_prev, {1, h_prev.dim(0)}) : h_prev;
  return forward(model, std::span<const env::Observation* const>(&ptr, 1), h);
}

policy::HeadOutputs evaluate_chunks(const AgentModel& model, std::span<const policy::RolloutBuffer> buffers,
                                    std::span<const policy::SequenceChunk> chunks) {
  if (chunks.empty()) throw ShapeError("no chunks to evaluate");
  const std::size_t n = chunks.size();
  const std::size_t len = chunks[0].length;
  const std::size_t hd = model.config.hidden_dim;
  std::vector<const env::Observation*> obs;
  obs.reserve(n * len);
  std::vector<double> h0(n * hd);
  for (std::size_t c = 0; c < n; ++c) {
    if (chunks[c].length != len) throw ShapeError("chunks differ in length");
    const auto& first = buffers[chunks[c].worker][chunks[c].start];
    if (first.hidden.size() != hd) throw ShapeError("stored hidden state has the wrong size");
    std::copy(first.hidden.begin(), first.hidden.end(), h0.begin() + c * hd);
  }
  for (std::size_t t = 0; t < len; ++t)
    for (const auto& c : chunks) obs.push_back(&buffers[c.worker][c.start + t].observation);

  const Tensor fused = encode(model, obs).fused;
  Tensor h({n, hd}, std::move(h0));
  std::vector<Tensor> outputs;
  for (std::size_t t = 0; t < len; ++t) {
    if (t > 0) {
      // An episode that ended at t-1 restarts from a zero state.
      std::vector<double> mask(n * hd, 1.0);
      bool any = false;
      for (std::size_t c = 0; c < n; ++c) {
        if (buffers[chunks[c].worker][chunks[c].start + t - 1].done) {
          std::fill(mask.begin() + c * hd, mask.begin() + (c + 1) * hd, 0.0);
          any = true;
        }
      }
      if (any) h = mul(h, Tensor({n, hd}, std::move(mask)));
    }
    h = nn::gru_step(model.policy.gru, slice(fused, 0, t * n, n), h);
    outputs.push_back(h);
  }
  return policy::policy_heads(model.policy, len == 1 ? outputs[0] : concat(outputs, 0));
}

}  // namespace agsa::pipeline
