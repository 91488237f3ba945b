#pragma once

// End-to-end agent: feature extraction (two CNN encoders, SAM on the audio
// branch), modal fusion (AGDF or a concat baseline) and the recurrent policy.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "agsa/agdf.hpp"
#include "agsa/envsim.hpp"
#include "agsa/policy.hpp"
#include "agsa/sam.hpp"

namespace agsa::pipeline {

using ad::Tensor;

enum class Profile { kDesk, kPaper };
enum class VisualKind { kDepth, kRgb };

const char* profile_name(Profile p);
Profile parse_profile(std::string_view s);
const char* visual_kind_name(VisualKind k);
VisualKind parse_visual_kind(std::string_view s);

struct ModelConfig {
  Profile profile = Profile::kDesk;
  std::size_t feature_dim = 64;  // d
  std::size_t model_dim = 96;    // d_m
  std::size_t hidden_dim = 128;  // GRU
  std::size_t attention_heads = 4;
  std::size_t sam_heads = 1;
  bool use_sam = true;
  bool use_agdf = true;
  bool blind = false;
  VisualKind visual = VisualKind::kDepth;
  std::size_t bands = 16;   // F
  std::size_t frames = 16;  // T
  std::size_t image_height = 16;
  std::size_t image_width = 16;
  std::array<std::size_t, 3> channels = {8, 8, 8};

  static ModelConfig desk();
  // 128x128 visual input, 65x26x2 spectrogram, d = 512, d_m = 768.
  static ModelConfig paper();

  std::size_t visual_channels() const { return visual == VisualKind::kRgb ? 3 : 1; }
  nn::CnnEncoderConfig audio_encoder() const;
  nn::CnnEncoderConfig visual_encoder() const;
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct AgentModel {
  ModelConfig config;
  nn::CnnEncoderParams visual;
  nn::CnnEncoderParams audio;
  std::optional<sam::SamParams> sam;       // when use_sam
  std::optional<agdf::AgdfParams> agdf;    // when use_agdf
  std::optional<nn::LinearParams> concat;  // 2d -> d_m when !use_agdf
  policy::PolicyParams policy;

  // Stable traversal order shared by the optimizer, checkpoints and counting.
  nn::ParamList parameters() const;
};

AgentModel build_model(const ModelConfig& config, Rng& rng);
std::size_t count_parameters(const AgentModel& model);

struct Features {
  Tensor audio;   // f_a (B, d)
  Tensor visual;  // f_v (B, d), zeros when blind
  Tensor fused;   // K_f (B, d_m)
};

// Stacks per-observation tensors into (B, ...) batches.
Tensor stack_spectrograms(std::span<const env::Observation* const> obs);
Tensor stack_depths(std::span<const env::Observation* const> obs);

Features encode(const AgentModel& model, std::span<const env::Observation* const> obs);

struct ForwardResult {
  policy::HeadOutputs heads;  // log-probs (B,4), values (B)
  Tensor hidden;              // h_new (B, hidden)
};

// One decision step for a batch of observations with hidden states (B, hidden).
ForwardResult forward(const AgentModel& model, std::span<const env::Observation* const> obs, const Tensor& h_prev);
ForwardResult forward(const AgentModel& model, const env::Observation& obs, const Tensor& h_prev);

// Re-unrolls stored rollout chunks; rows are time-major (t * chunks + c).
policy::HeadOutputs evaluate_chunks(const AgentModel& model, std::span<const policy::RolloutBuffer> buffers,
                                    std::span<const policy::SequenceChunk> chunks);

}  // namespace agsa::pipeline
