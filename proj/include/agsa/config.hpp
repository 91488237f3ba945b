#pragma once

// Run configuration: one JSON document with model/ppo/env/train/eval sections.
// Unknown keys are rejected; `--set a.b=value` overrides parse `value` as JSON
// and fall back to a plain string.

#include <cstdint>
#include <string>
#include <vector>

#include "agsa/envsim.hpp"
#include "agsa/pipeline.hpp"
#include "agsa/policy.hpp"

namespace agsa::config {

struct EnvConfig {
  std::vector<std::string> maps = {"room8"};  // bundled names or file paths
  std::vector<std::string> eval_maps;         // empty: same as maps
  bool fixed_source = true;  // use the map's 'G' cell; otherwise a random free cell
  bool fixed_start = false;  // use the map's 'S' cell; otherwise a random free cell
  double max_depth = 8.0;
  double noise = 0.05;
  int step_limit = 100;
  std::size_t heard_classes = 1;
  std::size_t unheard_classes = 1;
  std::size_t active_bands = 4;
  std::uint64_t pool_seed = 7;
  bool operator==(const EnvConfig&) const = default;
};

struct TrainConfig {
  std::uint64_t seed = 1;
  long total_steps = 200000;
  long eval_interval = 0;  // env steps between evaluations; 0 disables
  int eval_episodes = 20;
  long checkpoint_interval = 0;  // env steps between checkpoints; 0 saves only at the end
  std::string out_dir = "runs/default";
  bool operator==(const TrainConfig&) const = default;
};

struct EvalConfig {
  int episodes = 100;
  std::uint64_t seed = 1000;
  bool operator==(const EvalConfig&) const = default;
};

struct RunConfig {
  pipeline::ModelConfig model;
  policy::PpoConfig ppo;
  EnvConfig env;
  TrainConfig train;
  EvalConfig eval;

  // Simulator settings implied by the model input sizes and env section.
  env::SimConfig sim() const;
  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

std::string to_json(const RunConfig& config);  // pretty-printed
RunConfig from_json(const std::string& text);
RunConfig load_config(const std::string& path);

// "section.key=value"; throws ConfigError for unknown keys or bad syntax.
void apply_override(std::string& json_text, const std::string& assignment);
RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides);
RunConfig with_overrides(const RunConfig& base, const std::vector<std::string>& overrides);

}  // namespace agsa::config
