#pragma once

// Experiment orchestration: episode sampling, baseline agents, evaluation,
// training with checkpoints, the ablation sweep, trajectory plots and the
// gradient-check suite.

#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "agsa/config.hpp"
#include "agsa/gradcheck.hpp"
#include "agsa/pipeline.hpp"

namespace agsa::harness {

using config::RunConfig;

// Called with progress lines; may be empty.
using LogFn = std::function<void(const std::string&)>;

// ---------------------------------------------------------------------------
// Episodes

enum class Setting { kHeard, kUnheard };
const char* setting_name(Setting s);
Setting parse_setting(std::string_view s);

struct MapSet {
  std::vector<env::ParsedMap> parsed;
  std::vector<std::shared_ptr<const env::GridMap>> maps;
};

MapSet load_maps(const std::vector<std::string>& names);

// Source from the map's 'G' (fixed_source) or a random free cell; start from
// 'S' (fixed_start) or a random free cell that differs from the source and can
// reach it; heading uniform; signature uniform from `pool`.
env::EpisodeSpec sample_episode(const env::ParsedMap& map, const config::EnvConfig& env_config,
                                const std::vector<std::vector<double>>& pool, Rng& rng);

env::SignaturePools signature_pools(const RunConfig& config);

// ---------------------------------------------------------------------------
// Baselines

enum class AgentKind { kPolicy, kRandom, kDirectionFollower };
const char* agent_name(AgentKind k);
AgentKind parse_agent(std::string_view s);

env::Action random_action(Rng& rng);

// Bearing sine from the interaural level ratio: sin(theta) = (L - R) / (L + R).
std::optional<double> estimate_bearing_sine(const env::Observation& obs);
// Peak over bands of the time-averaged L + R; 1 on the source cell up to noise.
double peak_band_level(const env::Observation& obs);

inline constexpr double kFollowerStopLevel = 0.75;
inline constexpr double kFollowerTurnSine = 0.9;

// Stops above kFollowerStopLevel, turns toward a lateral source, otherwise
// moves forward; a silent observation also moves forward.
env::Action direction_follower_action(const env::Observation& obs);

// ---------------------------------------------------------------------------
// Evaluation

struct EvalOptions {
  Setting setting = Setting::kHeard;
  AgentKind agent = AgentKind::kPolicy;
  int episodes = 100;
  std::uint64_t seed = 1000;
  bool blind = false;  // zero the visual observation
};

struct EvalResult {
  Setting setting = Setting::kHeard;
  AgentKind agent = AgentKind::kPolicy;
  env::Metrics metrics;
  std::vector<env::TrajectoryRecord> trajectories;
};

// Episode i is drawn from derive_seed(seed, i), so results do not depend on
// how episodes are scheduled. `model` may be null for the baselines.
EvalResult evaluate(const pipeline::AgentModel* model, const RunConfig& config, const EvalOptions& options);

// Recomputes the table from trajectory records alone.
env::Metrics metrics_from_trajectories(const std::vector<env::TrajectoryRecord>& records);

std::string metrics_table_header();
std::string metrics_table_row(const std::string& label, const env::Metrics& m);
// {"event":"summary","label":..,"setting":..,"agent":..,"episodes":..,"sr":..,"spl":..,"sna":..}
std::string summary_record(const std::string& label, const EvalResult& result);

// ---------------------------------------------------------------------------
// Training

struct UpdateLog {
  long update = 0;
  long env_steps = 0;
  long episodes = 0;      // finished episodes so far
  int finished = 0;       // episodes finished during this rollout
  double mean_return = 0.0;
  double success_rate = 0.0;
  double mean_length = 0.0;
  policy::UpdateReport report;
  std::string to_json() const;
};

class Trainer {
 public:
  explicit Trainer(RunConfig config);
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;
  ~Trainer();

  static std::unique_ptr<Trainer> resume(const std::string& checkpoint_path);

  const RunConfig& config() const { return config_; }
  const pipeline::AgentModel& model() const { return model_; }
  long env_steps() const { return env_steps_; }
  long updates() const { return updates_; }
  long episodes() const { return episodes_; }
  bool done() const { return env_steps_ >= config_.train.total_steps; }

  // One rollout of rollout_steps x num_envs transitions followed by PPO epochs.
  UpdateLog update();

  // Binary container, written to a temporary file and renamed into place.
  void save(const std::string& path) const;
  void save(std::ostream& os) const;

 private:
  struct Worker;
  Trainer(RunConfig config, bool fresh);
  void load(std::istream& is);
  void start_episode(Worker& w);

  RunConfig config_;
  pipeline::AgentModel model_;
  std::unique_ptr<policy::Adam> optimizer_;
  Rng rng_;
  MapSet maps_;
  env::SignaturePools pools_;
  std::vector<std::unique_ptr<Worker>> workers_;
  long env_steps_ = 0;
  long updates_ = 0;
  long episodes_ = 0;
};

struct LoadedModel {
  RunConfig config;
  pipeline::AgentModel model;
  long env_steps = 0;
};

LoadedModel load_model(const std::string& checkpoint_path);

// Throws ConfigError when the two configs describe different architectures.
void check_compatible(const pipeline::ModelConfig& checkpoint, const pipeline::ModelConfig& requested);

struct TrainResult {
  std::string checkpoint_path;
  std::string log_path;
  long env_steps = 0;
  std::optional<EvalResult> final_eval;
};

// Writes <out_dir>/checkpoint.bin and appends to <out_dir>/train_log.jsonl.
// With `resume_from`, continues that run instead of starting fresh.
TrainResult train(const RunConfig& config, const LogFn& log, const std::string& resume_from = "");

// ---------------------------------------------------------------------------
// Ablation

struct AblationVariant {
  std::string name;  // "full", "no_sam", "no_agdf", "no_sam_no_agdf"
  RunConfig config;
};

std::vector<AblationVariant> ablation_variants(const RunConfig& base);
// True when the configs are equal after aligning use_sam and use_agdf.
bool differ_only_in_fusion_flags(const RunConfig& a, const RunConfig& b);

struct AblationRow {
  std::string name;
  env::Metrics metrics;
};

// Trains and evaluates every variant under <out_dir>/<name>; emits one
// summary record per variant to `records`.
std::vector<AblationRow> run_ablation(const RunConfig& base, const LogFn& log, std::ostream* records);
std::string ablation_table(const std::vector<AblationRow>& rows);

// ---------------------------------------------------------------------------
// Plot

// Vertices are the start cell and every change of cell, in order.
std::vector<env::Cell> path_vertices(const env::TrajectoryRecord& record);

// Deterministic SVG: walls, start and source markers, the path polyline
// (dashed red for failures) and an SPL label. DataError for cells off the map.
std::string render_trajectory_svg(const env::GridMap& map, const env::TrajectoryRecord& record);

// ---------------------------------------------------------------------------
// Gradient checks

struct GradCheckCase {
  std::string module;
  std::uint64_t seed = 0;
  ad::GradCheckReport report;
};

// CNN encoder, SAM, AGDF, GRU, actor/critic heads and the end-to-end PPO loss
// over a short rollout, on small random instances, once per seed.
std::vector<GradCheckCase> run_gradcheck_suite(int seeds, const LogFn& log);

}  // namespace agsa::harness
