#pragma once

// Deterministic 2D gridworld with depth and binaural-spectrogram observations.
//
// Coordinates: x grows east, y grows south (row index). North is -y and a left
// turn is counterclockwise on screen: N -> W -> S -> E -> N.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "agsa/autodiff.hpp"
#include "agsa/rng.hpp"

namespace agsa::env {

using ad::Tensor;

enum class Heading : int { kNorth = 0, kEast = 1, kSouth = 2, kWest = 3 };
enum class Action : int { kForward = 0, kTurnLeft = 1, kTurnRight = 2, kStop = 3 };
inline constexpr int kNumActions = 4;

const char* heading_name(Heading h);  // "N", "E", "S", "W"
Heading parse_heading(std::string_view s);
const char* action_name(Action a);  // "forward", "turn_left", "turn_right", "stop"
Action parse_action(std::string_view s);
Heading turn_left(Heading h);
Heading turn_right(Heading h);

struct Cell {
  int x = 0;
  int y = 0;
  bool operator==(const Cell&) const = default;
};

Cell neighbor(Cell c, Heading h);

class GridMap {
 public:
  // Throws ConfigError unless the border is all walls and a free cell exists.
  GridMap(int width, int height, std::vector<bool> walls, std::string name = "");

  int width() const { return width_; }
  int height() const { return height_; }
  const std::string& name() const { return name_; }
  bool in_bounds(Cell c) const { return c.x >= 0 && c.y >= 0 && c.x < width_ && c.y < height_; }
  bool is_wall(Cell c) const { return !in_bounds(c) || walls_[index(c)]; }
  bool is_free(Cell c) const { return !is_wall(c); }
  std::vector<Cell> free_cells() const;
  std::size_t index(Cell c) const { return static_cast<std::size_t>(c.y) * width_ + c.x; }

  // Quarter turn clockwise on screen: (x, y) -> (H-1-y, x).
  GridMap rotated() const;
  Cell rotate_cell(Cell c) const { return {height_ - 1 - c.y, c.x}; }
  // Reflection across the vertical axis: (x, y) -> (W-1-x, y).
  GridMap mirrored() const;
  Cell mirror_cell(Cell c) const { return {width_ - 1 - c.x, c.y}; }

  std::string to_text(std::optional<Cell> start = {}, std::optional<Cell> goal = {}) const;

 private:
  int width_;
  int height_;
  std::vector<bool> walls_;
  std::string name_;
};

struct ParsedMap {
  GridMap map;
  std::optional<Cell> start;
  std::optional<Cell> goal;
};

// '#' wall, '.' free, 'S' agent start, 'G' source; one row per line.
// Throws ParseError carrying the offending line number.
ParsedMap parse_map(std::string_view text, std::string name = "");
ParsedMap load_map(const std::string& path);
// Bundled maps: "room8", "corridor", "two_room", "maze".
ParsedMap builtin_map(std::string_view name);
std::vector<std::string> builtin_map_names();
// Loads a bundled map by name, otherwise treats the argument as a path.
ParsedMap resolve_map(const std::string& name_or_path);

// Border walls plus independently drawn interior obstacles. Connectivity is
// not guaranteed.
GridMap random_map(int width, int height, double obstacle_density, Rng& rng);

// ---------------------------------------------------------------------------

inline constexpr int kUnreachable = -1;

// BFS distances (4-connected, unit steps) from `target` to every cell;
// kUnreachable for walls and disconnected cells.
std::vector<int> distance_field(const GridMap& map, Cell target);

// Throws ContractError when either endpoint is a wall.
std::optional<int> geodesic_distance(const GridMap& map, Cell from, Cell to);

struct AgentState {
  Cell pos;
  Heading heading = Heading::kNorth;
  int steps_taken = 0;
  bool operator==(const AgentState&) const = default;
};

struct SoundSource {
  Cell pos;
  std::vector<double> signature;  // F band amplitudes in [0, 1]
};

struct SimConfig {
  std::size_t depth_height = 16;
  std::size_t depth_width = 16;
  double max_depth = 8.0;  // cells
  std::size_t bands = 16;  // F
  std::size_t frames = 16;  // T
  double noise = 0.05;     // eta
  int step_limit = 100;
  bool blind = false;
  bool operator==(const SimConfig&) const = default;
};

struct Observation {
  Tensor depth;        // (H_v, W_v, 1) in [0, 1]
  Tensor spectrogram;  // (F, T, 2), channel 0 left, channel 1 right
};

// Per-column depth from a 90 degree fan of rays centred on the heading,
// measured along the view axis to the first wall plus half a cell (so a wall
// k cells straight ahead reads k), clamped to max_depth and normalised.
Tensor render_depth(const GridMap& map, const AgentState& state, const SimConfig& config);

// Bearing (degrees, left positive) of the summed unit directions of every
// shortest-path first step, relative to the heading; 0 on the source cell.
double source_bearing(const GridMap& map, const std::vector<int>& field, const AgentState& state);

struct BinauralGains {
  double left;
  double right;
};
BinauralGains interaural_gains(double bearing_deg);

// noise_field holds F*T multiplicative factors shared by both channels.
Tensor synth_binaural_spectrogram(const GridMap& map, const AgentState& state, const SoundSource& source,
                                  const SimConfig& config, std::span<const double> noise_field);

// 10 * [successful Stop] - 0.01 + (prev_d - new_d)
double compute_reward(int prev_d, int new_d, Action action, bool success);
inline constexpr double kSuccessReward = 10.0;
inline constexpr double kTimePenalty = 0.01;

// Fewest actions (moves, turns and the final Stop) from `start` to stopping on `goal`.
std::optional<int> minimal_action_count(const GridMap& map, const AgentState& start, Cell goal);

// ---------------------------------------------------------------------------

struct EpisodeSpec {
  SoundSource source;
  AgentState start;
  std::uint64_t seed = 0;
};

struct StepInfo {
  bool collision = false;
  bool success = false;
  bool truncated = false;
  int d_geo = kUnreachable;
};

struct StepResult {
  Observation observation;
  double reward = 0.0;
  bool done = false;
  StepInfo info;
};

class Environment {
 public:
  Environment(std::shared_ptr<const GridMap> map, SimConfig config);

  Observation reset(const EpisodeSpec& spec);
  StepResult step(Action action);
  Observation observe() const;

  const GridMap& map() const { return *map_; }
  std::shared_ptr<const GridMap> shared_map() const { return map_; }
  const SimConfig& config() const { return config_; }
  const AgentState& state() const { return state_; }
  const SoundSource& source() const { return source_; }
  bool done() const { return done_; }
  bool started() const { return started_; }
  int distance() const;  // current geodesic distance to the source
  const std::vector<double>& noise_field() const { return noise_; }

  // Serialises everything needed to continue the current episode.
  void save_state(std::ostream& os) const;
  void load_state(std::istream& is);

 private:
  std::shared_ptr<const GridMap> map_;
  SimConfig config_;
  AgentState state_;
  SoundSource source_;
  std::vector<int> field_;
  std::vector<double> noise_;
  bool done_ = true;
  bool started_ = false;
};

// ---------------------------------------------------------------------------
// Sound classes

// Sparse band signature: `active` bands drawn without replacement with
// amplitudes in [0.2, 1], rescaled so the loudest band is exactly 1.
std::vector<double> random_signature(std::size_t bands, std::size_t active, Rng& rng);

struct SignaturePools {
  std::vector<std::vector<double>> heard;    // training classes
  std::vector<std::vector<double>> unheard;  // disjoint evaluation classes
};

// Every signature has a distinct active-band pattern, so the pools share no class.
SignaturePools make_signature_pools(std::size_t bands, std::size_t active, std::size_t n_heard,
                                    std::size_t n_unheard, std::uint64_t seed);
bool pools_disjoint(const SignaturePools& pools);

// ---------------------------------------------------------------------------
// Metrics

struct EpisodeRecord {
  bool success = false;
  int path_length = 0;  // cells moved, p
  int shortest = 0;     // geodesic start-to-source distance, l
  int actions = 0;      // actions taken including Stop, n
  int min_actions = 0;  // n*
};

struct Metrics {
  double sr = 0.0;
  double spl = 0.0;
  double sna = 0.0;
  std::size_t episodes = 0;
};

double episode_spl(const EpisodeRecord& r);
double episode_sna(const EpisodeRecord& r);
// Fractions in [0, 1]; throws DataError when a successful episode has p < l.
Metrics compute_metrics(std::span<const EpisodeRecord> episodes);

// ---------------------------------------------------------------------------
// Episode logs: one JSON object per line.
//   {"event":"episode_start","episode":..,"map":..,"x":..,"y":..,"heading":..,
//    "source_x":..,"source_y":..,"d_geo":..,"min_actions":..}
//   {"t":..,"x":..,"y":..,"heading":..,"action":..,"reward":..,"d_geo":..}   (per step)
//   {"event":"episode_end","episode":..,"success":..,"spl":..,"sna":..}

struct StepLog {
  int t = 0;  // 1-based step index
  int x = 0;
  int y = 0;
  Heading heading = Heading::kNorth;
  Action action = Action::kForward;
  double reward = 0.0;
  int d_geo = 0;  // after the action
};

struct TrajectoryRecord {
  int episode = 0;
  std::string map_name;
  AgentState start;
  Cell source;
  int shortest = 0;
  int min_actions = 0;
  std::vector<StepLog> steps;
  bool success = false;
  double spl = 0.0;
  double sna = 0.0;

  // Derives the metric inputs from the step records alone.
  EpisodeRecord to_episode_record() const;
};

void write_trajectory(std::ostream& os, const TrajectoryRecord& record);
std::vector<TrajectoryRecord> read_trajectories(std::istream& is);
std::vector<TrajectoryRecord> read_trajectories_file(const std::string& path);

}  // namespace agsa::env
