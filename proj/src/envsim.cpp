#include "agsa/envsim.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <deque>
#include <fstream>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <set>
#include <sstream>

#include "agsa/error.hpp"

namespace agsa::env {

namespace {

constexpr std::array<std::pair<int, int>, 4> kHeadingDelta = {{{0, -1}, {1, 0}, {0, 1}, {-1, 0}}};

constexpr std::string_view kRoom8 =
    "########\n"
    "#......#\n"
    "#......#\n"
    "#...G..#\n"
    "#......#\n"
    "#......#\n"
    "#.S....#\n"
    "########\n";

constexpr std::string_view kCorridor =
    "#########\n"
    "#S.....G#\n"
    "#########\n";

constexpr std::string_view kTwoRoom =
    "##########\n"
    "#....#...#\n"
    "#....#...#\n"
    "#S.......#\n"
    "#....#.G.#\n"
    "#....#...#\n"
    "##########\n";

constexpr std::string_view kMaze =
    "#########\n"
    "#S..#...#\n"
    "#.#.#.#.#\n"
    "#.#...#.#\n"
    "#.#####.#\n"
    "#...#..G#\n"
    "###.#.###\n"
    "#.......#\n"
    "#########\n";

std::uint64_t bits(double v) { return std::bit_cast<std::uint64_t>(v); }
double from_bits(std::uint64_t b) { return std::bit_cast<double>(b); }

}  // namespace

const char* heading_name(Heading h) {
  static constexpr std::array<const char*, 4> names = {"N", "E", "S", "W"};
  return names[static_cast<int>(h)];
}

Heading parse_heading(std::string_view s) {
  if (s == "N") return Heading::kNorth;
  if (s == "E") return Heading::kEast;
  if (s == "S") return Heading::kSouth;
  if (s == "W") return Heading::kWest;
  throw DataError("unknown heading '" + std::string(s) + "'");
}

const char* action_name(Action a) {
  static constexpr std::array<const char*, 4> names = {"forward", "turn_left", "turn_right", "stop"};
  return names[static_cast<int>(a)];
}

Action parse_action(std::string_view s) {
  for (int i = 0; i < kNumActions; ++i) {
    if (s == action_name(static_cast<Action>(i))) return static_cast<Action>(i);
  }
  throw DataError("unknown action '" + std::string(s) + "'");
}

Heading turn_left(Heading h) { return static_cast<Heading>((static_cast<int>(h) + 3) % 4); }
Heading turn_right(Heading h) { return static_cast<Heading>((static_cast<int>(h) + 1) % 4); }

Cell neighbor(Cell c, Heading h) {
  const auto [dx, dy] = kHeadingDelta[static_cast<int>(h)];
  return {c.x + dx, c.y + dy};
}

// GridMap -------------------------------------------------------------------

GridMap::GridMap(int width, int height, std::vector<bool> walls, std::string name)
    : width_(width), height_(height), walls_(std::move(walls)), name_(std::move(name)) {
  if (width < 3 || height < 3) throw ConfigError("map must be at least 3x3");
  if (walls_.size() != static_cast<std::size_t>(width) * height) throw ConfigError("map wall grid has wrong size");
  bool any_free = false;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const bool border = x == 0 || y == 0 || x == width - 1 || y == height - 1;
      const bool wall = walls_[index({x, y})];
      if (border && !wall) {
        throw ConfigError("map border cell (" + std::to_string(x) + "," + std::to_string(y) + ") is not a wall");
      }
      any_free = any_free || !wall;
    }
  }
  if (!any_free) throw ConfigError("map has no free cell");
}

std::vector<Cell> GridMap::free_cells() const {
  std::vector<Cell> cells;
  for (int y = 0; y < height_; ++y)
    for (int x = 0; x < width_; ++x)
      if (!walls_[index({x, y})]) cells.push_back({x, y});
  return cells;
}

GridMap GridMap::rotated() const {
  std::vector<bool> w(walls_.size());
  const int new_width = height_;
  for (int y = 0; y < height_; ++y)
    for (int x = 0; x < width_; ++x) {
      const Cell r = rotate_cell({x, y});
      w[static_cast<std::size_t>(r.y) * new_width + r.x] = walls_[index({x, y})];
    }
  return GridMap(height_, width_, std::move(w), name_);
}

GridMap GridMap::mirrored() const {
  std::vector<bool> w(walls_.size());
  for (int y = 0; y < height_; ++y)
    for (int x = 0; x < width_; ++x) w[index(mirror_cell({x, y}))] = walls_[index({x, y})];
  return GridMap(width_, height_, std::move(w), name_);
}

std::string GridMap::to_text(std::optional<Cell> start, std::optional<Cell> goal) const {
  std::string out;
  for (int y = 0; y < height_; ++y) {
    for (int x = 0; x < width_; ++x) {
      const Cell c{x, y};
      if (start && *start == c) out += 'S';
      else if (goal && *goal == c) out += 'G';
      else out += walls_[index(c)] ? '#' : '.';
    }
    out += '\n';
  }
  return out;
}

ParsedMap parse_map(std::string_view text, std::string name) {
  std::vector<std::string> rows;
  std::vector<int> row_lines;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = text.find('\n', pos);
    std::string line(text.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos));
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) {
      rows.push_back(std::move(line));
      row_lines.push_back(line_no);
    }
    if (end == std::string_view::npos) break;
    pos = end + 1;
  }
  if (rows.empty()) throw ParseError("map is empty", 1);
  const std::size_t width = rows[0].size();
  std::vector<bool> walls;
  std::optional<Cell> start, goal;
  for (std::size_t y = 0; y < rows.size(); ++y) {
    if (rows[y].size() != width) {
      throw ParseError("row has " + std::to_string(rows[y].size()) + " cells, expected " + std::to_string(width),
                       row_lines[y]);
    }
    for (std::size_t x = 0; x < width; ++x) {
      const char ch = rows[y][x];
      const Cell c{static_cast<int>(x), static_cast<int>(y)};
      switch (ch) {
        case '#': walls.push_back(true); break;
        case '.': walls.push_back(false); break;
        case 'S':
          if (start) throw ParseError("second agent start 'S'", row_lines[y]);
          start = c;
          walls.push_back(false);
          break;
        case 'G':
          if (goal) throw ParseError("second source 'G'", row_lines[y]);
          goal = c;
          walls.push_back(false);
          break;
        default:
          throw ParseError(std::string("unexpected character '") + ch + "'", row_lines[y]);
      }
    }
  }
  try {
    return {GridMap(static_cast<int>(width), static_cast<int>(rows.size()), std::move(walls), std::move(name)), start,
            goal};
  } catch (const ConfigError& e) {
    throw ParseError(e.what(), row_lines.front());
  }
}

ParsedMap load_map(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open map file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  std::string name = path;
  if (const auto slash = name.find_last_of('/'); slash != std::string::npos) name = name.substr(slash + 1);
  if (const auto dot = name.find_last_of('.'); dot != std::string::npos) name = name.substr(0, dot);
  return parse_map(ss.str(), name);
}

ParsedMap builtin_map(std::string_view name) {
  if (name == "room8") return parse_map(kRoom8, "room8");
  if (name == "corridor") return parse_map(kCorridor, "corridor");
  if (name == "two_room") return parse_map(kTwoRoom, "two_room");
  if (name == "maze") return parse_map(kMaze, "maze");
  throw ConfigError("unknown bundled map '" + std::string(name) + "'");
}

std::vector<std::string> builtin_map_names() { return {"room8", "corridor", "two_room", "maze"}; }

ParsedMap resolve_map(const std::string& name_or_path) {
  const auto names = builtin_map_names();
  if (std::find(names.begin(), names.end(), name_or_path) != names.end()) return builtin_map(name_or_path);
  return load_map(name_or_path);
}

GridMap random_map(int width, int height, double obstacle_density, Rng& rng) {
  std::vector<bool> walls(static_cast<std::size_t>(width) * height, false);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const bool border = x == 0 || y == 0 || x == width - 1 || y == height - 1;
      walls[static_cast<std::size_t>(y) * width + x] = border || rng.uniform() < obstacle_density;
    }
  // Keep at least one free cell.
  walls[static_cast<std::size_t>(height / 2) * width + width / 2] = false;
  return GridMap(width, height, std::move(walls), "random");
}

// Distances -----------------------------------------------------------------

std::vector<int> distance_field(const GridMap& map, Cell target) {
  std::vector<int> dist(static_cast<std::size_t>(map.width()) * map.height(), kUnreachable);
  if (map.is_wall(target)) return dist;
  std::deque<Cell> queue{target};
  dist[map.index(target)] = 0;
  while (!queue.empty()) {
    const Cell c = queue.front();
    queue.pop_front();
    for (int h = 0; h < 4; ++h) {
      const Cell n = neighbor(c, static_cast<Heading>(h));
      if (map.is_wall(n) || dist[map.index(n)] != kUnreachable) continue;
      dist[map.index(n)] = dist[map.index(c)] + 1;
      queue.push_back(n);
    }
  }
  return dist;
}

std::optional<int> geodesic_distance(const GridMap& map, Cell from, Cell to) {
  if (map.is_wall(from) || map.is_wall(to)) throw ContractError("geodesic_distance endpoints must be free cells");
  const int d = distance_field(map, to)[map.index(from)];
  if (d == kUnreachable) return std::nullopt;
  return d;
}

// Depth ---------------------------------------------------------------------

Tensor render_depth(const GridMap& map, const AgentState& state, const SimConfig& config) {
  const std::size_t rows = config.depth_height, cols = config.depth_width;
  std::vector<double> column(cols, 1.0);
  const auto [fx, fy] = kHeadingDelta[static_cast<int>(state.heading)];
  const auto [lx, ly] = kHeadingDelta[static_cast<int>(turn_left(state.heading))];
  const double max_depth = config.max_depth;

  for (std::size_t i = 0; i < cols; ++i) {
    // Image-plane ray: one unit forward, `lateral` units to the left.
    const double lateral = 1.0 - static_cast<double>(2 * i + 1) / static_cast<double>(cols);
    const double abs_lat = std::abs(lateral);
    const int lat_sign = lateral > 0 ? 1 : -1;
    int f = 0, l = 0;
    int next_f_idx = 0, next_l_idx = 0;
    double depth = max_depth;
    while (true) {
      const double t_f = 0.5 + next_f_idx;
      const double t_l = abs_lat > 0 ? (0.5 + next_l_idx) / abs_lat : std::numeric_limits<double>::infinity();
      double t;
      if (t_f < t_l) {
        t = t_f;
        ++f;
        ++next_f_idx;
      } else {
        t = t_l;
        l += lat_sign;
        ++next_l_idx;
      }
      if (t + 0.5 >= max_depth) break;
      const Cell c{state.pos.x + f * fx + l * lx, state.pos.y + f * fy + l * ly};
      if (map.is_wall(c)) {
        depth = t + 0.5;
        break;
      }
    }
    column[i] = std::clamp(depth, 0.0, max_depth) / max_depth;
  }
  std::vector<double> img(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) img[r * cols + c] = column[c];
  return Tensor({rows, cols, 1}, std::move(img));
}

// Audio ---------------------------------------------------------------------

double source_bearing(const GridMap& map, const std::vector<int>& field, const AgentState& state) {
  const int here = field[map.index(state.pos)];
  if (here <= 0) return 0.0;
  // Relative direction r = (world - heading) mod 4: 0 ahead, 1 right, 2 behind, 3 left.
  static constexpr std::array<std::pair<int, int>, 4> kRelative = {{{1, 0}, {0, -1}, {-1, 0}, {0, 1}}};
  int fwd = 0, left = 0;
  for (int h = 0; h < 4; ++h) {
    const Cell n = neighbor(state.pos, static_cast<Heading>(h));
    if (map.is_wall(n) || field[map.index(n)] != here - 1) continue;
    const int rel = (h - static_cast<int>(state.heading) + 4) % 4;
    fwd += kRelative[rel].first;
    left += kRelative[rel].second;
  }
  return std::atan2(static_cast<double>(left), static_cast<double>(fwd)) * 180.0 / std::numbers::pi;
}

BinauralGains interaural_gains(double bearing_deg) {
  const double clamped = std::clamp(bearing_deg, -90.0, 90.0);
  const double s = std::sin(clamped * std::numbers::pi / 180.0);
  return {0.5 * (1.0 + s), 0.5 * (1.0 - s)};
}

Tensor synth_binaural_spectrogram(const GridMap& map, const AgentState& state, const SoundSource& source,
                                  const SimConfig& config, std::span<const double> noise_field) {
  const std::size_t bands = config.bands, frames = config.frames;
  if (source.signature.size() != bands) {
    throw ConfigError("source signature has " + std::to_string(source.signature.size()) + " bands, expected " +
                      std::to_string(bands));
  }
  if (noise_field.size() != bands * frames) throw ShapeError("noise field must hold F*T values");
  std::vector<double> out(bands * frames * 2, 0.0);
  const auto field = distance_field(map, source.pos);
  const int d = field[map.index(state.pos)];
  if (d == kUnreachable) return Tensor({bands, frames, 2}, std::move(out));
  const double amplitude = 1.0 / (1.0 + d);
  const auto gains = interaural_gains(source_bearing(map, field, state));
  for (std::size_t f = 0; f < bands; ++f) {
    const double base = source.signature[f] * amplitude;
    for (std::size_t t = 0; t < frames; ++t) {
      const double n = noise_field[f * frames + t];
      out[(f * frames + t) * 2 + 0] = base * gains.left * n;
      out[(f * frames + t) * 2 + 1] = base * gains.right * n;
    }
  }
  return Tensor({bands, frames, 2}, std::move(out));
}

// Reward --------------------------------------------------------------------

double compute_reward(int prev_d, int new_d, Action action, bool success) {
  const double shaping = static_cast<double>(prev_d - new_d);
  const double bonus = (action == Action::kStop && success) ? kSuccessReward : 0.0;
  return bonus - kTimePenalty + shaping;
}

std::optional<int> minimal_action_count(const GridMap& map, const AgentState& start, Cell goal) {
  if (map.is_wall(start.pos) || map.is_wall(goal)) throw ContractError("minimal_action_count needs free cells");
  const std::size_t cells = static_cast<std::size_t>(map.width()) * map.height();
  std::vector<int> dist(cells * 4, -1);
  auto key = [&](Cell c, Heading h) { return map.index(c) * 4 + static_cast<std::size_t>(h); };
  std::deque<std::pair<Cell, Heading>> queue{{start.pos, start.heading}};
  dist[key(start.pos, start.heading)] = 0;
  while (!queue.empty()) {
    const auto [c, h] = queue.front();
    queue.pop_front();
    const int d = dist[key(c, h)];
    if (c == goal) return d + 1;  // plus Stop
    const Cell ahead = neighbor(c, h);
    const std::array<std::pair<Cell, Heading>, 3> next = {
        {{map.is_free(ahead) ? ahead : c, h}, {c, turn_left(h)}, {c, turn_right(h)}}};
    for (const auto& [nc, nh] : next) {
      if (dist[key(nc, nh)] != -1) continue;
      dist[key(nc, nh)] = d + 1;
      queue.push_back({nc, nh});
    }
  }
  return std::nullopt;
}

// Environment ---------------------------------------------------------------

Environment::Environment(std::shared_ptr<const GridMap> map, SimConfig config)
    : map_(std::move(map)), config_(config) {
  if (!map_) throw ConfigError("environment needs a map");
  if (config_.step_limit <= 0) throw ConfigError("step limit must be positive");
  if (config_.max_depth <= 0) throw ConfigError("max depth must be positive");
  if (config_.noise < 0 || config_.noise >= 1) throw ConfigError("audio noise must lie in [0, 1)");
}

Observation Environment::reset(const EpisodeSpec& spec) {
  if (map_->is_wall(spec.source.pos)) throw ConfigError("sound source must be on a free cell");
  if (map_->is_wall(spec.start.pos)) throw ConfigError("agent start must be on a free cell");
  if (spec.start.pos == spec.source.pos) throw ConfigError("agent start coincides with the sound source");
  if (spec.source.signature.size() != config_.bands) throw ConfigError("source signature has the wrong band count");
  if (std::none_of(spec.source.signature.begin(), spec.source.signature.end(), [](double v) { return v > 0; })) {
    throw ConfigError("source signature is silent");
  }
  source_ = spec.source;
  state_ = spec.start;
  state_.steps_taken = 0;
  field_ = distance_field(*map_, source_.pos);
  Rng rng(spec.seed);
  noise_.resize(config_.bands * config_.frames);
  for (double& n : noise_) n = rng.uniform(1.0 - config_.noise, 1.0 + config_.noise);
  done_ = false;
  started_ = true;
  return observe();
}

int Environment::distance() const { return field_.empty() ? kUnreachable : field_[map_->index(state_.pos)]; }

Observation Environment::observe() const {
  if (!started_) throw StateError("environment observed before reset");
  Observation obs;
  obs.depth = config_.blind ? Tensor::zeros({config_.depth_height, config_.depth_width, 1})
                            : render_depth(*map_, state_, config_);
  obs.spectrogram = synth_binaural_spectrogram(*map_, state_, source_, config_, noise_);
  return obs;
}

StepResult Environment::step(Action action) {
  if (!started_) throw StateError("step before reset");
  if (done_) throw StateError("step after the episode finished");
  const int action_id = static_cast<int>(action);
  if (action_id < 0 || action_id >= kNumActions) throw ContractError("invalid action id " + std::to_string(action_id));
  StepResult result;
  const int prev_d = distance();
  switch (action) {
    case Action::kForward: {
      const Cell ahead = neighbor(state_.pos, state_.heading);
      if (map_->is_free(ahead)) state_.pos = ahead;
      else result.info.collision = true;
      break;
    }
    case Action::kTurnLeft: state_.heading = turn_left(state_.heading); break;
    case Action::kTurnRight: state_.heading = turn_right(state_.heading); break;
    case Action::kStop:
      result.info.success = state_.pos == source_.pos;
      done_ = true;
      break;
  }
  ++state_.steps_taken;
  const int new_d = distance();
  result.reward = compute_reward(prev_d, new_d, action, result.info.success);
  if (!done_ && state_.steps_taken >= config_.step_limit) {
    done_ = true;
    result.info.truncated = true;
  }
  result.done = done_;
  result.info.d_geo = new_d;
  result.observation = observe();
  return result;
}

void Environment::save_state(std::ostream& os) const {
  os << started_ << ' ' << done_ << ' ' << state_.pos.x << ' ' << state_.pos.y << ' '
     << static_cast<int>(state_.heading) << ' ' << state_.steps_taken << ' ' << source_.pos.x << ' ' << source_.pos.y
     << ' ' << source_.signature.size();
  for (double v : source_.signature) os << ' ' << bits(v);
  os << ' ' << noise_.size();
  for (double v : noise_) os << ' ' << bits(v);
  os << '\n';
}

void Environment::load_state(std::istream& is) {
  int heading = 0;
  std::size_t n = 0;
  is >> started_ >> done_ >> state_.pos.x >> state_.pos.y >> heading >> state_.steps_taken >> source_.pos.x >>
      source_.pos.y >> n;
  state_.heading = static_cast<Heading>(heading);
  source_.signature.resize(n);
  for (double& v : source_.signature) {
    std::uint64_t b = 0;
    is >> b;
    v = from_bits(b);
  }
  is >> n;
  noise_.resize(n);
  for (double& v : noise_) {
    std::uint64_t b = 0;
    is >> b;
    v = from_bits(b);
  }
  if (!is) throw DataError("truncated environment state");
  field_ = started_ ? distance_field(*map_, source_.pos) : std::vector<int>{};
}

// Sound classes -------------------------------------------------------------

std::vector<double> random_signature(std::size_t bands, std::size_t active, Rng& rng) {
  if (active == 0 || active > bands) throw ConfigError("signature needs 1..F active bands");
  std::vector<std::size_t> idx(bands);
  for (std::size_t i = 0; i < bands; ++i) idx[i] = i;
  rng.shuffle(idx.begin(), idx.end());
  std::vector<double> sig(bands, 0.0);
  double peak = 0.0;
  for (std::size_t i = 0; i < active; ++i) {
    sig[idx[i]] = rng.uniform(0.2, 1.0);
    peak = std::max(peak, sig[idx[i]]);
  }
  for (double& v : sig) v /= peak;
  return sig;
}

namespace {
std::vector<bool> band_pattern(const std::vector<double>& sig) {
  std::vector<bool> p(sig.size());
  for (std::size_t i = 0; i < sig.size(); ++i) p[i] = sig[i] > 0;
  return p;
}
}  // namespace

SignaturePools make_signature_pools(std::size_t bands, std::size_t active, std::size_t n_heard,
                                    std::size_t n_unheard, std::uint64_t seed) {
  Rng rng(seed);
  std::set<std::vector<bool>> seen;
  SignaturePools pools;
  std::size_t attempts = 0;
  auto draw = [&](std::vector<std::vector<double>>& pool, std::size_t count) {
    while (pool.size() < count) {
      if (++attempts > 100000) throw ConfigError("not enough distinct band patterns for the requested pools");
      auto sig = random_signature(bands, active, rng);
      if (seen.insert(band_pattern(sig)).second) pool.push_back(std::move(sig));
    }
  };
  draw(pools.heard, n_heard);
  draw(pools.unheard, n_unheard);
  return pools;
}

bool pools_disjoint(const SignaturePools& pools) {
  std::set<std::vector<bool>> heard;
  for (const auto& s : pools.heard) heard.insert(band_pattern(s));
  return std::none_of(pools.unheard.begin(), pools.unheard.end(),
                      [&](const auto& s) { return heard.count(band_pattern(s)) > 0; });
}

// Metrics -------------------------------------------------------------------

double episode_spl(const EpisodeRecord& r) {
  if (!r.success) return 0.0;
  const int denom = std::max(r.path_length, r.shortest);
  return denom == 0 ? 1.0 : static_cast<double>(r.shortest) / denom;
}

double episode_sna(const EpisodeRecord& r) {
  if (!r.success) return 0.0;
  const int denom = std::max(r.actions, r.min_actions);
  return denom == 0 ? 1.0 : static_cast<double>(r.min_actions) / denom;
}

Metrics compute_metrics(std::span<const EpisodeRecord> episodes) {
  Metrics m;
  m.episodes = episodes.size();
  if (episodes.empty()) return m;
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    const auto& r = episodes[i];
    if (r.success && r.path_length < r.shortest) {
      throw DataError("episode " + std::to_string(i) + " succeeded with path " + std::to_string(r.path_length) +
                      " shorter than the geodesic distance " + std::to_string(r.shortest));
    }
    m.sr += r.success ? 1.0 : 0.0;
    m.spl += episode_spl(r);
    m.sna += episode_sna(r);
  }
  const double n = static_cast<double>(episodes.size());
  m.sr /= n;
  m.spl /= n;
  m.sna /= n;
  return m;
}

}  // namespace agsa::env
