#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "agsa/error.hpp"
#include "agsa/harness.hpp"

namespace agsa::harness {

using nlohmann::json;

const char* setting_name(Setting s) { return s == Setting::kUnheard ? "unheard" : "heard"; }

Setting parse_setting(std::string_view s) {
  if (s == "heard") return Setting::kHeard;
  if (s == "unheard") return Setting::kUnheard;
  throw ConfigError("unknown setting '" + std::string(s) + "' (expected heard|unheard)");
}

const char* agent_name(AgentKind k) {
  switch (k) {
    case AgentKind::kRandom: return "random";
    case AgentKind::kDirectionFollower: return "direction_follower";
    default: return "policy";
  }
}

AgentKind parse_agent(std::string_view s) {
  if (s == "policy") return AgentKind::kPolicy;
  if (s == "random") return AgentKind::kRandom;
  if (s == "direction_follower") return AgentKind::kDirectionFollower;
  throw ConfigError("unknown agent '" + std::string(s) + "' (expected policy|random|direction_follower)");
}

MapSet load_maps(const std::vector<std::string>& names) {
  MapSet set;
  for (const auto& n : names) {
    set.parsed.push_back(env::resolve_map(n));
    set.maps.push_back(std::make_shared<const env::GridMap>(set.parsed.back().map));
  }
  return set;
}

env::SignaturePools signature_pools(const RunConfig& config) {
  auto pools = env::make_signature_pools(config.model.bands, config.env.active_bands, config.env.heard_classes,
                                         config.env.unheard_classes, config.env.pool_seed);
  if (!env::pools_disjoint(pools)) throw StateError("heard and unheard sound pools overlap");
  return pools;
}

env::EpisodeSpec sample_episode(const env::ParsedMap& pm, const config::EnvConfig& ec,
                                const std::vector<std::vector<double>>& pool, Rng& rng) {
  const auto& map = pm.map;
  const auto free = map.free_cells();
  env::EpisodeSpec spec;
  if (ec.fixed_source) {
    if (!pm.goal) throw ConfigError("map '" + map.name() + "' has no 'G' cell for a fixed source");
    spec.source.pos = *pm.goal;
  } else {
    spec.source.pos = free[rng.below(free.size())];
  }
  const auto field = env::distance_field(map, spec.source.pos);
  if (ec.fixed_start) {
    if (!pm.start) throw ConfigError("map '" + map.name() + "' has no 'S' cell for a fixed start");
    spec.start.pos = *pm.start;
  } else {
    std::vector<env::Cell> candidates;
    for (const auto& c : free)
      if (field[map.index(c)] > 0) candidates.push_back(c);
    if (candidates.empty()) throw ConfigError("map '" + map.name() + "' has no start cell that reaches the source");
    spec.start.pos = candidates[rng.below(candidates.size())];
  }
  spec.start.heading = static_cast<env::Heading>(rng.below(4));
  spec.source.signature = pool.at(rng.below(pool.size()));
  spec.seed = rng.next_u64();
  return spec;
}

// Baselines -----------------------------------------------------------------

env::Action random_action(Rng& rng) { return static_cast<env::Action>(rng.below(env::kNumActions)); }

namespace {

std::pair<double, double> channel_totals(const env::Observation& obs) {
  const auto& s = obs.spectrogram;
  double left = 0.0, right = 0.0;
  const auto d = s.data();
  for (std::size_t i = 0; i < d.size(); i += 2) {
    left += d[i];
    right += d[i + 1];
  }
  return {left, right};
}

}  // namespace

std::optional<double> estimate_bearing_sine(const env::Observation& obs) {
  const auto [left, right] = channel_totals(obs);
  if (!(left + right > 0)) return std::nullopt;
  return (left - right) / (left + right);
}

double peak_band_level(const env::Observation& obs) {
  const auto& s = obs.spectrogram;
  const std::size_t bands = s.dim(0), frames = s.dim(1);
  const auto d = s.data();
  double best = 0.0;
  for (std::size_t f = 0; f < bands; ++f) {
    double sum = 0.0;
    for (std::size_t t = 0; t < frames; ++t) sum += d[(f * frames + t) * 2] + d[(f * frames + t) * 2 + 1];
    best = std::max(best, sum / static_cast<double>(frames));
  }
  return best;
}

env::Action direction_follower_action(const env::Observation& obs) {
  const auto sine = estimate_bearing_sine(obs);
  if (!sine) return env::Action::kForward;
  if (peak_band_level(obs) > kFollowerStopLevel) return env::Action::kStop;
  if (*sine > kFollowerTurnSine) return env::Action::kTurnLeft;
  if (*sine < -kFollowerTurnSine) return env::Action::kTurnRight;
  return env::Action::kForward;
}

// Evaluation ----------------------------------------------------------------

EvalResult evaluate(const pipeline::AgentModel* model, const RunConfig& config, const EvalOptions& options) {
  if (options.agent == AgentKind::kPolicy && model == nullptr) throw ContractError("policy evaluation needs a model");
  if (options.episodes <= 0) throw ConfigError("evaluation needs at least one episode");
  const auto pools = signature_pools(config);
  const auto& pool = options.setting == Setting::kHeard ? pools.heard : pools.unheard;
  if (options.setting == Setting::kUnheard) {
    for (const auto& s : pool) {
      if (std::find(pools.heard.begin(), pools.heard.end(), s) != pools.heard.end()) {
        throw StateError("unheard evaluation signature appears in the training pool");
      }
    }
  }
  const MapSet maps = load_maps(config.env.eval_maps.empty() ? config.env.maps : config.env.eval_maps);
  env::SimConfig sim = config.sim();
  if (options.blind) sim.blind = true;

  EvalResult result;
  result.setting = options.setting;
  result.agent = options.agent;
  std::vector<env::EpisodeRecord> records;
  for (int i = 0; i < options.episodes; ++i) {
    Rng rng(derive_seed(options.seed, static_cast<std::uint64_t>(i)));
    const std::size_t m = rng.below(maps.maps.size());
    const auto spec = sample_episode(maps.parsed[m], config.env, pool, rng);
    env::Environment environment(maps.maps[m], sim);
    env::Observation obs = environment.reset(spec);

    env::TrajectoryRecord tr;
    tr.episode = i;
    tr.map_name = maps.maps[m]->name();
    tr.start = spec.start;
    tr.source = spec.source.pos;
    tr.shortest = environment.distance();
    tr.min_actions = env::minimal_action_count(*maps.maps[m], spec.start, spec.source.pos).value_or(0);

    ad::Tensor hidden = model ? ad::Tensor::zeros({1, model->config.hidden_dim}) : ad::Tensor();
    bool success = false;
    while (!environment.done()) {
      env::Action action = env::Action::kForward;
      switch (options.agent) {
        case AgentKind::kPolicy: {
          const auto out = pipeline::forward(*model, obs, hidden);
          hidden = out.hidden;
          const auto lp = out.heads.log_probs.data();
          action = static_cast<env::Action>(policy::argmax(lp));
          break;
        }
        case AgentKind::kRandom: action = random_action(rng); break;
        case AgentKind::kDirectionFollower: action = direction_follower_action(obs); break;
      }
      const auto step = environment.step(action);
      const auto& st = environment.state();
      tr.steps.push_back({st.steps_taken, st.pos.x, st.pos.y, st.heading, action, step.reward, step.info.d_geo});
      success = step.info.success;
      obs = step.observation;
    }
    const auto rec = tr.to_episode_record();
    if (rec.success != success) throw StateError("trajectory log disagrees with the environment on success");
    tr.success = success;
    tr.spl = env::episode_spl(rec);
    tr.sna = env::episode_sna(rec);
    records.push_back(rec);
    result.trajectories.push_back(std::move(tr));
  }
  result.metrics = env::compute_metrics(records);
  return result;
}

env::Metrics metrics_from_trajectories(const std::vector<env::TrajectoryRecord>& records) {
  std::vector<env::EpisodeRecord> eps;
  eps.reserve(records.size());
  for (const auto& r : records) eps.push_back(r.to_episode_record());
  return env::compute_metrics(eps);
}

std::string metrics_table_header() {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-24s %8s %7s %7s %7s", "run", "episodes", "SR", "SPL", "SNA");
  return buf;
}

std::string metrics_table_row(const std::string& label, const env::Metrics& m) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-24s %8zu %7.1f %7.1f %7.1f", label.c_str(), m.episodes, 100.0 * m.sr,
                100.0 * m.spl, 100.0 * m.sna);
  return buf;
}

std::string summary_record(const std::string& label, const EvalResult& result) {
  json j = {{"event", "summary"},
            {"label", label},
            {"setting", setting_name(result.setting)},
            {"agent", agent_name(result.agent)},
            {"episodes", result.metrics.episodes},
            {"sr", result.metrics.sr},
            {"spl", result.metrics.spl},
            {"sna", result.metrics.sna}};
  return j.dump();
}

// Plot ------------------------------------------------------------------------

std::vector<env::Cell> path_vertices(const env::TrajectoryRecord& record) {
  std::vector<env::Cell> out{record.start.pos};
  for (const auto& s : record.steps) {
    const env::Cell c{s.x, s.y};
    if (!(c == out.back())) out.push_back(c);
  }
  return out;
}

std::string render_trajectory_svg(const env::GridMap& map, const env::TrajectoryRecord& record) {
  auto check = [&](env::Cell c, const char* what) {
    if (!map.in_bounds(c)) {
      throw DataError(std::string(what) + " (" + std::to_string(c.x) + "," + std::to_string(c.y) +
                      ") lies outside the " + std::to_string(map.width()) + "x" + std::to_string(map.height()) +
                      " map");
    }
  };
  check(record.start.pos, "start");
  check(record.source, "source");
  for (const auto& s : record.steps) check({s.x, s.y}, "step");

  constexpr int kCell = 32;
  constexpr int kLabel = 28;
  const int w = map.width() * kCell;
  const int h = map.height() * kCell + kLabel;
  auto centre = [](int v) { return v * kCell + kCell / 2; };
  const double spl = env::episode_spl(record.to_episode_record());
  const bool success = record.to_episode_record().success;

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
     << ' ' << h << "\">\n";
  os << "<rect x=\"0\" y=\"0\" width=\"" << w << "\" height=\"" << h << "\" fill=\"#ffffff\"/>\n";
  os << "<g class=\"walls\" fill=\"#3b3b3b\">\n";
  for (int y = 0; y < map.height(); ++y)
    for (int x = 0; x < map.width(); ++x)
      if (map.is_wall({x, y}))
        os << "<rect x=\"" << x * kCell << "\" y=\"" << y * kCell << "\" width=\"" << kCell << "\" height=\"" << kCell
           << "\"/>\n";
  os << "</g>\n";

  const auto verts = path_vertices(record);
  os << "<polyline class=\"" << (success ? "path" : "path failure") << "\" fill=\"none\" stroke=\""
     << (success ? "#1f5fbf" : "#c0392b") << "\" stroke-width=\"3\"";
  if (!success) os << " stroke-dasharray=\"6 4\"";
  os << " points=\"";
  for (std::size_t i = 0; i < verts.size(); ++i) {
    os << (i ? " " : "") << centre(verts[i].x) << ',' << centre(verts[i].y);
  }
  os << "\"/>\n";
  os << "<circle class=\"start\" cx=\"" << centre(record.start.pos.x) << "\" cy=\"" << centre(record.start.pos.y)
     << "\" r=\"" << kCell / 4 << "\" fill=\"#2e9e44\"/>\n";
  os << "<rect class=\"source\" x=\"" << centre(record.source.x) - kCell / 4 << "\" y=\""
     << centre(record.source.y) - kCell / 4 << "\" width=\"" << kCell / 2 << "\" height=\"" << kCell / 2
     << "\" fill=\"#e67e22\"/>\n";
  char label[64];
  std::snprintf(label, sizeof label, "SPL %.2f", spl);
  os << "<text class=\"spl\" x=\"6\" y=\"" << map.height() * kCell + 20
     << "\" font-family=\"sans-serif\" font-size=\"16\" fill=\"#000000\">" << label << "</text>\n";
  os << "</svg>\n";
  return os.str();
}

}  // namespace agsa::harness
