// Acceptance run: one PASS/FAIL line per criterion, with a short detail.
// Usage: acceptance [--only N[,N...]] [--work DIR]

#include <algorithm>
#include <chrono>
#include <cstring>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <queue>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "agsa/agdf.hpp"
#include "agsa/config.hpp"
#include "agsa/envsim.hpp"
#include "agsa/error.hpp"
#include "agsa/harness.hpp"
#include "agsa/policy.hpp"
#include "agsa/sam.hpp"

using namespace agsa;
using ad::Tensor;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets.
constexpr double kGradRtol = 1e-4;
constexpr double kGradAtol = 1e-6;
constexpr int kGradSeeds = 5;
constexpr double kGradBudgetSeconds = 60.0;
constexpr double kSwapTol = 1e-12;
constexpr double kGaeTol = 1e-12;
constexpr double kNavSuccess = 0.90;
constexpr int kNavSeedsRequired = 3;
constexpr double kRandomCeiling = 0.30;
constexpr double kNavBudgetSeconds = 15 * 60.0;
constexpr long kNavStepCeiling = 200000;
constexpr long kAblationSteps = 8192;
constexpr long kMulticlassSteps = 40960;

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string g_source_dir = AGSA_SOURCE_DIR;
fs::path g_work;

Tensor random_tensor(const ad::Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::zeros(shape);
  for (double& v : t.mutable_data()) v = rng.uniform(lo, hi);
  return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return std::numeric_limits<double>::infinity();
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// 1. Gradient oracle suite -------------------------------------------------

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  const auto cases = harness::run_gradcheck_suite(kGradSeeds, {});
  const double elapsed = seconds_since(t0);
  std::set<std::string> modules;
  int failed = 0;
  // The suite runs with the default options.
  const ad::GradCheckOptions defaults;
  const bool tolerances_ok = defaults.rtol == kGradRtol && defaults.atol == kGradAtol;
  for (const auto& c : cases) {
    modules.insert(c.module);
    if (!c.report.passed) {
      ++failed;
      std::fprintf(stderr, "  gradcheck %s seed %llu: %s\n", c.module.c_str(),
                   static_cast<unsigned long long>(c.seed), c.report.summary().c_str());
    }
  }
  const std::set<std::string> required{"cnn_encoder", "sam", "agdf", "gru", "actor_critic", "ppo_end_to_end"};
  const bool covered = std::includes(modules.begin(), modules.end(), required.begin(), required.end());
  const bool counts = cases.size() == required.size() * kGradSeeds;
  return {failed == 0 && covered && counts && tolerances_ok && elapsed < kGradBudgetSeconds,
          fmt("%zu checks over %zu modules x %d seeds, %d failed, rtol %.0e atol %.0e, %.1f s (< %.0f s)",
              cases.size(), modules.size(), kGradSeeds, failed, kGradRtol, kGradAtol, elapsed, kGradBudgetSeconds)};
}

// 2. SAM structure -----------------------------------------------------------

Outcome sam_structure() {
  Rng rng(2002);
  double identity_diff = 0.0;
  for (int s = 0; s < 20; ++s) {
    const std::size_t half = 1 + rng.below(6);
    const auto p = sam::init_sam({2 * half, 1, true}, rng);
    const Tensor x = random_tensor({1 + rng.below(3), 2 * half, 1 + rng.below(5), 1 + rng.below(5)}, rng, -3, 3);
    identity_diff = std::max(identity_diff, max_abs_diff(sam::sam_forward(p, x), x));
  }
  int shape_ok = 0;
  for (int s = 0; s < 100; ++s) {
    const std::size_t heads = 1 + rng.below(2);
    const std::size_t half = heads * (1 + rng.below(4));
    auto p = sam::init_sam({2 * half, heads, rng.below(2) == 0}, rng);
    nn::ParamList params;
    p.collect(params, "sam");
    for (const auto& q : params)
      for (double& v : q.tensor.impl().data) v += rng.uniform(-0.5, 0.5);
    const ad::Shape shape{1 + rng.below(3), 2 * half, 1 + rng.below(6), 1 + rng.below(6)};
    shape_ok += sam::sam_forward(p, random_tensor(shape, rng)).shape() == shape;
  }
  double swap_diff = 0.0;
  for (int s = 0; s < 100; ++s) {
    auto p = sam::init_sam({8, s % 2 ? 2u : 1u, true}, rng);
    nn::ParamList params;
    p.collect(params, "sam");
    for (const auto& q : params)
      for (double& v : q.tensor.impl().data) v += rng.uniform(-0.5, 0.5);
    const Tensor x = random_tensor({2, 8, 3, 3}, rng, -2, 2);
    swap_diff = std::max(swap_diff,
                         max_abs_diff(sam::sam_forward(p, sam::swap_halves(x)), sam::swap_halves(sam::sam_forward(p, x))));
  }
  return {identity_diff == 0.0 && shape_ok == 100 && swap_diff <= kSwapTol,
          fmt("identity max diff %.1e (== 0), shapes %d/100, swap max diff %.1e (<= %.0e)", identity_diff, shape_ok,
              swap_diff, kSwapTol)};
}

// 3. AGDF gate ----------------------------------------------------------------

Outcome agdf_gate() {
  Rng rng(3003);
  int gate_bad = 0, bound_bad = 0;
  for (int s = 0; s < 1000; ++s) {
    agdf::AgdfConfig c;
    c.feature_dim = 8;
    c.model_dim = 12;
    c.heads = 4;
    c.per_component_gate = s % 2 == 1;
    auto p = agdf::init_agdf(c, rng);
    nn::ParamList params;
    p.collect(params, "agdf");
    for (const auto& q : params)
      for (double& v : q.tensor.impl().data) v += rng.uniform(-0.3, 0.3);
    const Tensor fa = random_tensor({2, 8}, rng, -3, 3), fv = random_tensor({2, 8}, rng, -3, 3);
    const auto ga = agdf::guided_attention(p, fa, fv);
    const auto g = agdf::gated_fuse(p, ga.attended, ga.audio_emb);
    for (double w : g.gate.data()) gate_bad += !(w > 0.0 && w < 1.0);
    for (std::size_t i = 0; i < g.fused.size(); ++i) {
      const double lo = std::min(ga.attended[i], ga.audio_emb[i]), hi = std::max(ga.attended[i], ga.audio_emb[i]);
      bound_bad += g.fused[i] < lo || g.fused[i] > hi;
    }
  }
  int fixed_bad = 0;
  for (int s = 0; s < 100; ++s) {
    agdf::AgdfConfig c;
    c.per_component_gate = s % 2 == 1;
    const auto p = agdf::init_agdf(c, rng);
    const Tensor a = random_tensor({2, c.model_dim}, rng, -5, 5);
    const Tensor k = agdf::gated_fuse(p, a, a).fused;
    fixed_bad += !std::equal(k.data().begin(), k.data().end(), a.data().begin(), a.data().end());
  }
  return {gate_bad == 0 && bound_bad == 0 && fixed_bad == 0,
          fmt("1000 draws: gate outside (0,1) %d, bound violations %d; fixed point mismatches %d/100", gate_bad,
              bound_bad, fixed_bad)};
}

// 4. Metric oracle --------------------------------------------------------------

std::optional<int> dijkstra(const env::GridMap& map, env::Cell from, env::Cell to) {
  const int w = map.width();
  std::vector<int> dist(static_cast<std::size_t>(w * map.height()), std::numeric_limits<int>::max());
  using Item = std::pair<int, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  dist[from.y * w + from.x] = 0;
  pq.push({0, from.y * w + from.x});
  while (!pq.empty()) {
    const auto [d, u] = pq.top();
    pq.pop();
    if (d > dist[u]) continue;
    const env::Cell c{u % w, u / w};
    if (c == to) return d;
    const int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
    for (int k = 0; k < 4; ++k) {
      const env::Cell nb{c.x + dx[k], c.y + dy[k]};
      if (map.is_wall(nb) || d + 1 >= dist[nb.y * w + nb.x]) continue;
      dist[nb.y * w + nb.x] = d + 1;
      pq.push({d + 1, nb.y * w + nb.x});
    }
  }
  return std::nullopt;
}

// Metrics recomputed from the log rows with the textbook formulas.
env::Metrics oracle_metrics(const std::vector<env::TrajectoryRecord>& records) {
  double sr = 0.0, spl = 0.0, sna = 0.0;
  for (const auto& r : records) {
    const bool success = !r.steps.empty() && r.steps.back().action == env::Action::kStop && r.steps.back().d_geo == 0;
    int moves = 0;
    int x = r.start.pos.x, y = r.start.pos.y;
    for (const auto& s : r.steps) {
      moves += s.x != x || s.y != y;
      x = s.x;
      y = s.y;
    }
    if (!success) continue;
    sr += 1.0;
    spl += r.shortest / static_cast<double>(std::max(moves, r.shortest));
    const int actions = static_cast<int>(r.steps.size());
    sna += r.min_actions / static_cast<double>(std::max(actions, r.min_actions));
  }
  const double n = static_cast<double>(records.size());
  return {sr / n, spl / n, sna / n, records.size()};
}

Outcome metric_oracle() {
  Rng rng(4004);
  int pairs = 0, geo_bad = 0;
  for (int m = 0; m < 100; ++m) {
    const auto map = env::random_map(12, 12, 0.3, rng);
    const auto cells = map.free_cells();
    for (int k = 0; k < 20; ++k) {
      const auto a = cells[rng.below(cells.size())], b = cells[rng.below(cells.size())];
      geo_bad += env::geodesic_distance(map, a, b) != dijkstra(map, a, b);
      ++pairs;
    }
  }

  // 200 episodes from both baselines; the table must be reproducible from the log file alone.
  config::RunConfig cfg;
  cfg.env.fixed_source = false;
  cfg.env.maps = {"room8", "two_room", "maze"};
  int table_bad = 0, telescope_bad = 0, episodes = 0;
  for (auto agent : {harness::AgentKind::kRandom, harness::AgentKind::kDirectionFollower}) {
    harness::EvalOptions o;
    o.agent = agent;
    o.episodes = 100;
    o.seed = 4100 + static_cast<int>(agent);
    const auto result = harness::evaluate(nullptr, cfg, o);
    const fs::path log = g_work / fmt("c4_%s.jsonl", harness::agent_name(agent));
    {
      std::ofstream out(log);
      for (const auto& t : result.trajectories) env::write_trajectory(out, t);
    }
    const auto records = env::read_trajectories_file(log.string());
    episodes += static_cast<int>(records.size());
    const auto ours = harness::metrics_from_trajectories(records);
    const auto oracle = oracle_metrics(records);
    table_bad += ours.sr != result.metrics.sr || ours.spl != result.metrics.spl || ours.sna != result.metrics.sna;
    const double tol = 1e-12;
    table_bad += std::abs(oracle.sr - result.metrics.sr) > tol || std::abs(oracle.spl - result.metrics.spl) > tol ||
                 std::abs(oracle.sna - result.metrics.sna) > tol;
    // Emitted table row against the row formatted from the recomputation.
    table_bad += harness::metrics_table_row("x", ours) != harness::metrics_table_row("x", result.metrics);
    for (const auto& r : records) {
      int prev = r.shortest, shaping = 0;
      for (const auto& s : r.steps) {
        shaping += prev - s.d_geo;
        const bool success = s.action == env::Action::kStop && s.d_geo == 0;
        telescope_bad += s.reward != env::compute_reward(prev, s.d_geo, s.action, success);
        prev = s.d_geo;
      }
      const int last = r.steps.empty() ? r.shortest : r.steps.back().d_geo;
      telescope_bad += shaping != r.shortest - last;
    }
  }
  return {geo_bad == 0 && table_bad == 0 && telescope_bad == 0 && episodes == 200,
          fmt("geodesic vs Dijkstra %d/%d mismatches on 100 maps; %d logged episodes, table mismatches %d; "
              "telescoping/reward mismatches %d",
              geo_bad, pairs, episodes, table_bad, telescope_bad)};
}

// 5. GAE / PPO -------------------------------------------------------------------

// Backward recurrence written out independently of the library.
std::vector<double> reference_gae(const std::vector<double>& r, const std::vector<double>& v, const std::vector<bool>& d,
                                  double boot, double gamma, double lambda) {
  std::vector<double> a(r.size());
  double next_a = 0.0, next_v = boot;
  for (std::size_t i = r.size(); i-- > 0;) {
    const double mask = d[i] ? 0.0 : 1.0;
    const double delta = r[i] + gamma * next_v * mask - v[i];
    a[i] = delta + gamma * lambda * mask * next_a;
    next_a = a[i];
    next_v = v[i];
  }
  return a;
}

std::vector<double> library_gae(const std::vector<double>& r, const std::vector<double>& v, const std::vector<bool>& d,
                                double boot, double gamma, double lambda) {
  std::unique_ptr<bool[]> flags(new bool[d.size()]);
  std::copy(d.begin(), d.end(), flags.get());
  return policy::gae_advantages(r, v, std::span<const bool>(flags.get(), d.size()), boot, gamma, lambda);
}

Outcome gae_ppo() {
  Rng rng(5005);
  double worst = 0.0;
  auto track = [&](const std::vector<double>& a, const std::vector<double>& b) {
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  };
  const auto hand = library_gae({1, 1}, {0, 0}, {false, false}, 0.0, 0.9, 0.9);
  track(hand, {1.81, 1.0});
  track(hand, reference_gae({1, 1}, {0, 0}, {false, false}, 0.0, 0.9, 0.9));
  for (int s = 0; s < 200; ++s) {
    const std::size_t n = 1 + rng.below(40);
    std::vector<double> r(n), v(n);
    std::vector<bool> d(n);
    for (std::size_t i = 0; i < n; ++i) {
      r[i] = rng.uniform(-1, 1);
      v[i] = rng.uniform(-1, 1);
      d[i] = rng.below(6) == 0;
    }
    const double boot = rng.uniform(-1, 1);
    // lambda = 0: the TD error.
    const auto a0 = library_gae(r, v, d, boot, 0.99, 0.0);
    std::vector<double> td(n);
    for (std::size_t i = 0; i < n; ++i) td[i] = r[i] + (d[i] ? 0.0 : 0.99 * (i + 1 < n ? v[i + 1] : boot)) - v[i];
    track(a0, td);
    // gamma = lambda = 1 with no dones: reward tail plus bootstrap minus value.
    const auto a1 = library_gae(r, v, std::vector<bool>(n, false), boot, 1.0, 1.0);
    std::vector<double> tail(n);
    for (std::size_t i = 0; i < n; ++i) tail[i] = std::accumulate(r.begin() + long(i), r.end(), 0.0) + boot - v[i];
    track(a1, tail);
    const double g = rng.uniform(0.5, 1.0), l = rng.uniform(0.0, 1.0);
    track(library_gae(r, v, d, boot, g, l), reference_gae(r, v, d, boot, g, l));
  }

  int clip_bad = 0, surrogate_bad = 0;
  policy::PpoConfig pc;
  for (int s = 0; s < 200; ++s) {
    const std::size_t n = 1 + rng.below(64);
    Tensor logits = random_tensor({n, 4}, rng, -2, 2);
    const Tensor lp = ad::log_softmax(logits);
    policy::PpoBatch b;
    for (std::size_t i = 0; i < n; ++i) {
      b.actions.push_back(static_cast<int>(rng.below(4)));
      b.old_log_probs.push_back(std::log(rng.uniform(0.05, 0.7)));
      b.advantages.push_back(rng.uniform(-2, 2));
      b.returns.push_back(rng.uniform(-1, 1));
    }
    const auto loss = policy::ppo_loss(lp, Tensor::zeros({n}), b, pc);
    const auto adv = n > 1 ? policy::normalize(b.advantages) : b.advantages;
    double clipped_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double rho = std::exp(lp[i * 4 + b.actions[i]] - b.old_log_probs[i]);
      const double term = std::min(rho * adv[i], std::clamp(rho, 1.0 - pc.clip, 1.0 + pc.clip) * adv[i]);
      clip_bad += term > rho * adv[i];
      clipped_sum += term;
    }
    surrogate_bad += std::abs(loss.policy_loss + clipped_sum / double(n)) > 1e-12;
  }
  const double composed = policy::combine_losses(1.0, 2.0, 3.0, pc);
  const bool coefs = pc.value_coef == 0.5 && pc.entropy_coef == 0.01 && std::abs(composed - 1.97) <= 1e-15;
  return {worst <= kGaeTol && clip_bad == 0 && surrogate_bad == 0 && coefs,
          fmt("GAE max deviation %.1e (<= %.0e), A = [%.6g, %.6g]; clip inequality violations %d, surrogate "
              "mismatches %d; L = Lclip + 0.5 LV - 0.01 H gives %.4g",
              worst, kGaeTol, hand[0], hand[1], clip_bad, surrogate_bad, composed)};
}

// 6. Blind navigation ---------------------------------------------------------------

Outcome blind_navigation() {
  const auto t0 = Clock::now();
  auto base = config::load_config(g_source_dir + "/configs/desk_blind_room8.json");
  if (base.train.total_steps > kNavStepCeiling) return {false, "config exceeds the step ceiling"};
  int passing = 0;
  std::string seeds;
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    auto c = base;
    c.train.seed = seed;
    c.train.out_dir = (g_work / fmt("c6_seed%llu", static_cast<unsigned long long>(seed))).string();
    fs::remove_all(c.train.out_dir);
    const auto r = harness::train(c, {});
    const auto loaded = harness::load_model(r.checkpoint_path);
    harness::EvalOptions o;
    o.episodes = 100;
    o.seed = c.eval.seed;
    o.blind = true;
    const auto ev = harness::evaluate(&loaded.model, c, o);
    passing += ev.metrics.sr >= kNavSuccess;
    seeds += fmt("%s%.2f", seeds.empty() ? "" : " ", ev.metrics.sr);
    std::fprintf(stderr, "  seed %llu: SR %.2f SPL %.3f SNA %.3f after %ld steps (%.0f s elapsed)\n",
                 static_cast<unsigned long long>(seed), ev.metrics.sr, ev.metrics.spl, ev.metrics.sna, r.env_steps,
                 seconds_since(t0));
  }
  harness::EvalOptions ro;
  ro.agent = harness::AgentKind::kRandom;
  ro.episodes = 100;
  ro.seed = base.eval.seed;
  ro.blind = true;
  const auto random = harness::evaluate(nullptr, base, ro);
  const double elapsed = seconds_since(t0);
  return {passing >= kNavSeedsRequired && random.metrics.sr <= kRandomCeiling && elapsed <= kNavBudgetSeconds,
          fmt("%ld steps per seed; SR per seed [%s], %d/4 >= %.2f (need %d); Random SR %.2f (<= %.2f); %.1f min "
              "(<= %.0f)",
              base.train.total_steps, seeds.c_str(), passing, kNavSuccess, kNavSeedsRequired, random.metrics.sr,
              kRandomCeiling, elapsed / 60.0, kNavBudgetSeconds / 60.0)};
}

// 7. Ablation harness -----------------------------------------------------------------

Outcome ablation() {
  auto base = config::load_config(g_source_dir + "/configs/ablation.json");
  base.train.total_steps = kAblationSteps;
  base.eval.episodes = 50;
  const auto variants = harness::ablation_variants(base);
  bool flags_ok = variants.size() == 4;
  std::set<std::pair<bool, bool>> combos;
  for (const auto& a : variants) {
    combos.insert({a.config.model.use_sam, a.config.model.use_agdf});
    for (const auto& b : variants) flags_ok = flags_ok && harness::differ_only_in_fusion_flags(a.config, b.config);
  }
  flags_ok = flags_ok && combos.size() == 4;
  std::string tables[2], records[2];
  for (int run = 0; run < 2; ++run) {
    auto c = base;
    c.train.out_dir = (g_work / fmt("c7_run%d", run)).string();
    fs::remove_all(c.train.out_dir);
    std::ostringstream rec;
    const auto rows = harness::run_ablation(c, {}, &rec);
    tables[run] = harness::ablation_table(rows);
    records[run] = rec.str();
  }
  std::fprintf(stderr, "%s", tables[0].c_str());
  const bool complete = std::count(records[0].begin(), records[0].end(), '\n') == 4;
  return {flags_ok && complete && tables[0] == tables[1] && records[0] == records[1],
          fmt("4 variants at %ld steps; configs differ only in the fusion flags: %s; repeated sweep tables "
              "identical: %s",
              kAblationSteps, flags_ok ? "yes" : "no", tables[0] == tables[1] ? "yes" : "no")};
}

// 8. Heard / unheard ---------------------------------------------------------------------

Outcome heard_unheard() {
  auto c = config::load_config(g_source_dir + "/configs/desk_multiclass.json");
  c.train.total_steps = kMulticlassSteps;
  c.train.out_dir = (g_work / "c8").string();
  fs::remove_all(c.train.out_dir);
  const auto pools = harness::signature_pools(c);
  bool disjoint = env::pools_disjoint(pools);
  for (const auto& u : pools.unheard)
    disjoint = disjoint && std::find(pools.heard.begin(), pools.heard.end(), u) == pools.heard.end();
  const auto r = harness::train(c, {});
  const auto loaded = harness::load_model(r.checkpoint_path);
  env::Metrics m[2];
  bool complete = true;
  for (auto setting : {harness::Setting::kHeard, harness::Setting::kUnheard}) {
    harness::EvalOptions o;
    o.setting = setting;
    o.episodes = c.eval.episodes;
    o.seed = c.eval.seed;
    const auto ev = harness::evaluate(&loaded.model, c, o);
    const auto i = static_cast<int>(setting);
    m[i] = ev.metrics;
    complete = complete && ev.metrics.episodes == std::size_t(c.eval.episodes) &&
               ev.trajectories.size() == std::size_t(c.eval.episodes);
    for (double v : {ev.metrics.sr, ev.metrics.spl, ev.metrics.sna}) complete = complete && v >= 0.0 && v <= 1.0;
    std::fprintf(stderr, "  %s\n", harness::metrics_table_row(harness::setting_name(setting), ev.metrics).c_str());
  }
  return {disjoint && complete,
          fmt("pools disjoint: %s (%zu heard, %zu unheard); tables complete: %s; heard SR %.2f vs unheard SR %.2f "
              "(heard >= unheard: %s, logged only)",
              disjoint ? "yes" : "no", pools.heard.size(), pools.unheard.size(), complete ? "yes" : "no", m[0].sr,
              m[1].sr, m[0].sr >= m[1].sr ? "yes" : "no")};
}

// 9. Determinism and persistence ----------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool same_parameters(const pipeline::AgentModel& a, const pipeline::AgentModel& b) {
  const auto pa = a.parameters(), pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const auto da = pa[i].tensor.data(), db = pb[i].tensor.data();
    if (pa[i].name != pb[i].name || da.size() != db.size()) return false;
    if (std::memcmp(da.data(), db.data(), da.size() * sizeof(double)) != 0) return false;
  }
  return true;
}

Outcome determinism() {
  auto c = config::load_config(g_source_dir + "/configs/smoke.json");
  c.eval.episodes = 10;
  // Both runs use the same out_dir, since the checkpoint embeds the config.
  std::string logs[2], ckpts[2];
  c.train.out_dir = (g_work / "c9_train").string();
  for (int run = 0; run < 2; ++run) {
    fs::remove_all(c.train.out_dir);
    const auto r = harness::train(c, {});
    logs[run] = slurp(r.log_path);
    ckpts[run] = slurp(r.checkpoint_path);
  }
  const bool curves = !logs[0].empty() && logs[0] == logs[1];
  const bool ckpt_files = !ckpts[0].empty() && ckpts[0] == ckpts[1];

  // Save, load and save again.
  harness::Trainer straight(c);
  straight.update();
  const auto mid = (g_work / "c9_mid.bin").string(), again = (g_work / "c9_again.bin").string();
  straight.save(mid);
  const auto loaded = harness::load_model(mid);
  harness::Trainer::resume(mid)->save(again);
  const bool round_trip = same_parameters(loaded.model, straight.model()) && slurp(mid) == slurp(again);

  // Resume from the midpoint and compare at equal step counts.
  auto resumed = harness::Trainer::resume(mid);
  bool resume_equal = true;
  for (int k = 0; k < 3; ++k) {
    const auto a = straight.update(), b = resumed->update();
    resume_equal = resume_equal && a.to_json() == b.to_json() && straight.env_steps() == resumed->env_steps();
  }
  resume_equal = resume_equal && same_parameters(straight.model(), resumed->model());
  const auto end_a = (g_work / "c9_end_a.bin").string(), end_b = (g_work / "c9_end_b.bin").string();
  straight.save(end_a);
  resumed->save(end_b);
  resume_equal = resume_equal && slurp(end_a) == slurp(end_b);
  return {curves && ckpt_files && round_trip && resume_equal,
          fmt("identical-seed training logs bit-identical: %s, checkpoints identical: %s; save/load round trip "
              "exact: %s; resumed run equals uninterrupted run after 3 more updates: %s",
              curves ? "yes" : "no", ckpt_files ? "yes" : "no", round_trip ? "yes" : "no",
              resume_equal ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  g_work = fs::temp_directory_path() / "agsa_acceptance";
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      std::string item;
      while (std::getline(ss, item, ',')) only.insert(std::stoi(item));
    } else if (a == "--work" && i + 1 < argc) {
      g_work = argv[++i];
    } else {
      std::fprintf(stderr, "usage: %s [--only N[,N...]] [--work DIR]\n", argv[0]);
      return 2;
    }
  }
  fs::create_directories(g_work);

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient oracle suite", gradient_suite},
      {"SAM structure", sam_structure},
      {"AGDF gate", agdf_gate},
      {"metric oracle", metric_oracle},
      {"GAE/PPO numerics", gae_ppo},
      {"blind navigation", blind_navigation},
      {"ablation harness", ablation},
      {"heard/unheard protocol", heard_unheard},
      {"determinism and persistence", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(n)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %d %s: %s  [%s] (%.1f s)\n", n, criteria[i].first, o.pass ? "PASS" : "FAIL",
                o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
