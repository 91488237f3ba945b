#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "agsa/error.hpp"
#include "agsa/harness.hpp"

namespace agsa::harness {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'A', 'G', 'S', 'A', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}
  void u64(std::uint64_t v) { os_.write(reinterpret_cast<const char*>(&v), sizeof v); }
  void i64(long v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v) {
    std::uint64_t b;
    std::memcpy(&b, &v, sizeof b);
    u64(b);
  }
  void str(const std::string& s) {
    u64(s.size());
    os_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void doubles(std::span<const double> v) {
    u64(v.size());
    for (double d : v) f64(d);
  }

 private:
  std::ostream& os_;
};

class Reader {
 public:
  explicit Reader(std::istream& is) : is_(is) {}
  std::uint64_t u64() {
    std::uint64_t v = 0;
    is_.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is_) throw DataError("checkpoint is truncated");
    return v;
  }
  long i64() { return static_cast<long>(u64()); }
  double f64() {
    const std::uint64_t b = u64();
    double v;
    std::memcpy(&v, &b, sizeof v);
    return v;
  }
  std::string str() {
    const std::uint64_t n = u64();
    if (n > (1ull << 32)) throw DataError("checkpoint string length is implausible");
    std::string s(n, '\0');
    is_.read(s.data(), static_cast<std::streamsize>(n));
    if (!is_) throw DataError("checkpoint is truncated");
    return s;
  }
  std::vector<double> doubles() {
    const std::uint64_t n = u64();
    if (n > (1ull << 32)) throw DataError("checkpoint array length is implausible");
    std::vector<double> v(n);
    for (double& d : v) d = f64();
    return v;
  }

 private:
  std::istream& is_;
};

void read_header(std::istream& is) {
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof magic) != 0) throw DataError("not a checkpoint file");
  std::uint32_t version = 0;
  is.read(reinterpret_cast<char*>(&version), sizeof version);
  if (!is || version != kVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
}

void write_params(Writer& w, const nn::ParamList& params) {
  w.u64(params.size());
  for (const auto& p : params) {
    w.str(p.name);
    w.u64(p.tensor.rank());
    for (std::size_t d : p.tensor.shape()) w.u64(d);
    w.doubles(p.tensor.data());
  }
}

void read_params(Reader& r, const nn::ParamList& params) {
  if (r.u64() != params.size()) throw DataError("checkpoint parameter count does not match the model");
  for (const auto& p : params) {
    const std::string name = r.str();
    if (name != p.name) throw DataError("checkpoint parameter '" + name + "' where '" + p.name + "' was expected");
    const std::uint64_t rank = r.u64();
    ad::Shape shape(rank);
    for (auto& d : shape) d = r.u64();
    if (shape != p.tensor.shape()) throw DataError("checkpoint shape mismatch for " + name);
    const auto data = r.doubles();
    auto& dst = const_cast<ad::Tensor&>(p.tensor).impl().data;
    if (data.size() != dst.size()) throw DataError("checkpoint size mismatch for " + name);
    dst = data;
  }
}

std::string open_and_read_config(std::istream& is, Reader& r) {
  read_header(is);
  return r.str();
}

}  // namespace

// ---------------------------------------------------------------------------

struct Trainer::Worker {
  Rng rng;
  std::size_t map_index = 0;
  std::unique_ptr<env::Environment> environment;
  env::Observation observation;
  std::vector<double> hidden;
  double episode_return = 0.0;
  policy::RolloutBuffer buffer;
};

std::string UpdateLog::to_json() const {
  json j = {{"event", "update"},
            {"update", update},
            {"env_steps", env_steps},
            {"episodes", episodes},
            {"finished", finished},
            {"mean_return", mean_return},
            {"success_rate", success_rate},
            {"mean_length", mean_length},
            {"policy_loss", report.policy_loss},
            {"value_loss", report.value_loss},
            {"entropy", report.entropy},
            {"total_loss", report.total_loss},
            {"clip_fraction", report.clip_fraction},
            {"approx_kl", report.approx_kl},
            {"grad_norm", report.grad_norm}};
  return j.dump();
}

Trainer::Trainer(RunConfig config) : Trainer(std::move(config), true) {}

Trainer::Trainer(RunConfig config, bool fresh) : config_(std::move(config)), rng_(config_.train.seed) {
  config_.validate();
  Rng init_rng(derive_seed(config_.train.seed, 0));
  model_ = pipeline::build_model(config_.model, init_rng);
  const auto& p = config_.ppo;
  optimizer_ = std::make_unique<policy::Adam>(model_.parameters(), p.lr, p.adam_beta1, p.adam_beta2, p.adam_eps);
  maps_ = load_maps(config_.env.maps);
  pools_ = signature_pools(config_);
  for (int i = 0; i < p.num_envs; ++i) {
    auto w = std::make_unique<Worker>();
    w->rng = Rng(derive_seed(config_.train.seed, 1000 + static_cast<std::uint64_t>(i)));
    w->buffer = policy::RolloutBuffer(static_cast<std::size_t>(p.rollout_steps));
    workers_.push_back(std::move(w));
  }
  if (fresh) {
    for (auto& w : workers_) start_episode(*w);
  }
}

Trainer::~Trainer() = default;

void Trainer::start_episode(Worker& w) {
  w.map_index = w.rng.below(maps_.maps.size());
  const auto spec = sample_episode(maps_.parsed[w.map_index], config_.env, pools_.heard, w.rng);
  w.environment = std::make_unique<env::Environment>(maps_.maps[w.map_index], config_.sim());
  w.observation = w.environment->reset(spec);
  w.hidden.assign(config_.model.hidden_dim, 0.0);
  w.episode_return = 0.0;
}

UpdateLog Trainer::update() {
  const auto& p = config_.ppo;
  const std::size_t n = workers_.size();
  const std::size_t hd = config_.model.hidden_dim;
  UpdateLog log;
  double returns = 0.0, successes = 0.0, lengths = 0.0;

  auto batch_inputs = [&](std::vector<const env::Observation*>& obs, ad::Tensor& h) {
    obs.clear();
    std::vector<double> hv;
    hv.reserve(n * hd);
    for (const auto& w : workers_) {
      obs.push_back(&w->observation);
      hv.insert(hv.end(), w->hidden.begin(), w->hidden.end());
    }
    h = ad::Tensor({n, hd}, std::move(hv));
  };

  std::vector<const env::Observation*> obs;
  ad::Tensor h;
  for (int t = 0; t < p.rollout_steps; ++t) {
    batch_inputs(obs, h);
    const auto out = pipeline::forward(model_, obs, h);
    const auto acts = policy::select_actions(out.heads, out.hidden, policy::ActMode::kSample, rng_);
    for (std::size_t i = 0; i < n; ++i) {
      Worker& w = *workers_[i];
      policy::Transition tr;
      tr.observation = w.observation;
      tr.action = static_cast<int>(acts[i].action);
      tr.log_prob = acts[i].log_prob;
      tr.value = acts[i].value;
      tr.hidden = w.hidden;
      const auto step = w.environment->step(acts[i].action);
      tr.reward = step.reward;
      tr.done = step.done;
      w.episode_return += step.reward;
      w.buffer.push(std::move(tr));
      if (step.done) {
        returns += w.episode_return;
        successes += step.info.success ? 1.0 : 0.0;
        lengths += w.environment->state().steps_taken;
        ++log.finished;
        start_episode(w);
      } else {
        w.observation = step.observation;
        const auto hd_data = acts[i].hidden.data();
        w.hidden.assign(hd_data.begin(), hd_data.end());
      }
    }
  }

  batch_inputs(obs, h);
  const auto boot = pipeline::forward(model_, obs, h);
  std::vector<policy::RolloutBuffer> buffers;
  buffers.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    policy::compute_gae(workers_[i]->buffer, p, boot.heads.values[i]);
    buffers.push_back(std::move(workers_[i]->buffer));
    workers_[i]->buffer = policy::RolloutBuffer(static_cast<std::size_t>(p.rollout_steps));
  }

  log.report = policy::optimize(*optimizer_, buffers, p, rng_, [&](std::span<const policy::SequenceChunk> chunks) {
    return pipeline::evaluate_chunks(model_, buffers, chunks);
  });

  env_steps_ += static_cast<long>(n) * p.rollout_steps;
  episodes_ += log.finished;
  ++updates_;
  log.update = updates_;
  log.env_steps = env_steps_;
  log.episodes = episodes_;
  if (log.finished > 0) {
    log.mean_return = returns / log.finished;
    log.success_rate = successes / log.finished;
    log.mean_length = lengths / log.finished;
  }
  return log;
}

// Checkpoints -------------------------------------------------------------------

void Trainer::save(std::ostream& os) const {
  os.write(kMagic, sizeof kMagic);
  os.write(reinterpret_cast<const char*>(&kVersion), sizeof kVersion);
  Writer w(os);
  w.str(config::to_json(config_));
  w.i64(env_steps_);
  w.i64(updates_);
  w.i64(episodes_);
  w.str(rng_.state());
  write_params(w, model_.parameters());
  w.i64(optimizer_->steps());
  for (const auto& m : optimizer_->first_moments()) w.doubles(m);
  for (const auto& v : optimizer_->second_moments()) w.doubles(v);
  w.u64(workers_.size());
  for (const auto& wk : workers_) {
    w.str(wk->rng.state());
    w.u64(wk->map_index);
    std::ostringstream env_state;
    wk->environment->save_state(env_state);
    w.str(env_state.str());
    w.doubles(wk->hidden);
    w.f64(wk->episode_return);
  }
  if (!os) throw IoError("failed to write checkpoint");
}

void Trainer::save(const std::string& path) const {
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint '" + tmp + "'");
    save(out);
  }
  fs::rename(tmp, target);
}

void Trainer::load(std::istream& is) {
  Reader r(is);
  env_steps_ = r.i64();
  updates_ = r.i64();
  episodes_ = r.i64();
  rng_.set_state(r.str());
  read_params(r, model_.parameters());
  const long t = r.i64();
  std::vector<std::vector<double>> m, v;
  for (std::size_t i = 0; i < optimizer_->params().size(); ++i) m.push_back(r.doubles());
  for (std::size_t i = 0; i < optimizer_->params().size(); ++i) v.push_back(r.doubles());
  optimizer_->set_state(t, std::move(m), std::move(v));
  if (r.u64() != workers_.size()) throw DataError("checkpoint worker count does not match ppo.num_envs");
  for (auto& wk : workers_) {
    wk->rng.set_state(r.str());
    wk->map_index = r.u64();
    if (wk->map_index >= maps_.maps.size()) throw DataError("checkpoint map index out of range");
    wk->environment = std::make_unique<env::Environment>(maps_.maps[wk->map_index], config_.sim());
    std::istringstream env_state(r.str());
    wk->environment->load_state(env_state);
    wk->observation = wk->environment->observe();
    wk->hidden = r.doubles();
    if (wk->hidden.size() != config_.model.hidden_dim) throw DataError("checkpoint hidden state size mismatch");
    wk->episode_return = r.f64();
  }
}

std::unique_ptr<Trainer> Trainer::resume(const std::string& checkpoint_path) {
  std::ifstream in(checkpoint_path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + checkpoint_path + "'");
  Reader r(in);
  const std::string cfg = open_and_read_config(in, r);
  std::unique_ptr<Trainer> t(new Trainer(config::from_json(cfg), false));
  t->load(in);
  return t;
}

LoadedModel load_model(const std::string& checkpoint_path) {
  std::ifstream in(checkpoint_path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + checkpoint_path + "'");
  Reader r(in);
  LoadedModel out;
  out.config = config::from_json(open_and_read_config(in, r));
  Rng init_rng(derive_seed(out.config.train.seed, 0));
  out.model = pipeline::build_model(out.config.model, init_rng);
  out.env_steps = r.i64();
  r.i64();
  r.i64();
  r.str();
  read_params(r, out.model.parameters());
  return out;
}

void check_compatible(const pipeline::ModelConfig& checkpoint, const pipeline::ModelConfig& requested) {
  if (checkpoint.profile != requested.profile) {
    throw ConfigError(std::string("checkpoint uses the ") + pipeline::profile_name(checkpoint.profile) +
                      " profile but the config asks for " + pipeline::profile_name(requested.profile));
  }
  pipeline::ModelConfig a = checkpoint, b = requested;
  a.blind = b.blind = false;  // blindness is an input mode, not an architecture change
  if (!(a == b)) throw ConfigError("checkpoint model architecture does not match the config");
}

// Orchestration ---------------------------------------------------------------

TrainResult train(const RunConfig& config, const LogFn& log, const std::string& resume_from) {
  std::unique_ptr<Trainer> trainer =
      resume_from.empty() ? std::make_unique<Trainer>(config) : Trainer::resume(resume_from);
  const RunConfig& cfg = trainer->config();
  const fs::path out_dir(cfg.train.out_dir);
  fs::create_directories(out_dir);
  TrainResult result;
  result.checkpoint_path = (out_dir / "checkpoint.bin").string();
  result.log_path = (out_dir / "train_log.jsonl").string();
  std::ofstream log_file(result.log_path, resume_from.empty() ? std::ios::trunc : std::ios::app);
  if (!log_file) throw IoError("cannot write training log '" + result.log_path + "'");
  auto emit = [&](const std::string& line) {
    log_file << line << '\n';
    log_file.flush();
  };
  if (resume_from.empty()) {
    emit(json{{"event", "start"},
              {"seed", cfg.train.seed},
              {"parameters", pipeline::count_parameters(trainer->model())},
              {"total_steps", cfg.train.total_steps}}
             .dump());
    // Baseline checkpoint so a failure in the first update leaves something behind.
    trainer->save(result.checkpoint_path);
  } else {
    emit(json{{"event", "resume"}, {"env_steps", trainer->env_steps()}}.dump());
  }

  auto run_eval = [&](int episodes) {
    EvalOptions opts;
    opts.episodes = episodes;
    opts.seed = cfg.eval.seed;
    return evaluate(&trainer->model(), cfg, opts);
  };

  long next_eval = cfg.train.eval_interval > 0
                       ? (trainer->env_steps() / cfg.train.eval_interval + 1) * cfg.train.eval_interval
                       : -1;
  long next_ckpt = cfg.train.checkpoint_interval > 0
                       ? (trainer->env_steps() / cfg.train.checkpoint_interval + 1) * cfg.train.checkpoint_interval
                       : -1;
  while (!trainer->done()) {
    UpdateLog u;
    try {
      u = trainer->update();
    } catch (const NumericError& e) {
      emit(json{{"event", "abort"}, {"env_steps", trainer->env_steps()}, {"error", e.what()}}.dump());
      throw;
    }
    emit(u.to_json());
    if (log) {
      char buf[200];
      std::snprintf(buf, sizeof buf, "update %ld  steps %ld  episodes %d  return %.3f  success %.2f  entropy %.3f",
                    u.update, u.env_steps, u.finished, u.mean_return, u.success_rate, u.report.entropy);
      log(buf);
    }
    if (next_eval > 0 && trainer->env_steps() >= next_eval) {
      const auto ev = run_eval(cfg.train.eval_episodes);
      emit(json{{"event", "eval"},
                {"env_steps", trainer->env_steps()},
                {"episodes", ev.metrics.episodes},
                {"sr", ev.metrics.sr},
                {"spl", ev.metrics.spl},
                {"sna", ev.metrics.sna}}
               .dump());
      if (log) log(metrics_table_row("eval@" + std::to_string(trainer->env_steps()), ev.metrics));
      while (next_eval <= trainer->env_steps()) next_eval += cfg.train.eval_interval;
    }
    if (next_ckpt > 0 && trainer->env_steps() >= next_ckpt) {
      trainer->save(result.checkpoint_path);
      while (next_ckpt <= trainer->env_steps()) next_ckpt += cfg.train.checkpoint_interval;
    }
  }
  trainer->save(result.checkpoint_path);
  result.env_steps = trainer->env_steps();
  emit(json{{"event", "finish"}, {"env_steps", trainer->env_steps()}, {"updates", trainer->updates()}}.dump());
  return result;
}

// Ablation ------------------------------------------------------------------------

std::vector<AblationVariant> ablation_variants(const RunConfig& base) {
  std::vector<AblationVariant> out;
  const std::array<std::tuple<const char*, bool, bool>, 4> table = {
      std::tuple{"full", true, true}, std::tuple{"no_sam", false, true}, std::tuple{"no_agdf", true, false},
      std::tuple{"no_sam_no_agdf", false, false}};
  for (const auto& [name, sam, agdf] : table) {
    AblationVariant v{name, base};
    v.config.model.use_sam = sam;
    v.config.model.use_agdf = agdf;
    v.config.train.out_dir = (fs::path(base.train.out_dir) / name).string();
    out.push_back(std::move(v));
  }
  return out;
}

bool differ_only_in_fusion_flags(const RunConfig& a, const RunConfig& b) {
  RunConfig x = a, y = b;
  y.model.use_sam = x.model.use_sam;
  y.model.use_agdf = x.model.use_agdf;
  y.train.out_dir = x.train.out_dir;
  return x == y;
}

std::vector<AblationRow> run_ablation(const RunConfig& base, const LogFn& log, std::ostream* records) {
  const auto variants = ablation_variants(base);
  for (const auto& v : variants) {
    if (!differ_only_in_fusion_flags(variants[0].config, v.config)) {
      throw StateError("ablation variant '" + v.name + "' changes more than the fusion flags");
    }
  }
  std::vector<AblationRow> rows;
  for (const auto& v : variants) {
    if (log) log("ablation variant " + v.name);
    const auto tr = train(v.config, log);
    const auto loaded = load_model(tr.checkpoint_path);
    EvalOptions opts;
    opts.episodes = v.config.eval.episodes;
    opts.seed = v.config.eval.seed;
    const auto ev = evaluate(&loaded.model, v.config, opts);
    if (records) *records << summary_record(v.name, ev) << '\n';
    rows.push_back({v.name, ev.metrics});
  }
  return rows;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::string out = metrics_table_header() + "\n";
  for (const auto& r : rows) out += metrics_table_row(r.name, r.metrics) + "\n";
  return out;
}

}  // namespace agsa::harness
