#include "agsa/agsa.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "agsa/error.hpp"
#include "agsa/harness.hpp"

using namespace agsa;

struct agsa_env {
  config::RunConfig config;
  harness::MapSet maps;
  env::SignaturePools pools;
  Rng rng;
  std::unique_ptr<env::Environment> environment;
};

struct agsa_model {
  config::RunConfig config;
  pipeline::AgentModel model;
  ad::Tensor hidden;
};

namespace {

thread_local std::string g_last_error;

agsa_status status_of(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kShape: return AGSA_ERR_SHAPE;
    case ErrorKind::kConfig: return AGSA_ERR_CONFIG;
    case ErrorKind::kState: return AGSA_ERR_STATE;
    case ErrorKind::kContract: return AGSA_ERR_CONTRACT;
    case ErrorKind::kUnsupported: return AGSA_ERR_UNSUPPORTED;
    case ErrorKind::kParse: return AGSA_ERR_PARSE;
    case ErrorKind::kData: return AGSA_ERR_DATA;
    case ErrorKind::kNumeric: return AGSA_ERR_NUMERIC;
    case ErrorKind::kIo: return AGSA_ERR_IO;
  }
  return AGSA_ERR_INTERNAL;
}

template <typename F>
agsa_status guarded(F&& f) {
  g_last_error.clear();
  try {
    f();
    return AGSA_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return AGSA_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown failure";
    return AGSA_ERR_INTERNAL;
  }
}

agsa_status invalid(const char* what) {
  g_last_error = what;
  return AGSA_ERR_INVALID_ARGUMENT;
}

config::RunConfig config_or_default(const char* path) {
  return path && *path ? config::load_config(path) : config::RunConfig{};
}

harness::LogFn wrap(agsa_log_fn log, void* user) {
  if (!log) return {};
  return [log, user](const std::string& line) { log(line.c_str(), user); };
}

std::vector<std::string> to_strings(const char* const* items, std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    if (!items[i]) throw ConfigError("null override string");
    out.emplace_back(items[i]);
  }
  return out;
}

}  // namespace

extern "C" {

const char* agsa_version(void) { return "0.1.0"; }

const char* agsa_status_name(agsa_status status) {
  switch (status) {
    case AGSA_OK: return "ok";
    case AGSA_ERR_SHAPE: return "shape error";
    case AGSA_ERR_CONFIG: return "config error";
    case AGSA_ERR_STATE: return "state error";
    case AGSA_ERR_CONTRACT: return "contract error";
    case AGSA_ERR_UNSUPPORTED: return "unsupported operation";
    case AGSA_ERR_PARSE: return "parse error";
    case AGSA_ERR_DATA: return "data error";
    case AGSA_ERR_NUMERIC: return "numeric error";
    case AGSA_ERR_IO: return "i/o error";
    case AGSA_ERR_INVALID_ARGUMENT: return "invalid argument";
    case AGSA_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* agsa_last_error(void) { return g_last_error.c_str(); }

// Environment ---------------------------------------------------------------

agsa_status agsa_env_create(const char* config_path, uint64_t seed, agsa_env** out) {
  if (!out) return invalid("agsa_env_create: out is null");
  *out = nullptr;
  return guarded([&] {
    auto e = std::make_unique<agsa_env>();
    e->config = config_or_default(config_path);
    e->maps = harness::load_maps(e->config.env.maps);
    e->pools = harness::signature_pools(e->config);
    e->rng = Rng(seed);
    *out = e.release();
  });
}

void agsa_env_destroy(agsa_env* env) { delete env; }

agsa_status agsa_env_reset(agsa_env* env) {
  if (!env) return invalid("agsa_env_reset: env is null");
  return guarded([&] {
    const std::size_t m = env->rng.below(env->maps.maps.size());
    const auto spec = harness::sample_episode(env->maps.parsed[m], env->config.env, env->pools.heard, env->rng);
    env->environment = std::make_unique<env::Environment>(env->maps.maps[m], env->config.sim());
    env->environment->reset(spec);
  });
}

agsa_status agsa_env_step(agsa_env* env, int action, double* reward, int* done, int* success) {
  if (!env) return invalid("agsa_env_step: env is null");
  if (action < 0 || action >= env::kNumActions) return invalid("agsa_env_step: action must be in 0..3");
  return guarded([&] {
    if (!env->environment) throw StateError("step before reset");
    const auto r = env->environment->step(static_cast<env::Action>(action));
    if (reward) *reward = r.reward;
    if (done) *done = r.done ? 1 : 0;
    if (success) *success = r.info.success ? 1 : 0;
  });
}

agsa_status agsa_env_pose(const agsa_env* env, int* x, int* y, int* heading, int* d_geo) {
  if (!env) return invalid("agsa_env_pose: env is null");
  return guarded([&] {
    if (!env->environment) throw StateError("pose before reset");
    const auto& s = env->environment->state();
    if (x) *x = s.pos.x;
    if (y) *y = s.pos.y;
    if (heading) *heading = static_cast<int>(s.heading);
    if (d_geo) *d_geo = env->environment->distance();
  });
}

agsa_status agsa_env_observation_sizes(const agsa_env* env, size_t* depth_len, size_t* spectrogram_len) {
  if (!env) return invalid("agsa_env_observation_sizes: env is null");
  const auto sim = env->config.sim();
  if (depth_len) *depth_len = sim.depth_height * sim.depth_width;
  if (spectrogram_len) *spectrogram_len = sim.bands * sim.frames * 2;
  return AGSA_OK;
}

agsa_status agsa_env_observation(const agsa_env* env, double* depth, size_t depth_len, double* spectrogram,
                                 size_t spectrogram_len) {
  if (!env) return invalid("agsa_env_observation: env is null");
  return guarded([&] {
    if (!env->environment) throw StateError("observation before reset");
    const auto obs = env->environment->observe();
    if (depth) {
      if (depth_len != obs.depth.size()) throw ShapeError("depth buffer has the wrong length");
      std::copy(obs.depth.data().begin(), obs.depth.data().end(), depth);
    }
    if (spectrogram) {
      if (spectrogram_len != obs.spectrogram.size()) throw ShapeError("spectrogram buffer has the wrong length");
      std::copy(obs.spectrogram.data().begin(), obs.spectrogram.data().end(), spectrogram);
    }
  });
}

// Model ------------------------------------------------------------------------

agsa_status agsa_model_create(const char* config_path, uint64_t seed, agsa_model** out) {
  if (!out) return invalid("agsa_model_create: out is null");
  *out = nullptr;
  return guarded([&] {
    auto m = std::make_unique<agsa_model>();
    m->config = config_or_default(config_path);
    Rng rng(seed);
    m->model = pipeline::build_model(m->config.model, rng);
    m->hidden = ad::Tensor::zeros({1, m->config.model.hidden_dim});
    *out = m.release();
  });
}

agsa_status agsa_model_load(const char* checkpoint_path, agsa_model** out) {
  if (!out) return invalid("agsa_model_load: out is null");
  if (!checkpoint_path) return invalid("agsa_model_load: path is null");
  *out = nullptr;
  return guarded([&] {
    auto loaded = harness::load_model(checkpoint_path);
    auto m = std::make_unique<agsa_model>();
    m->config = std::move(loaded.config);
    m->model = std::move(loaded.model);
    m->hidden = ad::Tensor::zeros({1, m->config.model.hidden_dim});
    *out = m.release();
  });
}

void agsa_model_destroy(agsa_model* model) { delete model; }

agsa_status agsa_model_parameter_count(const agsa_model* model, size_t* count) {
  if (!model || !count) return invalid("agsa_model_parameter_count: null argument");
  return guarded([&] { *count = pipeline::count_parameters(model->model); });
}

agsa_status agsa_model_reset_state(agsa_model* model) {
  if (!model) return invalid("agsa_model_reset_state: model is null");
  model->hidden = ad::Tensor::zeros({1, model->config.model.hidden_dim});
  return AGSA_OK;
}

agsa_status agsa_model_act(agsa_model* model, const agsa_env* env, int* action, double* probs4, double* value) {
  if (!model || !env || !action) return invalid("agsa_model_act: null argument");
  return guarded([&] {
    if (!env->environment) throw StateError("act before the environment was reset");
    const auto out = pipeline::forward(model->model, env->environment->observe(), model->hidden);
    model->hidden = out.hidden;
    const auto lp = out.heads.log_probs.data();
    *action = policy::argmax(lp);
    if (probs4)
      for (int a = 0; a < env::kNumActions; ++a) probs4[a] = std::exp(lp[a]);
    if (value) *value = out.heads.values[0];
  });
}

// Commands -------------------------------------------------------------------------

agsa_status agsa_train(const char* config_path, const char* const* overrides, size_t n_overrides,
                       const char* resume_checkpoint, agsa_log_fn log, void* user) {
  if (!config_path && !(resume_checkpoint && *resume_checkpoint)) {
    return invalid("agsa_train: a config path or a checkpoint to resume is required");
  }
  if (n_overrides > 0 && !overrides) return invalid("agsa_train: overrides is null");
  return guarded([&] {
    const auto fn = wrap(log, user);
    const bool resume = resume_checkpoint && *resume_checkpoint;
    config::RunConfig cfg;
    if (config_path) cfg = config::load_config(config_path, to_strings(overrides, n_overrides));
    const auto result = harness::train(cfg, fn, resume ? resume_checkpoint : "");
    if (fn) {
      fn("checkpoint " + result.checkpoint_path);
      fn("log " + result.log_path);
    }
  });
}

agsa_status agsa_eval(const agsa_eval_request* req, agsa_metrics* metrics, agsa_log_fn log, void* user) {
  if (!req) return invalid("agsa_eval: request is null");
  return guarded([&] {
    const auto fn = wrap(log, user);
    const auto agent = harness::parse_agent(req->agent ? req->agent : "policy");
    const auto setting = harness::parse_setting(req->setting ? req->setting : "heard");
    std::optional<harness::LoadedModel> loaded;
    config::RunConfig cfg;
    if (req->checkpoint_path && *req->checkpoint_path) {
      loaded = harness::load_model(req->checkpoint_path);
      cfg = loaded->config;
    } else if (agent == harness::AgentKind::kPolicy) {
      throw ConfigError("policy evaluation needs --checkpoint");
    }
    if (req->config_path && *req->config_path) {
      const auto requested = config::load_config(req->config_path);
      if (loaded) harness::check_compatible(loaded->config.model, requested.model);
      cfg = requested;
    }
    harness::EvalOptions opts;
    opts.setting = setting;
    opts.agent = agent;
    opts.blind = req->blind != 0;
    opts.episodes = req->episodes > 0 ? req->episodes : cfg.eval.episodes;
    opts.seed = cfg.eval.seed;
    const auto result = harness::evaluate(loaded ? &loaded->model : nullptr, cfg, opts);

    std::string label = std::string(harness::setting_name(setting)) + "/" + harness::agent_name(agent);
    if (opts.blind) label += "/blind";
    if (fn) {
      fn(harness::metrics_table_header());
      fn(harness::metrics_table_row(label, result.metrics));
    }
    if (req->trajectory_path && *req->trajectory_path) {
      std::ofstream out(req->trajectory_path, std::ios::trunc);
      if (!out) throw IoError(std::string("cannot write trajectory log '") + req->trajectory_path + "'");
      for (const auto& t : result.trajectories) env::write_trajectory(out, t);
    }
    if (req->records_path && *req->records_path) {
      std::ofstream out(req->records_path, std::ios::app);
      if (!out) throw IoError(std::string("cannot write records '") + req->records_path + "'");
      out << harness::summary_record(label, result) << '\n';
    }
    if (metrics) *metrics = {result.metrics.sr, result.metrics.spl, result.metrics.sna, result.metrics.episodes};
  });
}

agsa_status agsa_ablate(const char* config_path, const char* const* overrides, size_t n_overrides,
                        const char* records_path, agsa_log_fn log, void* user) {
  if (!config_path) return invalid("agsa_ablate: config path is null");
  if (n_overrides > 0 && !overrides) return invalid("agsa_ablate: overrides is null");
  return guarded([&] {
    const auto fn = wrap(log, user);
    const auto cfg = config::load_config(config_path, to_strings(overrides, n_overrides));
    std::ofstream records;
    if (records_path && *records_path) {
      records.open(records_path, std::ios::trunc);
      if (!records) throw IoError(std::string("cannot write records '") + records_path + "'");
    }
    const auto rows = harness::run_ablation(cfg, fn, records.is_open() ? &records : nullptr);
    if (fn) {
      std::istringstream table(harness::ablation_table(rows));
      for (std::string line; std::getline(table, line);) fn(line);
    }
  });
}

agsa_status agsa_plot(const char* log_path, const char* map_path, int episode, const char* out_path) {
  if (!log_path || !map_path || !out_path) return invalid("agsa_plot: null path");
  return guarded([&] {
    const auto records = env::read_trajectories_file(log_path);
    if (records.empty()) throw DataError(std::string("no episodes in '") + log_path + "'");
    const env::TrajectoryRecord* chosen = &records.front();
    if (episode >= 0) {
      chosen = nullptr;
      for (const auto& r : records)
        if (r.episode == episode) chosen = &r;
      if (!chosen) throw DataError("episode " + std::to_string(episode) + " not found in the log");
    }
    const auto parsed = env::resolve_map(map_path);
    const std::string svg = harness::render_trajectory_svg(parsed.map, *chosen);
    std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(std::string("cannot write '") + out_path + "'");
    out << svg;
  });
}

agsa_status agsa_grad_check(int seeds, int* failures, agsa_log_fn log, void* user) {
  if (seeds <= 0) return invalid("agsa_grad_check: seeds must be positive");
  return guarded([&] {
    const auto cases = harness::run_gradcheck_suite(seeds, wrap(log, user));
    int failed = 0;
    for (const auto& c : cases) failed += c.report.passed ? 0 : 1;
    if (failures) *failures = failed;
  });
}

}  // extern "C"
