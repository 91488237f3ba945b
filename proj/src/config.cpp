#include "agsa/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "agsa/error.hpp"

namespace agsa::config {

using nlohmann::json;

namespace {

json model_json(const pipeline::ModelConfig& m) {
  return {{"profile", pipeline::profile_name(m.profile)},
          {"feature_dim", m.feature_dim},
          {"model_dim", m.model_dim},
          {"hidden_dim", m.hidden_dim},
          {"attention_heads", m.attention_heads},
          {"sam_heads", m.sam_heads},
          {"use_sam", m.use_sam},
          {"use_agdf", m.use_agdf},
          {"blind", m.blind},
          {"visual", pipeline::visual_kind_name(m.visual)},
          {"bands", m.bands},
          {"frames", m.frames},
          {"image_height", m.image_height},
          {"image_width", m.image_width},
          {"channels", m.channels}};
}

json ppo_json(const policy::PpoConfig& p) {
  return {{"clip", p.clip},
          {"value_coef", p.value_coef},
          {"entropy_coef", p.entropy_coef},
          {"gamma", p.gamma},
          {"lambda", p.lambda},
          {"epochs", p.epochs},
          {"minibatch", p.minibatch},
          {"seq_len", p.seq_len},
          {"rollout_steps", p.rollout_steps},
          {"num_envs", p.num_envs},
          {"lr", p.lr},
          {"max_grad_norm", p.max_grad_norm},
          {"adam_beta1", p.adam_beta1},
          {"adam_beta2", p.adam_beta2},
          {"adam_eps", p.adam_eps},
          {"normalize_advantages", p.normalize_advantages}};
}

json env_json(const EnvConfig& e) {
  return {{"maps", e.maps},
          {"eval_maps", e.eval_maps},
          {"fixed_source", e.fixed_source},
          {"fixed_start", e.fixed_start},
          {"max_depth", e.max_depth},
          {"noise", e.noise},
          {"step_limit", e.step_limit},
          {"heard_classes", e.heard_classes},
          {"unheard_classes", e.unheard_classes},
          {"active_bands", e.active_bands},
          {"pool_seed", e.pool_seed}};
}

json to_json_object(const RunConfig& c) {
  return {{"model", model_json(c.model)},
          {"ppo", ppo_json(c.ppo)},
          {"env", env_json(c.env)},
          {"train",
           {{"seed", c.train.seed},
            {"total_steps", c.train.total_steps},
            {"eval_interval", c.train.eval_interval},
            {"eval_episodes", c.train.eval_episodes},
            {"checkpoint_interval", c.train.checkpoint_interval},
            {"out_dir", c.train.out_dir}}},
          {"eval", {{"episodes", c.eval.episodes}, {"seed", c.eval.seed}}}};
}

// Overlays `user` onto `base`, rejecting keys the schema does not define.
void merge_strict(json& base, const json& user, const std::string& path) {
  if (!user.is_object()) throw ConfigError("config section '" + path + "' must be an object");
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    json& slot = base[it.key()];
    if (slot.is_object()) {
      merge_strict(slot, it.value(), key);
    } else {
      slot = it.value();
    }
  }
}

template <typename T>
T get(const json& j, const char* section, const char* key) {
  try {
    return j.at(section).at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config key '") + section + "." + key + "' has the wrong type");
  }
}

RunConfig from_json_object(const json& user) {
  json j = to_json_object(RunConfig{});
  merge_strict(j, user, "");
  RunConfig c;
  auto& m = c.model;
  m.profile = pipeline::parse_profile(get<std::string>(j, "model", "profile"));
  // The paper profile starts from its large sizes; explicit keys still win.
  if (m.profile == pipeline::Profile::kPaper) {
    json paper = to_json_object(RunConfig{});
    paper["model"] = model_json(pipeline::ModelConfig::paper());
    merge_strict(paper, user, "");
    j = paper;
  }
  m.feature_dim = get<std::size_t>(j, "model", "feature_dim");
  m.model_dim = get<std::size_t>(j, "model", "model_dim");
  m.hidden_dim = get<std::size_t>(j, "model", "hidden_dim");
  m.attention_heads = get<std::size_t>(j, "model", "attention_heads");
  m.sam_heads = get<std::size_t>(j, "model", "sam_heads");
  m.use_sam = get<bool>(j, "model", "use_sam");
  m.use_agdf = get<bool>(j, "model", "use_agdf");
  m.blind = get<bool>(j, "model", "blind");
  m.visual = pipeline::parse_visual_kind(get<std::string>(j, "model", "visual"));
  m.bands = get<std::size_t>(j, "model", "bands");
  m.frames = get<std::size_t>(j, "model", "frames");
  m.image_height = get<std::size_t>(j, "model", "image_height");
  m.image_width = get<std::size_t>(j, "model", "image_width");
  m.channels = get<std::array<std::size_t, 3>>(j, "model", "channels");

  auto& p = c.ppo;
  p.clip = get<double>(j, "ppo", "clip");
  p.value_coef = get<double>(j, "ppo", "value_coef");
  p.entropy_coef = get<double>(j, "ppo", "entropy_coef");
  p.gamma = get<double>(j, "ppo", "gamma");
  p.lambda = get<double>(j, "ppo", "lambda");
  p.epochs = get<int>(j, "ppo", "epochs");
  p.minibatch = get<int>(j, "ppo", "minibatch");
  p.seq_len = get<int>(j, "ppo", "seq_len");
  p.rollout_steps = get<int>(j, "ppo", "rollout_steps");
  p.num_envs = get<int>(j, "ppo", "num_envs");
  p.lr = get<double>(j, "ppo", "lr");
  p.max_grad_norm = get<double>(j, "ppo", "max_grad_norm");
  p.adam_beta1 = get<double>(j, "ppo", "adam_beta1");
  p.adam_beta2 = get<double>(j, "ppo", "adam_beta2");
  p.adam_eps = get<double>(j, "ppo", "adam_eps");
  p.normalize_advantages = get<bool>(j, "ppo", "normalize_advantages");

  auto& e = c.env;
  e.maps = get<std::vector<std::string>>(j, "env", "maps");
  e.eval_maps = get<std::vector<std::string>>(j, "env", "eval_maps");
  e.fixed_source = get<bool>(j, "env", "fixed_source");
  e.fixed_start = get<bool>(j, "env", "fixed_start");
  e.max_depth = get<double>(j, "env", "max_depth");
  e.noise = get<double>(j, "env", "noise");
  e.step_limit = get<int>(j, "env", "step_limit");
  e.heard_classes = get<std::size_t>(j, "env", "heard_classes");
  e.unheard_classes = get<std::size_t>(j, "env", "unheard_classes");
  e.active_bands = get<std::size_t>(j, "env", "active_bands");
  e.pool_seed = get<std::uint64_t>(j, "env", "pool_seed");

  auto& t = c.train;
  t.seed = get<std::uint64_t>(j, "train", "seed");
  t.total_steps = get<long>(j, "train", "total_steps");
  t.eval_interval = get<long>(j, "train", "eval_interval");
  t.eval_episodes = get<int>(j, "train", "eval_episodes");
  t.checkpoint_interval = get<long>(j, "train", "checkpoint_interval");
  t.out_dir = get<std::string>(j, "train", "out_dir");

  c.eval.episodes = get<int>(j, "eval", "episodes");
  c.eval.seed = get<std::uint64_t>(j, "eval", "seed");
  c.validate();
  return c;
}

json parse_text(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    // Byte offset -> line number for the error message.
    const std::size_t upto = std::min<std::size_t>(e.byte, text.size());
    const int line = 1 + static_cast<int>(std::count(text.begin(), text.begin() + upto, '\n'));
    throw ParseError(std::string("invalid config JSON: ") + e.what(), line);
  }
}

}  // namespace

env::SimConfig RunConfig::sim() const {
  env::SimConfig s;
  s.depth_height = model.image_height;
  s.depth_width = model.image_width;
  s.max_depth = env.max_depth;
  s.bands = model.bands;
  s.frames = model.frames;
  s.noise = env.noise;
  s.step_limit = env.step_limit;
  s.blind = model.blind;
  return s;
}

void RunConfig::validate() const {
  model.validate();
  ppo.validate();
  if (model.visual == pipeline::VisualKind::kRgb) {
    throw ConfigError("the simulator renders depth only; model.visual must be 'depth' for runs");
  }
  if (env.maps.empty()) throw ConfigError("env.maps must name at least one map");
  if (env.step_limit <= 0) throw ConfigError("env.step_limit must be positive");
  if (!(env.max_depth > 0)) throw ConfigError("env.max_depth must be positive");
  if (env.noise < 0 || env.noise >= 1) throw ConfigError("env.noise must lie in [0,1)");
  if (env.heard_classes == 0 || env.unheard_classes == 0) throw ConfigError("sound class pools must be non-empty");
  if (env.active_bands == 0 || env.active_bands > model.bands) {
    throw ConfigError("env.active_bands must lie in [1, model.bands]");
  }
  if (train.total_steps < 0 || train.eval_interval < 0 || train.checkpoint_interval < 0 || train.eval_episodes < 0) {
    throw ConfigError("train step counts must be nonnegative");
  }
  if (eval.episodes <= 0) throw ConfigError("eval.episodes must be positive");
}

std::string to_json(const RunConfig& config) { return to_json_object(config).dump(2); }

RunConfig from_json(const std::string& text) { return from_json_object(parse_text(text)); }

RunConfig load_config(const std::string& path) { return load_config(path, {}); }

void apply_override(std::string& json_text, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  json doc = json_text.empty() ? json::object() : parse_text(json_text);
  const json defaults = to_json_object(RunConfig{});
  json* slot = &doc;
  const json* schema = &defaults;
  std::size_t pos = 0;
  while (true) {
    const auto dot = key.find('.', pos);
    const std::string part = key.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
    if (part.empty() || !schema->is_object() || !schema->contains(part)) {
      throw ConfigError("unknown config key '" + key + "'");
    }
    schema = &(*schema)[part];
    if (dot == std::string::npos) {
      (*slot)[part] = value;
      break;
    }
    if (!slot->contains(part)) (*slot)[part] = json::object();
    slot = &(*slot)[part];
    pos = dot + 1;
  }
  json_text = doc.dump();
}

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  std::string text = ss.str();
  parse_text(text);  // report syntax errors against the original line numbers
  for (const auto& o : overrides) apply_override(text, o);
  return from_json(text);
}

RunConfig with_overrides(const RunConfig& base, const std::vector<std::string>& overrides) {
  std::string text = to_json(base);
  for (const auto& o : overrides) apply_override(text, o);
  return from_json(text);
}

}  // namespace agsa::config
