#include <algorithm>
#include <cstdio>

#include "agsa/error.hpp"
#include "agsa/harness.hpp"

namespace agsa::harness {

using namespace agsa::ad;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

// Sum of the output weighted by fixed random coefficients, so every output
// element contributes a distinct gradient.
Tensor probe(const Tensor& out, const Tensor& weights) { return sum(mul(out, weights)); }

void perturb(const nn::ParamList& params, Rng& rng, double amount) {
  for (const auto& p : params)
    for (double& v : p.tensor.impl().data) v += rng.uniform(-amount, amount);
}

pipeline::ModelConfig tiny_model() {
  pipeline::ModelConfig c;
  c.feature_dim = 6;
  c.model_dim = 8;
  c.hidden_dim = 6;
  c.attention_heads = 2;
  c.sam_heads = 1;
  c.bands = 12;
  c.frames = 12;
  c.image_height = 12;
  c.image_width = 12;
  c.channels = {3, 3, 4};
  return c;
}

GradCheckReport check_encoder(Rng& rng) {
  nn::CnnEncoderConfig c;
  c.height = 12;
  c.width = 12;
  c.in_channels = 2;
  c.channels = {3, 3, 4};
  c.paddings = nn::auto_paddings(c.height, c.width, c.strides);
  c.out_dim = 5;
  const auto p = nn::init_cnn_encoder(c, rng);
  nn::ParamList params;
  p.collect(params, "encoder");
  perturb(params, rng, 0.1);
  const Tensor x = random_tensor({2, 12, 12, 2}, rng, 0.0, 1.0);
  const Tensor w = random_tensor({2, 5}, rng);
  return check_gradients([&] { return probe(nn::cnn_encoder_forward(p, x), w); }, params);
}

GradCheckReport check_sam(Rng& rng) {
  const auto p = sam::init_sam({4, 1, true}, rng);
  nn::ParamList params;
  p.collect(params, "sam");
  // The output projection starts at zero; move off it so every path is live.
  perturb(params, rng, 0.3);
  const Tensor x = random_tensor({2, 4, 3, 3}, rng);
  const Tensor w = random_tensor({2, 4, 3, 3}, rng);
  return check_gradients([&] { return probe(sam::sam_forward(p, x), w); }, params);
}

GradCheckReport check_agdf(Rng& rng) {
  agdf::AgdfConfig c;
  c.feature_dim = 5;
  c.model_dim = 8;
  c.heads = 2;
  c.two_token_context = true;
  const auto p = agdf::init_agdf(c, rng);
  const Tensor fa = random_tensor({3, 5}, rng);
  const Tensor fv = random_tensor({3, 5}, rng);
  const Tensor w = random_tensor({3, 8}, rng);
  nn::ParamList params;
  p.collect(params, "agdf");
  return check_gradients([&] { return probe(agdf::agdf_forward(p, fa, fv), w); }, params);
}

GradCheckReport check_gru(Rng& rng) {
  const auto p = nn::init_gru(5, 4, rng);
  nn::ParamList params;
  p.collect(params, "gru");
  perturb(params, rng, 0.2);
  const Tensor x1 = random_tensor({3, 5}, rng);
  const Tensor x2 = random_tensor({3, 5}, rng);
  const Tensor h0 = random_tensor({3, 4}, rng);
  const Tensor w = random_tensor({3, 4}, rng);
  return check_gradients([&] { return probe(nn::gru_step(p, x2, nn::gru_step(p, x1, h0)), w); }, params);
}

GradCheckReport check_heads(Rng& rng) {
  const auto p = policy::init_policy(5, 4, rng);
  nn::ParamList params;
  p.actor.collect(params, "actor");
  p.critic.collect(params, "critic");
  const Tensor h = random_tensor({3, 4}, rng);
  const Tensor wl = random_tensor({3, 4}, rng);
  const Tensor wv = random_tensor({3}, rng);
  return check_gradients(
      [&] {
        const auto heads = policy::policy_heads(p, h);
        return add(probe(heads.log_probs, wl), probe(heads.values, wv));
      },
      params);
}

// Three-step rollout of a tiny full model on the gridworld; the PPO loss over
// the stored transitions is checked against every model parameter.
GradCheckReport check_ppo_end_to_end(Rng& rng) {
  const auto mc = tiny_model();
  const auto model = pipeline::build_model(mc, rng);
  nn::ParamList params = model.parameters();
  perturb(params, rng, 0.05);

  env::SimConfig sim;
  sim.depth_height = mc.image_height;
  sim.depth_width = mc.image_width;
  sim.bands = mc.bands;
  sim.frames = mc.frames;
  const auto parsed = env::builtin_map("room8");
  auto map = std::make_shared<const env::GridMap>(parsed.map);
  env::Environment environment(map, sim);
  env::EpisodeSpec spec;
  spec.source = {*parsed.goal, env::random_signature(mc.bands, 4, rng)};
  spec.start = {*parsed.start, env::Heading::kNorth, 0};
  spec.seed = rng.next_u64();
  env::Observation obs = environment.reset(spec);

  constexpr std::size_t kSteps = 3;
  std::vector<policy::RolloutBuffer> buffers{policy::RolloutBuffer(kSteps)};
  Tensor h = Tensor::zeros({1, mc.hidden_dim});
  const env::Action script[kSteps] = {env::Action::kTurnLeft, env::Action::kForward, env::Action::kForward};
  for (std::size_t t = 0; t < kSteps; ++t) {
    const auto out = pipeline::forward(model, obs, h);
    policy::Transition tr;
    tr.observation = obs;
    tr.action = static_cast<int>(script[t]);
    // Old log-probs shifted away from the current ones so ratios differ from 1.
    tr.log_prob = out.heads.log_probs[tr.action] + rng.uniform(-0.1, 0.1);
    tr.value = out.heads.values[0];
    tr.hidden.assign(h.data().begin(), h.data().end());
    const auto step = environment.step(script[t]);
    tr.reward = step.reward;
    tr.done = step.done;
    buffers[0].push(std::move(tr));
    obs = step.observation;
    h = out.hidden;
  }
  policy::PpoConfig pc;
  policy::compute_gae(buffers[0], pc, 0.0);
  policy::PpoBatch batch;
  for (std::size_t t = 0; t < kSteps; ++t) {
    batch.actions.push_back(buffers[0][t].action);
    batch.old_log_probs.push_back(buffers[0][t].log_prob);
    batch.advantages.push_back(buffers[0].advantages()[t]);
    batch.returns.push_back(buffers[0].returns()[t]);
  }
  const policy::SequenceChunk chunk{0, 0, kSteps};
  return check_gradients(
      [&] {
        const auto heads = pipeline::evaluate_chunks(model, buffers, std::span(&chunk, 1));
        return policy::ppo_loss(heads.log_probs, heads.values, batch, pc).total;
      },
      params);
}

}  // namespace

std::vector<GradCheckCase> run_gradcheck_suite(int seeds, const LogFn& log) {
  using Check = GradCheckReport (*)(Rng&);
  const std::array<std::pair<const char*, Check>, 6> modules = {
      std::pair{"cnn_encoder", &check_encoder}, std::pair{"sam", &check_sam},
      std::pair{"agdf", &check_agdf},           std::pair{"gru", &check_gru},
      std::pair{"actor_critic", &check_heads},  std::pair{"ppo_end_to_end", &check_ppo_end_to_end}};
  std::vector<GradCheckCase> out;
  for (const auto& [name, fn] : modules) {
    for (int s = 0; s < seeds; ++s) {
      const std::uint64_t seed = derive_seed(0x67726164ull, static_cast<std::uint64_t>(s));
      Rng rng(seed);
      GradCheckCase c{name, seed, fn(rng)};
      if (log) {
        double worst = 0.0;
        for (const auto& pe : c.report.params) worst = std::max(worst, pe.max_rel_error);
        char buf[160];
        std::snprintf(buf, sizeof buf, "%-16s seed %d  %s  params %zu  max_rel_err %.3e", name, s,
                      c.report.passed ? "PASS" : "FAIL", c.report.params.size(), worst);
        log(buf);
        if (!c.report.passed) log(c.report.summary());
      }
      out.push_back(std::move(c));
    }
  }
  return out;
}

}  // namespace agsa::harness
