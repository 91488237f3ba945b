#include <algorithm>
#include <numeric>

#include "agsa/error.hpp"
#include "agsa/policy.hpp"
#include "helpers.hpp"

using namespace agsa;
using namespace agsa::ad;
using namespace agsa::policy;
using agsa::test::random_tensor;

namespace {

void zero(Tensor& t) { std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0); }

// Direct sum A_t = sum_k (gamma lambda)^k delta_{t+k}, truncated at the first done.
std::vector<double> reference_gae(const std::vector<double>& r, const std::vector<double>& v, const std::vector<bool>& done,
                                  double bootstrap, double gamma, double lambda) {
  const std::size_t n = r.size();
  std::vector<double> delta(n), adv(n, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    const double next = t + 1 < n ? v[t + 1] : bootstrap;
    delta[t] = r[t] + (done[t] ? 0.0 : gamma * next) - v[t];
  }
  for (std::size_t t = 0; t < n; ++t) {
    double w = 1.0;
    for (std::size_t k = t; k < n; ++k) {
      adv[t] += w * delta[k];
      if (done[k]) break;
      w *= gamma * lambda;
    }
  }
  return adv;
}

std::vector<double> gae(const std::vector<double>& r, const std::vector<double>& v, const std::vector<bool>& done,
                        double bootstrap, double gamma, double lambda) {
  std::unique_ptr<bool[]> d(new bool[done.size()]);
  std::copy(done.begin(), done.end(), d.get());
  return gae_advantages(r, v, std::span<const bool>(d.get(), done.size()), bootstrap, gamma, lambda);
}

PpoBatch random_batch(std::size_t n, Rng& rng) {
  PpoBatch b;
  for (std::size_t i = 0; i < n; ++i) {
    b.actions.push_back(static_cast<int>(rng.below(4)));
    b.old_log_probs.push_back(std::log(rng.uniform(0.1, 0.6)));
    b.advantages.push_back(rng.uniform(-2, 2));
    b.returns.push_back(rng.uniform(-1, 1));
  }
  return b;
}

}  // namespace

TEST_SUITE("policy") {

TEST_CASE("zero actor weights give a uniform policy and zero critic gives value 0") {
  Rng rng(1);
  auto p = init_policy(6, 5, rng);
  zero(p.actor.weight);
  zero(p.critic.weight);
  const auto r = act(p, random_tensor({6}, rng), random_tensor({5}, rng, -0.5, 0.5), ActMode::kSample, rng);
  for (double q : r.probs) CHECK(q == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(r.value == 0.0);
  CHECK(r.log_prob == doctest::Approx(std::log(0.25)));
  CHECK(r.hidden.shape() == Shape{5});
}

TEST_CASE("greedy mode picks the argmax and reports its log-probability") {
  Rng rng(2);
  const auto p = init_policy(6, 5, rng);
  for (int s = 0; s < 20; ++s) {
    const Tensor h_prev = random_tensor({5}, rng, -0.5, 0.5);
    const auto r = act(p, random_tensor({6}, rng, -3, 3), h_prev, ActMode::kGreedy, rng);
    const int best = static_cast<int>(std::max_element(r.probs.begin(), r.probs.end()) - r.probs.begin());
    CHECK(static_cast<int>(r.action) == best);
    CHECK(r.log_prob == doctest::Approx(std::log(r.probs[best])));
    CHECK(r.log_prob <= 0.0);
    CHECK(std::accumulate(r.probs.begin(), r.probs.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("categorical sampling frequencies") {
  Rng rng(3);
  const std::array<double, 4> probs = {0.1, 0.2, 0.3, 0.4};
  std::array<int, 4> counts{};
  for (int i = 0; i < 20000; ++i) ++counts[sample_categorical(probs, rng)];
  for (int a = 0; a < 4; ++a) CHECK(std::abs(counts[a] / 20000.0 - probs[a]) < 0.015);
  const std::array<double, 4> certain = {0.0, 0.0, 1.0, 0.0};
  for (int i = 0; i < 100; ++i) CHECK(sample_categorical(certain, rng) == 2);
}

TEST_CASE("GAE examples") {
  const auto a = gae({1, 1}, {0, 0}, {false, false}, 0.0, 0.9, 0.9);
  CHECK(a[0] == doctest::Approx(1.81).epsilon(1e-14));
  CHECK(a[1] == doctest::Approx(1.0).epsilon(1e-14));
  const auto ref = reference_gae({1, 1}, {0, 0}, {false, false}, 0.0, 0.9, 0.9);
  CHECK(a == ref);
}

TEST_CASE("GAE lambda 0 collapses to the TD error") {
  Rng rng(4);
  for (int s = 0; s < 50; ++s) {
    const std::size_t n = 1 + rng.below(20);
    std::vector<double> r(n), v(n);
    std::vector<bool> done(n);
    for (std::size_t i = 0; i < n; ++i) {
      r[i] = rng.uniform(-1, 1);
      v[i] = rng.uniform(-1, 1);
      done[i] = rng.below(5) == 0;
    }
    const double boot = rng.uniform(-1, 1);
    const auto a = gae(r, v, done, boot, 0.99, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
      const double next = t + 1 < n ? v[t + 1] : boot;
      CHECK(a[t] == r[t] + (done[t] ? 0.0 : 0.99 * next) - v[t]);
    }
  }
}

TEST_CASE("GAE with gamma = lambda = 1 and zero values sums the remaining rewards") {
  Rng rng(5);
  std::vector<double> r(30);
  for (double& x : r) x = rng.uniform(-1, 1);
  const auto a = gae(r, std::vector<double>(30, 0.0), std::vector<bool>(30, false), 0.0, 1.0, 1.0);
  for (std::size_t t = 0; t < 30; ++t) {
    const double tail = std::accumulate(r.begin() + static_cast<long>(t), r.end(), 0.0);
    CHECK(a[t] == doctest::Approx(tail).epsilon(1e-12));
  }
}

TEST_CASE("GAE matches the direct-sum reference on random segments") {
  Rng rng(6);
  for (int s = 0; s < 200; ++s) {
    const std::size_t n = 1 + rng.below(40);
    std::vector<double> r(n), v(n);
    std::vector<bool> done(n);
    for (std::size_t i = 0; i < n; ++i) {
      r[i] = rng.uniform(-2, 2);
      v[i] = rng.uniform(-2, 2);
      done[i] = rng.below(8) == 0;
    }
    const double boot = rng.uniform(-2, 2), gamma = rng.uniform(0.5, 1.0), lambda = rng.uniform(0.0, 1.0);
    const auto a = gae(r, v, done, boot, gamma, lambda);
    const auto ref = reference_gae(r, v, done, boot, gamma, lambda);
    for (std::size_t t = 0; t < n; ++t) CHECK(a[t] == doctest::Approx(ref[t]).epsilon(1e-10));
  }
}

TEST_CASE("a done blocks credit from later rewards") {
  Rng rng(7);
  std::vector<double> r(12), v(12);
  for (std::size_t i = 0; i < 12; ++i) {
    r[i] = rng.uniform(-1, 1);
    v[i] = rng.uniform(-1, 1);
  }
  std::vector<bool> done(12, false);
  done[5] = true;
  const auto before = gae(r, v, done, 0.3, 0.99, 0.95);
  for (std::size_t i = 6; i < 12; ++i) r[i] += 100.0;
  const auto after = gae(r, v, done, 7.0, 0.99, 0.95);
  for (std::size_t t = 0; t <= 5; ++t) CHECK(before[t] == after[t]);
}

TEST_CASE("GAE contract and buffer errors") {
  CHECK_THROWS_AS(gae({}, {}, {}, 0.0, 0.9, 0.9), ContractError);
  RolloutBuffer empty(4);
  CHECK_THROWS_AS(compute_gae(empty, PpoConfig{}, 0.0), ContractError);
  RolloutBuffer buf(2);
  Transition t;
  t.reward = 1.0;
  buf.push(t);
  buf.push(t);
  CHECK(buf.full());
  CHECK_THROWS_AS(buf.push(t), StateError);
  PpoConfig c;
  c.gamma = 0.9;
  c.lambda = 0.9;
  compute_gae(buf, c, 0.0);
  CHECK(buf.has_advantages());
  CHECK(buf.advantages()[0] == doctest::Approx(1.81));
  CHECK(buf.returns()[1] == doctest::Approx(1.0));
  buf.clear();
  CHECK(buf.empty());
  CHECK_FALSE(buf.has_advantages());
}

TEST_CASE("ppo loss examples") {
  PpoConfig c;
  c.normalize_advantages = false;
  Rng rng(8);
  const Tensor lp = log_softmax(random_tensor({6, 4}, rng));
  PpoBatch b = random_batch(6, rng);
  for (std::size_t i = 0; i < 6; ++i) b.old_log_probs[i] = lp[i * 4 + b.actions[i]];
  const Tensor values = random_tensor({6}, rng);
  const auto loss = ppo_loss(lp, values, b, c);
  const double mean_adv = std::accumulate(b.advantages.begin(), b.advantages.end(), 0.0) / 6.0;
  CHECK(loss.policy_loss == doctest::Approx(-mean_adv).epsilon(1e-14));
  CHECK(loss.clip_fraction == 0.0);
  double vl = 0.0;
  for (std::size_t i = 0; i < 6; ++i) vl += (values[i] - b.returns[i]) * (values[i] - b.returns[i]);
  CHECK(loss.value_loss == doctest::Approx(vl / 6.0).epsilon(1e-14));
  CHECK(loss.total.item() ==
        doctest::Approx(loss.policy_loss + 0.5 * loss.value_loss - 0.01 * loss.entropy).epsilon(1e-14));
  // Ratio 2 with positive advantage is clipped to 1.2 A.
  PpoBatch one;
  one.actions = {1};
  one.advantages = {3.0};
  one.returns = {0.0};
  const Tensor lp1 = log_softmax(Tensor({1, 4}, {0.1, 0.2, 0.3, 0.4}));
  one.old_log_probs = {lp1[1] - std::log(2.0)};
  const auto clipped = ppo_loss(lp1, Tensor::zeros({1}), one, c);
  CHECK(clipped.policy_loss == doctest::Approx(-1.2 * 3.0).epsilon(1e-14));
  CHECK(clipped.clip_fraction == 1.0);
}

TEST_CASE("loss composition uses the 0.5 and 0.01 weights") {
  CHECK(combine_losses(1.0, 2.0, 3.0, PpoConfig{}) == doctest::Approx(1.97).epsilon(1e-15));
  PpoConfig c;
  CHECK(c.value_coef == 0.5);
  CHECK(c.entropy_coef == 0.01);
}

TEST_CASE("clipping never increases the surrogate") {
  Rng rng(9);
  PpoConfig c;
  for (int s = 0; s < 200; ++s) {
    const std::size_t n = 1 + rng.below(32);
    const Tensor lp = log_softmax(random_tensor({n, 4}, rng, -2, 2));
    const PpoBatch b = random_batch(n, rng);
    const auto loss = ppo_loss(lp, Tensor::zeros({n}), b, c);
    const auto adv = n > 1 ? normalize(b.advantages) : b.advantages;
    double unclipped = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double rho = std::exp(lp[i * 4 + b.actions[i]] - b.old_log_probs[i]);
      const double pointwise = std::min(rho * adv[i], std::clamp(rho, 0.8, 1.2) * adv[i]);
      CHECK(pointwise <= rho * adv[i]);
      unclipped += rho * adv[i];
    }
    CHECK(loss.policy_loss >= -unclipped / static_cast<double>(n) - 1e-12);
  }
}

TEST_CASE("uniform entropy is ln 4") {
  const std::array<double, 4> u = {0.25, 0.25, 0.25, 0.25};
  CHECK(std::abs(categorical_entropy(u) - std::log(4.0)) <= 1e-12);
  const Tensor lp = log_softmax(Tensor::zeros({3, 4}));
  PpoBatch b;
  b.actions = {0, 1, 2};
  b.old_log_probs = {lp[0], lp[1], lp[2]};
  b.advantages = {1, 2, 3};
  b.returns = {0, 0, 0};
  CHECK(std::abs(ppo_loss(lp, Tensor::zeros({3}), b, PpoConfig{}).entropy - std::log(4.0)) <= 1e-12);
}

TEST_CASE("advantage normalisation") {
  const std::vector<double> a = {1, 2, 3, 4};
  const auto n = normalize(a);
  CHECK(std::accumulate(n.begin(), n.end(), 0.0) == doctest::Approx(0.0).epsilon(1e-15));
  double sq = 0.0;
  for (double v : n) sq += v * v;
  CHECK(sq / 4.0 == doctest::Approx(1.0).epsilon(1e-12));
  const std::vector<double> flat = {2, 2, 2};
  for (double v : normalize(flat)) CHECK(v == 0.0);
}

TEST_CASE("ppo loss errors") {
  PpoBatch b;
  b.actions = {0};
  b.old_log_probs = {-1e6};
  b.advantages = {1.0};
  b.returns = {0.0};
  CHECK_THROWS_AS(ppo_loss(log_softmax(Tensor::zeros({1, 4})), Tensor::zeros({1}), b, PpoConfig{}), NumericError);
  CHECK_THROWS_AS(ppo_loss(log_softmax(Tensor::zeros({2, 4})), Tensor::zeros({1}), b, PpoConfig{}), ShapeError);
}

TEST_CASE("ppo loss gradient matches finite differences on a frozen minibatch") {
  for (int s = 0; s < agsa::test::kSeeds; ++s) {
    CAPTURE(s);
    Rng rng(derive_seed(505, s));
    Tensor logits = random_tensor({8, 4}, rng), values = random_tensor({8}, rng);
    PpoBatch b = random_batch(8, rng);
    // Old log-probs close to the current ones keep ratios away from the clip kinks.
    const Tensor lp0 = log_softmax(logits);
    for (std::size_t i = 0; i < 8; ++i) b.old_log_probs[i] = lp0[i * 4 + b.actions[i]] + rng.uniform(-0.05, 0.05);
    const auto r = check_gradients([&] { return ppo_loss(log_softmax(logits), values, b, PpoConfig{}).total; },
                                   {{"logits", logits}, {"values", values}});
    CHECK_MESSAGE(r.passed, r.summary());
  }
}

TEST_CASE("config validation") {
  PpoConfig c;
  CHECK_NOTHROW(c.validate());
  c.clip = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = PpoConfig{};
  c.seq_len = 7;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = PpoConfig{};
  c.entropy_coef = -0.1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = PpoConfig{};
  c.minibatch = 48;
  c.seq_len = 16;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("adam leaves parameters alone under zero gradients") {
  Rng rng(10);
  Tensor w = random_tensor({3, 3}, rng, -1, 1, true);
  const Tensor before = w.clone();
  Adam opt({{"w", w}}, 0.1);
  for (int i = 0; i < 5; ++i) {
    opt.zero_grad();
    std::fill(w.mutable_grad().begin(), w.mutable_grad().end(), 0.0);
    opt.step();
  }
  CHECK(agsa::test::bit_equal(w, before));
  opt.step();  // no gradient buffer at all
  CHECK(agsa::test::bit_equal(w, before));
}

TEST_CASE("adam strictly decreases a convex quadratic over 10 steps") {
  Rng rng(11);
  Tensor x = random_tensor({5}, rng, -2, 2, true);
  const Tensor target = random_tensor({5}, rng, -2, 2);
  Adam opt({{"x", x}}, 0.05);
  const auto loss = [&] {
    const Tensor d = sub(x, target);
    return sum(mul(d, d));
  };
  double prev = loss().item();
  for (int i = 0; i < 10; ++i) {
    opt.zero_grad();
    {
      Tape tape;
      tape.backward(loss());
    }
    opt.step();
    const double now = loss().item();
    CHECK(now < prev);
    prev = now;
  }
}

TEST_CASE("gradient norm clipping") {
  Tensor a = Tensor::vector({0, 0});
  a.set_requires_grad(true);
  a.mutable_grad()[0] = 3.0;
  a.mutable_grad()[1] = 4.0;
  const nn::ParamList params = {{"a", a}};
  CHECK(grad_norm(params) == 5.0);
  double norm = 0.0;
  clip_grad_norm(params, 0.5, &norm);
  CHECK(norm == 5.0);
  CHECK(grad_norm(params) == doctest::Approx(0.5).epsilon(1e-6));
  clip_grad_norm(params, 10.0, &norm);
  CHECK(grad_norm(params) == doctest::Approx(0.5).epsilon(1e-6));
}

namespace {

// Toy recurrent problem for optimize(): heads come straight from per-step
// logits held in a parameter table indexed by (worker, step).
struct ToyProblem {
  Tensor table;  // (workers * steps, 5): 4 logits and a value
  std::vector<RolloutBuffer> buffers;

  ToyProblem(std::size_t workers, std::size_t steps, Rng& rng) {
    table = random_tensor({workers * steps, 5}, rng, -0.5, 0.5, true);
    for (std::size_t w = 0; w < workers; ++w) {
      RolloutBuffer buf(steps);
      for (std::size_t t = 0; t < steps; ++t) {
        Transition tr;
        tr.action = static_cast<int>(rng.below(4));
        tr.log_prob = std::log(0.25);
        tr.value = rng.uniform(-1, 1);
        tr.reward = rng.uniform(-1, 1);
        tr.done = rng.below(10) == 0;
        buf.push(std::move(tr));
      }
      PpoConfig c;
      compute_gae(buf, c, 0.0);
      buffers.push_back(std::move(buf));
    }
  }

  HeadOutputs evaluate(std::span<const SequenceChunk> chunks) const {
    const std::size_t steps = buffers[0].size();
    std::vector<Tensor> rows;
    for (std::size_t t = 0; t < chunks[0].length; ++t)
      for (const auto& c : chunks) rows.push_back(slice(table, 0, c.worker * steps + c.start + t, 1));
    const Tensor all = concat(rows, 0);
    const std::size_t n = rows.size();
    return {log_softmax(slice(all, 1, 0, 4)), reshape(slice(all, 1, 4, 1), {n})};
  }
};

}  // namespace

TEST_CASE("optimize is deterministic and validates its inputs") {
  PpoConfig c;
  c.num_envs = 2;
  c.rollout_steps = 16;
  c.seq_len = 4;
  c.minibatch = 8;
  c.epochs = 3;
  std::vector<Tensor> results;
  for (int run = 0; run < 2; ++run) {
    Rng data_rng(12);
    ToyProblem toy(2, 16, data_rng);
    Adam opt({{"table", toy.table}}, c.lr);
    Rng rng(13);
    const auto report = optimize(opt, toy.buffers, c, rng, [&](auto chunks) { return toy.evaluate(chunks); });
    CHECK(report.minibatches == 3 * 4);
    CHECK(std::isfinite(report.total_loss));
    CHECK(opt.steps() == 12);
    results.push_back(toy.table.clone());
  }
  CHECK(agsa::test::bit_equal(results[0], results[1]));

  Rng data_rng(12);
  ToyProblem toy(2, 16, data_rng);
  Adam opt({{"table", toy.table}}, c.lr);
  Rng rng(13);
  std::vector<RolloutBuffer> raw = {RolloutBuffer(16)};
  Transition tr;
  for (int i = 0; i < 16; ++i) raw[0].push(tr);
  CHECK_THROWS_AS(optimize(opt, raw, c, rng, [&](auto chunks) { return toy.evaluate(chunks); }), StateError);
}

TEST_CASE("optimize aborts on a non-finite loss") {
  PpoConfig c;
  c.num_envs = 1;
  c.rollout_steps = 8;
  c.seq_len = 4;
  c.minibatch = 8;
  c.epochs = 1;
  Rng data_rng(14);
  ToyProblem toy(1, 8, data_rng);
  toy.table.mutable_data()[4] = std::numeric_limits<double>::quiet_NaN();
  Adam opt({{"table", toy.table}}, c.lr);
  Rng rng(15);
  CHECK_THROWS_AS(optimize(opt, toy.buffers, c, rng, [&](auto chunks) { return toy.evaluate(chunks); }), NumericError);
}

}  // TEST_SUITE
