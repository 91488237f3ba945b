#include "agsa/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "agsa/error.hpp"

namespace agsa::policy {

using namespace agsa::ad;

void PolicyParams::collect(nn::ParamList& out, const std::string& prefix) const {
  gru.collect(out, prefix + ".gru");
  actor.collect(out, prefix + ".actor");
  critic.collect(out, prefix + ".critic");
}

PolicyParams init_policy(std::size_t input_dim, std::size_t hidden_dim, Rng& rng) {
  PolicyParams p;
  p.gru = nn::init_gru(input_dim, hidden_dim, rng);
  p.actor = nn::init_linear(hidden_dim, env::kNumActions, rng);
  p.critic = nn::init_linear(hidden_dim, 1, rng);
  return p;
}

HeadOutputs policy_heads(const PolicyParams& p, const Tensor& hidden) {
  const std::size_t batch = hidden.dim(0);
  return {log_softmax(nn::linear(p.actor, hidden)), reshape(nn::linear(p.critic, hidden), {batch})};
}

int sample_categorical(std::span<const double> probs, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return static_cast<int>(i);
  }
  // Rounding left the cumulative sum just below 1: take the last non-zero entry.
  for (std::size_t i = probs.size(); i-- > 0;)
    if (probs[i] > 0) return static_cast<int>(i);
  return 0;
}

int argmax(std::span<const double> values) {
  return static_cast<int>(std::max_element(values.begin(), values.end()) - values.begin());
}

std::vector<ActResult> select_actions(const HeadOutputs& heads, const Tensor& hidden, ActMode mode, Rng& rng) {
  const std::size_t batch = heads.values.size();
  const std::size_t h = hidden.dim(1);
  std::vector<ActResult> out(batch);
  const auto lp = heads.log_probs.data();
  for (std::size_t b = 0; b < batch; ++b) {
    ActResult& r = out[b];
    const auto row = lp.subspan(b * env::kNumActions, env::kNumActions);
    for (int a = 0; a < env::kNumActions; ++a) r.probs[a] = std::exp(row[a]);
    const int a = mode == ActMode::kGreedy ? argmax(row) : sample_categorical(r.probs, rng);
    r.action = static_cast<env::Action>(a);
    r.log_prob = row[a];
    r.value = heads.values[b];
    r.hidden = Tensor({h}, std::vector<double>(hidden.data().begin() + b * h, hidden.data().begin() + (b + 1) * h));
  }
  return out;
}

ActResult act(const PolicyParams& p, const Tensor& fused, const Tensor& h_prev, ActMode mode, Rng& rng) {
  const Tensor x = fused.rank() == 1 ? reshape(fused, {1, fused.dim(0)}) : fused;
  const Tensor h = h_prev.rank() == 1 ? reshape(h_prev, {1, h_prev.dim(0)}) : h_prev;
  const Tensor h_new = nn::gru_step(p.gru, x, h);
  auto results = select_actions(policy_heads(p, h_new), h_new, mode, rng);
  return results.at(0);
}

// PPO ----------------------------------------------------------------------

void PpoConfig::validate() const {
  if (!(clip > 0)) throw ConfigError("ppo.clip must be > 0");
  if (value_coef < 0 || entropy_coef < 0) throw ConfigError("ppo loss coefficients must be nonnegative");
  if (gamma < 0 || gamma > 1 || lambda < 0 || lambda > 1) throw ConfigError("ppo.gamma and ppo.lambda must lie in [0,1]");
  if (epochs <= 0 || minibatch <= 0 || seq_len <= 0 || rollout_steps <= 0 || num_envs <= 0) {
    throw ConfigError("ppo epochs, minibatch, seq_len, rollout_steps and num_envs must be positive");
  }
  if (rollout_steps % seq_len != 0) throw ConfigError("ppo.seq_len must divide ppo.rollout_steps");
  if (minibatch % seq_len != 0) throw ConfigError("ppo.seq_len must divide ppo.minibatch");
  if ((rollout_steps * num_envs) % minibatch != 0) {
    throw ConfigError("ppo.minibatch must divide rollout_steps * num_envs");
  }
  if (!(lr > 0) || !(max_grad_norm > 0)) throw ConfigError("ppo.lr and ppo.max_grad_norm must be > 0");
}

void RolloutBuffer::push(Transition t) {
  if (full()) throw StateError("rollout buffer is full");
  transitions_.push_back(std::move(t));
  has_advantages_ = false;
}

void RolloutBuffer::clear() {
  transitions_.clear();
  advantages_.clear();
  returns_.clear();
  has_advantages_ = false;
}

void RolloutBuffer::set_targets(std::vector<double> advantages, std::vector<double> returns) {
  if (advantages.size() != transitions_.size() || returns.size() != transitions_.size()) {
    throw ShapeError("advantage/return length does not match the buffer");
  }
  advantages_ = std::move(advantages);
  returns_ = std::move(returns);
  has_advantages_ = true;
}

std::vector<double> gae_advantages(std::span<const double> rewards, std::span<const double> values,
                                   std::span<const bool> dones, double bootstrap_value, double gamma, double lambda) {
  const std::size_t n = rewards.size();
  if (n == 0) throw ContractError("GAE over an empty segment");
  if (values.size() != n || dones.size() != n) throw ShapeError("GAE inputs differ in length");
  std::vector<double> adv(n);
  double next_value = bootstrap_value;
  double next_adv = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double live = dones[i] ? 0.0 : 1.0;
    const double delta = rewards[i] + gamma * next_value * live - values[i];
    adv[i] = delta + gamma * lambda * live * next_adv;
    next_value = values[i];
    next_adv = adv[i];
  }
  return adv;
}

void compute_gae(RolloutBuffer& buffer, const PpoConfig& config, double bootstrap_value) {
  if (buffer.empty()) throw ContractError("compute_gae on an empty buffer");
  std::vector<double> rewards, values;
  std::vector<bool> dones_vec;
  for (const auto& t : buffer.transitions()) {
    rewards.push_back(t.reward);
    values.push_back(t.value);
    dones_vec.push_back(t.done);
  }
  const std::unique_ptr<bool[]> dones(new bool[dones_vec.size()]);
  std::copy(dones_vec.begin(), dones_vec.end(), dones.get());
  auto adv = gae_advantages(rewards, values, std::span<const bool>(dones.get(), dones_vec.size()), bootstrap_value,
                            config.gamma, config.lambda);
  std::vector<double> ret(adv.size());
  for (std::size_t i = 0; i < adv.size(); ++i) ret[i] = adv[i] + values[i];
  buffer.set_targets(std::move(adv), std::move(ret));
}

double combine_losses(double policy_loss, double value_loss, double entropy, const PpoConfig& config) {
  return policy_loss + config.value_coef * value_loss - config.entropy_coef * entropy;
}

std::vector<double> normalize(std::span<const double> values) {
  const double n = static_cast<double>(values.size());
  const double mu = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double var = 0.0;
  for (double v : values) var += (v - mu) * (v - mu);
  const double sd = std::max(std::sqrt(var / n), 1e-8);
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - mu) / sd;
  return out;
}

double categorical_entropy(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs)
    if (p > 0) h -= p * std::log(p);
  return h;
}

PpoLoss ppo_loss(const Tensor& log_probs, const Tensor& values, const PpoBatch& batch, const PpoConfig& config) {
  const std::size_t n = batch.actions.size();
  if (log_probs.rank() != 2 || log_probs.dim(0) != n || log_probs.dim(1) != env::kNumActions || values.size() != n ||
      batch.old_log_probs.size() != n || batch.advantages.size() != n || batch.returns.size() != n) {
    throw ShapeError("ppo_loss: minibatch of " + std::to_string(n) + " does not match log-probs " +
                     to_string(log_probs.shape()) + " / values " + to_string(values.shape()));
  }
  std::vector<double> onehot(n * env::kNumActions, 0.0);
  for (std::size_t i = 0; i < n; ++i) onehot[i * env::kNumActions + batch.actions[i]] = 1.0;
  const std::vector<double> adv_values =
      config.normalize_advantages && n > 1 ? normalize(batch.advantages) : batch.advantages;

  const Tensor chosen = sum_last_axis(mul(log_probs, Tensor({n, env::kNumActions}, std::move(onehot))));
  const Tensor ratio = ad::exp(sub(chosen, Tensor({n}, batch.old_log_probs)));
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(ratio[i])) {
      std::ostringstream os;
      os << "non-finite probability ratio at row " << i << " (new log-prob " << chosen[i] << ", old log-prob "
         << batch.old_log_probs[i] << ", advantage " << adv_values[i] << ")";
      throw NumericError(os.str());
    }
  }
  const Tensor adv({n}, adv_values);
  const Tensor surrogate = mul(ratio, adv);
  const Tensor clipped = mul(clamp(ratio, 1.0 - config.clip, 1.0 + config.clip), adv);
  const Tensor policy_loss = scale(mean(minimum(surrogate, clipped)), -1.0);
  const Tensor err = sub(values, Tensor({n}, batch.returns));
  const Tensor value_loss = mean(mul(err, err));
  const Tensor entropy = scale(mean(sum_last_axis(mul(ad::exp(log_probs), log_probs))), -1.0);
  const Tensor total =
      sub(add(policy_loss, scale(value_loss, config.value_coef)), scale(entropy, config.entropy_coef));

  PpoLoss out;
  out.total = total;
  out.policy_loss = policy_loss.item();
  out.value_loss = value_loss.item();
  out.entropy = entropy.item();
  double clipped_count = 0.0, kl = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (std::abs(ratio[i] - 1.0) > config.clip) clipped_count += 1.0;
    kl += batch.old_log_probs[i] - chosen[i];
  }
  out.clip_fraction = clipped_count / static_cast<double>(n);
  out.approx_kl = kl / static_cast<double>(n);
  return out;
}

// Optimizer ----------------------------------------------------------------

double grad_norm(const nn::ParamList& params) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.impl().grad) sq += g * g;
  }
  return std::sqrt(sq);
}

void clip_grad_norm(const nn::ParamList& params, double max_norm, double* norm_out) {
  const double norm = grad_norm(params);
  if (norm_out) *norm_out = norm;
  if (!(norm > max_norm)) return;
  const double s = max_norm / (norm + 1e-6);
  for (const auto& p : params) {
    for (double& g : p.tensor.impl().grad) g *= s;
  }
}

Adam::Adam(nn::ParamList params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.size(), 0.0);
    v_.emplace_back(p.tensor.size(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& impl = params_[k].tensor.impl();
    if (impl.grad.empty()) continue;
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < impl.data.size(); ++i) {
      const double g = impl.grad[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      impl.data[i] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

void Adam::set_state(long t, std::vector<std::vector<double>> m, std::vector<std::vector<double>> v) {
  if (m.size() != params_.size() || v.size() != params_.size()) throw DataError("optimizer state does not match parameters");
  for (std::size_t k = 0; k < params_.size(); ++k) {
    if (m[k].size() != params_[k].tensor.size() || v[k].size() != params_[k].tensor.size()) {
      throw DataError("optimizer moment size mismatch for " + params_[k].name);
    }
  }
  t_ = t;
  m_ = std::move(m);
  v_ = std::move(v);
}

UpdateReport optimize(Adam& optimizer, std::span<const RolloutBuffer> buffers, const PpoConfig& config, Rng& rng,
                      const ChunkEvaluator& evaluate) {
  config.validate();
  std::vector<SequenceChunk> chunks;
  const std::size_t len = static_cast<std::size_t>(config.seq_len);
  for (std::size_t w = 0; w < buffers.size(); ++w) {
    if (!buffers[w].has_advantages()) throw StateError("optimize called before compute_gae");
    if (buffers[w].size() % len != 0) throw ConfigError("buffer length is not a multiple of ppo.seq_len");
    for (std::size_t s = 0; s < buffers[w].size(); s += len) chunks.push_back({w, s, len});
  }
  const std::size_t per_batch = static_cast<std::size_t>(config.minibatch) / len;
  if (chunks.empty() || chunks.size() % per_batch != 0) {
    throw ConfigError("rollout does not split into whole minibatches");
  }

  UpdateReport report;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(chunks.begin(), chunks.end());
    for (std::size_t first = 0; first < chunks.size(); first += per_batch) {
      const std::span<const SequenceChunk> mb(chunks.data() + first, per_batch);
      PpoBatch batch;
      for (std::size_t t = 0; t < len; ++t) {
        for (const auto& c : mb) {
          const auto& buf = buffers[c.worker];
          const std::size_t i = c.start + t;
          batch.actions.push_back(buf[i].action);
          batch.old_log_probs.push_back(buf[i].log_prob);
          batch.advantages.push_back(buf.advantages()[i]);
          batch.returns.push_back(buf.returns()[i]);
        }
      }
      optimizer.zero_grad();
      double norm = 0.0;
      PpoLoss loss;
      {
        Tape tape;
        const HeadOutputs heads = evaluate(mb);
        loss = ppo_loss(heads.log_probs, heads.values, batch, config);
        if (!std::isfinite(loss.total.item())) {
          std::ostringstream os;
          os << "non-finite PPO loss (policy " << loss.policy_loss << ", value " << loss.value_loss << ", entropy "
             << loss.entropy << ")";
          throw NumericError(os.str());
        }
        tape.backward(loss.total);
      }
      clip_grad_norm(optimizer.params(), config.max_grad_norm, &norm);
      if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
      optimizer.step();

      report.policy_loss += loss.policy_loss;
      report.value_loss += loss.value_loss;
      report.entropy += loss.entropy;
      report.total_loss += loss.total.item();
      report.clip_fraction += loss.clip_fraction;
      report.approx_kl += loss.approx_kl;
      report.grad_norm += norm;
      ++report.minibatches;
    }
  }
  const double n = report.minibatches;
  report.policy_loss /= n;
  report.value_loss /= n;
  report.entropy /= n;
  report.total_loss /= n;
  report.clip_fraction /= n;
  report.approx_kl /= n;
  report.grad_norm /= n;
  return report;
}

}  // namespace agsa::policy
