#pragma once

// Recurrent actor-critic and PPO machinery: GRU temporal encoder, categorical
// action head, value head, GAE, the clipped surrogate objective and an Adam
// update loop over recurrent sequence chunks.

#include <array>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "agsa/envsim.hpp"
#include "agsa/nn.hpp"

namespace agsa::policy {

using ad::Tensor;

struct PolicyParams {
  nn::GruParams gru;
  nn::LinearParams actor;   // hidden -> 4 logits
  nn::LinearParams critic;  // hidden -> 1
  std::size_t hidden_dim() const { return gru.hidden_dim(); }
  void collect(nn::ParamList& out, const std::string& prefix) const;
};

PolicyParams init_policy(std::size_t input_dim, std::size_t hidden_dim, Rng& rng);

struct HeadOutputs {
  Tensor log_probs;  // (B, 4)
  Tensor values;     // (B)
};

// Actor and critic heads over GRU outputs (B, hidden).
HeadOutputs policy_heads(const PolicyParams& p, const Tensor& hidden);

enum class ActMode { kSample, kGreedy };

struct ActResult {
  env::Action action = env::Action::kForward;
  double log_prob = 0.0;
  double value = 0.0;
  std::array<double, env::kNumActions> probs{};
  Tensor hidden;  // h_new
};

// Index drawn from a categorical distribution with one uniform draw.
int sample_categorical(std::span<const double> probs, Rng& rng);
// First index of the largest entry.
int argmax(std::span<const double> values);

// h_new = gru(fused, h_prev); action from the categorical over the actor logits.
ActResult act(const PolicyParams& p, const Tensor& fused, const Tensor& h_prev, ActMode mode, Rng& rng);

// Row-wise action selection over batched head outputs (no tape).
std::vector<ActResult> select_actions(const HeadOutputs& heads, const Tensor& hidden, ActMode mode, Rng& rng);

// ---------------------------------------------------------------------------

struct PpoConfig {
  double clip = 0.2;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  double gamma = 0.99;
  double lambda = 0.95;
  int epochs = 4;
  int minibatch = 64;  // transitions per minibatch
  int seq_len = 8;     // recurrent chunk length; divides the rollout segment
  int rollout_steps = 128;
  int num_envs = 8;
  double lr = 2.5e-4;
  double max_grad_norm = 0.5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  bool normalize_advantages = true;
  void validate() const;
  bool operator==(const PpoConfig&) const = default;
};

struct Transition {
  env::Observation observation;
  int action = 0;
  double log_prob = 0.0;
  double value = 0.0;
  double reward = 0.0;
  bool done = false;
  std::vector<double> hidden;  // GRU state fed into this step
};

class RolloutBuffer {
 public:
  explicit RolloutBuffer(std::size_t capacity = 0) : capacity_(capacity) {}

  void push(Transition t);
  void clear();
  bool full() const { return transitions_.size() == capacity_; }
  bool empty() const { return transitions_.empty(); }
  std::size_t size() const { return transitions_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Transition& operator[](std::size_t i) const { return transitions_[i]; }
  std::span<const Transition> transitions() const { return transitions_; }

  bool has_advantages() const { return has_advantages_; }
  std::span<const double> advantages() const { return advantages_; }
  std::span<const double> returns() const { return returns_; }
  void set_targets(std::vector<double> advantages, std::vector<double> returns);

 private:
  std::size_t capacity_;
  std::vector<Transition> transitions_;
  std::vector<double> advantages_;
  std::vector<double> returns_;
  bool has_advantages_ = false;
};

// delta_t = r_t + gamma V_{t+1} (1 - done_t) - V_t
// A_t     = delta_t + gamma lambda (1 - done_t) A_{t+1}
std::vector<double> gae_advantages(std::span<const double> rewards, std::span<const double> values,
                                   std::span<const bool> dones, double bootstrap_value, double gamma, double lambda);

// Fills advantages and returns R_t = A_t + V_t.
void compute_gae(RolloutBuffer& buffer, const PpoConfig& config, double bootstrap_value);

struct PpoBatch {
  std::vector<int> actions;
  std::vector<double> old_log_probs;
  std::vector<double> advantages;
  std::vector<double> returns;
};

struct PpoLoss {
  Tensor total;
  double policy_loss = 0.0;  // L_clip
  double value_loss = 0.0;   // L_V
  double entropy = 0.0;      // H
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
};

// total = L_clip + value_coef * L_V - entropy_coef * H
double combine_losses(double policy_loss, double value_loss, double entropy, const PpoConfig& config);

// Mean 0, std 1 with a 1e-8 std floor.
std::vector<double> normalize(std::span<const double> values);

// log_probs (B,4) and values (B) come from the current parameters.
PpoLoss ppo_loss(const Tensor& log_probs, const Tensor& values, const PpoBatch& batch, const PpoConfig& config);

double categorical_entropy(std::span<const double> probs);

// ---------------------------------------------------------------------------

void clip_grad_norm(const nn::ParamList& params, double max_norm, double* norm_out = nullptr);
double grad_norm(const nn::ParamList& params);

class Adam {
 public:
  Adam(nn::ParamList params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step();
  void zero_grad();

  const nn::ParamList& params() const { return params_; }
  long steps() const { return t_; }
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }
  void set_state(long t, std::vector<std::vector<double>> m, std::vector<std::vector<double>> v);

 private:
  nn::ParamList params_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// A contiguous run of one worker's segment, re-unrolled from the stored hidden
// state of its first transition.
struct SequenceChunk {
  std::size_t worker = 0;
  std::size_t start = 0;
  std::size_t length = 0;
};

// Evaluates the current parameters on a set of equal-length chunks. Rows of
// both outputs are time-major: row = t * chunks.size() + c.
using ChunkEvaluator = std::function<HeadOutputs(std::span<const SequenceChunk>)>;

struct UpdateReport {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double total_loss = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  double grad_norm = 0.0;  // before clipping, averaged over minibatches
  int minibatches = 0;
};

// PPO epochs over the buffers (one per worker, concatenated in worker order).
// Requires advantages; throws NumericError on a non-finite loss.
UpdateReport optimize(Adam& optimizer, std::span<const RolloutBuffer> buffers, const PpoConfig& config, Rng& rng,
                      const ChunkEvaluator& evaluate);

}  // namespace agsa::policy
