#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rlhf/common/adam.hpp"
#include "rlhf/ppo_trainer/kl_control.hpp"
#include "rlhf/reward_model/reward_model.hpp"

namespace rlhf::ppo_trainer {

using seq_model::SampleConstraint;
using seq_model::TokenSeq;

using RewardFn = std::function<double(std::span<const TokenId>, std::span<const TokenId>)>;

RewardFn reward_fn(std::shared_ptr<const reward_model::RewardModel> rm);

inline constexpr double kConstraintPenalty = -1.0;

// What the -1 replaces when a continuation misses its constraint: the raw
// score only (the KL term still applies) or the whole shaped return.
enum class PenaltyMode { kRawReward, kShapedReturn };

// kConstraintPenalty when y misses the constraint, otherwise nullopt.
std::optional<double> constraint_penalty(std::span<const TokenId> y,
                                         const SampleConstraint& constraint);

// Period between tokens 16 and 24, newline between tokens 55 and 75
// (1-based token counts, so 0-based windows [15, 23] and [54, 74]).
SampleConstraint period_constraint(TokenId period);
SampleConstraint newline_constraint(TokenId newline);

struct PPOConfig {
  double gamma = 1.0;
  std::size_t ppo_epochs = 4;
  std::size_t minibatches_per_batch = 1;
  double clip_ratio = 0.2;
  double policy_lr = 1.41e-5;
  double value_lr = 0.0;  // 0 means policy_lr
  double value_coef = 0.5;
  bool normalize_advantages = true;
  std::size_t episodes_total = 0;
  std::size_t batch_size = 1024;
  std::size_t response_len = 24;
  std::optional<SampleConstraint> constraint;
  std::size_t max_attempts = seq_model::kDefaultMaxAttempts;
  PenaltyMode penalty_mode = PenaltyMode::kRawReward;
  std::size_t n_threads = 1;

  // Training-loop outputs; empty paths disable them.
  std::filesystem::path log_path;
  std::filesystem::path checkpoint_path;
  std::size_t checkpoint_every = 0;  // batches; 0 writes only at the end

  void validate() const;
  static PPOConfig style();
  static PPOConfig summarization();
};

void to_json(nlohmann::json& j, const PPOConfig& c);
// Reads any subset of fields over the given defaults.
PPOConfig ppo_config_from_json(const nlohmann::json& j, PPOConfig base = {});

struct Episode {
  TokenSeq x;
  TokenSeq y;
  std::vector<double> logp_pi;   // per token, at rollout time
  std::vector<double> logp_rho;  // per token
  double raw_reward = 0.0;       // reward model score, or the penalty
  double shaped_return = 0.0;
  bool constraint_satisfied = true;
  std::vector<double> values;    // per token, at rollout time

  double log_ratio() const;
};

// Linear per-token value head over detached backbone features.
class ValueEstimator {
 public:
  ValueEstimator() = default;
  explicit ValueEstimator(std::size_t feature_width);

  std::size_t width() const { return params_.empty() ? 0 : params_.size() - 1; }
  double value(std::span<const double> features) const;
  std::vector<double> values(const seq_model::TokenEval& eval) const;
  // grad += coef * d value / d params
  void accumulate_grad(std::span<const double> features, double coef,
                       std::span<double> grad) const;

  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }

 private:
  std::vector<double> params_;  // weights then bias
};

// Samples batch_size episodes with per-episode seeded streams; episodes are
// independent so the result does not depend on n_threads.
std::vector<Episode> rollout(const PolicyModel& pi, const PolicyModel& rho,
                             const RewardFn& reward, const ValueEstimator* value,
                             const ContextSet& contexts, std::size_t batch_size,
                             const PPOConfig& cfg, double beta, std::uint64_t seed);

struct PPOStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;  // mean of old minus new token log-prob, last epoch
  std::size_t updates = 0;
};

class PPOOptimizer {
 public:
  PPOOptimizer(const PolicyModel& pi, const ValueEstimator& value, const PPOConfig& cfg);
  Adam& policy() { return policy_; }
  Adam& value() { return value_; }

 private:
  Adam policy_;
  Adam value_;
};

// Clipped-surrogate update: cfg.ppo_epochs passes over the batch, split into
// cfg.minibatches_per_batch minibatches. Throws TrainingDiverged on NaN.
PPOStats ppo_step(PolicyModel& pi, ValueEstimator& value, const std::vector<Episode>& batch,
                  const PPOConfig& cfg, PPOOptimizer& opt, std::uint64_t seed = 0);

struct BatchRecord {
  std::size_t episode = 0;  // episodes completed after this batch
  double mean_reward = 0.0;      // mean shaped return
  double mean_raw_reward = 0.0;  // mean score before the KL term
  double kl_nats = 0.0;
  double beta = 0.0;        // beta used for this batch
  double constraint_violation_rate = 0.0;
  PPOStats stats;
};

nlohmann::json to_json(const BatchRecord& r);

struct TrainHooks {
  // Before each batch, with the episode count so far. May swap the reward.
  std::function<void(std::size_t, const PolicyModel&, RewardFn&)> before_batch;
  // After the last batch (also after a stop).
  std::function<void(std::size_t, const PolicyModel&, RewardFn&)> on_finish;
  std::function<void(const BatchRecord&, const PolicyModel&)> on_batch;
  // Polled before each batch; true halts training with a checkpoint.
  std::function<bool()> stop_requested;
};

struct TrainResult {
  std::unique_ptr<PolicyModel> policy;
  ValueEstimator value;
  KLControllerState controller;
  std::vector<BatchRecord> log;
  std::size_t episodes = 0;
  bool stopped = false;
};

// Resumption point of an interrupted run; pi0 is then the checkpointed policy.
// Adam moments are not restored.
struct TrainStart {
  std::size_t episodes = 0;
  std::optional<ValueEstimator> value;
};

TrainResult train(const PolicyModel& pi0, const PolicyModel& rho, RewardFn reward,
                  const ContextSet& contexts, const PPOConfig& cfg,
                  KLControllerState controller, const TrainHooks& hooks = {},
                  std::uint64_t seed = 0, const TrainStart& start = {});

// Policy checkpoint plus a value-head array and a "ppo" config section.
void save_ppo_checkpoint(const PolicyModel& pi, const ValueEstimator& value,
                         const KLControllerState& controller, std::size_t episodes,
                         const std::filesystem::path& path);

struct PPOCheckpoint {
  std::unique_ptr<PolicyModel> policy;
  ValueEstimator value;
  KLControllerState controller;
  std::size_t episodes = 0;
};
PPOCheckpoint load_ppo_checkpoint(const std::filesystem::path& path);

}  // namespace rlhf::ppo_trainer
