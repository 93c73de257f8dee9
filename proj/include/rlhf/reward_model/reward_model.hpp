#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "rlhf/reward_model/preference.hpp"
#include "rlhf/seq_model/policy.hpp"
#include "rlhf/seq_model/sampling.hpp"

namespace rlhf::reward_model {

using seq_model::PolicyModel;
using seq_model::TokenId;

struct RewardNorm {
  double shift = 0.0;
  double scale = 1.0;
};

struct RMTrainConfig {
  double lr = 1.77e-5;
  std::size_t batch_size = 8;  // 8 for style tasks, 32 for summarization
  std::size_t epochs = 1;
  bool dropout = false;
  bool train_backbone = false;

  static RMTrainConfig style() { return {}; }
  static RMTrainConfig summarization() { return {.batch_size = 32}; }
};

// r(x, y) = (w . e(x, y) + bias - shift) / scale, with e the backbone's final
// embedding. A RewardModel is an immutable snapshot once trained; training and
// normalization return new values. The backbone is shared, never mutated.
class RewardModel {
 public:
  RewardModel(std::shared_ptr<const PolicyModel> backbone, std::uint64_t seed);

  const PolicyModel& backbone() const { return *backbone_; }
  std::shared_ptr<const PolicyModel> backbone_ptr() const { return backbone_; }

  std::span<const double> head() const { return head_; }
  std::span<double> mutable_head() { return head_; }
  double bias() const { return bias_; }
  void set_head(std::vector<double> weights, double bias);
  const RewardNorm& norm() const { return norm_; }
  void set_norm(RewardNorm norm);

  double raw(std::span<const TokenId> x, std::span<const TokenId> y) const;
  double raw_from_embedding(std::span<const double> embedding) const;
  double score(std::span<const TokenId> x, std::span<const TokenId> y) const;
  double normalize_value(double raw_value) const {
    return (raw_value - norm_.shift) / norm_.scale;
  }

  // Head redrawn as N(0, 1/width), bias 0, norm reset to identity.
  RewardModel reinit_head(std::uint64_t seed) const;
  RewardModel with_backbone(std::shared_ptr<const PolicyModel> backbone) const;

  seq_model::Checkpoint to_checkpoint() const;
  static RewardModel from_checkpoint(const seq_model::Checkpoint& ck,
                                     std::shared_ptr<const PolicyModel> backbone);

 private:
  std::shared_ptr<const PolicyModel> backbone_;
  std::vector<double> head_;
  double bias_ = 0.0;
  RewardNorm norm_;
};

// -log softmax(rewards)[b]; the minimized form of the best-of-4 loss.
double softmax_nll(std::span<const double> rewards, int b);

// Mean over the batch of softmax_nll of the four normalized scores.
double preference_nll(const RewardModel& rm, std::span<const PreferenceRecord> batch);

struct HeadGradient {
  double loss = 0.0;
  std::vector<double> head;
  double bias = 0.0;
};

// Loss and its gradient w.r.t. the head weights and bias.
HeadGradient preference_nll_grad(const RewardModel& rm,
                                 std::span<const PreferenceRecord> batch);

struct RMTrainResult {
  RewardModel model;
  std::vector<double> batch_losses;
};

// One pass (per epoch) over a seeded shuffle, Adam on the head and, when
// train_backbone is set, on a private copy of the backbone.
RMTrainResult train_reward_model(const RewardModel& rm,
                                 std::span<const PreferenceRecord> dataset,
                                 const RMTrainConfig& config, std::uint64_t seed);

// Sets shift/scale from raw values so they have mean 0 and population
// variance 1. Throws on zero variance.
RewardModel normalize_from_raw(const RewardModel& rm, std::span<const double> raw_values);

// Draws x from contexts and y ~ rho(.|x) of length response_len, then
// normalizes on that sample.
RewardModel normalize_reward(const RewardModel& rm, const PolicyModel& rho,
                             const seq_model::ContextSet& contexts, std::size_t n_samples,
                             std::size_t response_len, std::uint64_t seed);

}  // namespace rlhf::reward_model
