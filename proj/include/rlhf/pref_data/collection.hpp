#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rlhf/ppo_trainer/ppo.hpp"
#include "rlhf/pref_data/query.hpp"
#include "rlhf/pref_data/schedule.hpp"
#include "rlhf/reward_model/reward_model.hpp"

namespace rlhf::pref_data {

struct CollectionMode {
  enum class Kind { kOffline, kBatched, kOnline };
  Kind kind = Kind::kOnline;
  std::size_t k_batches = 1;

  static CollectionMode offline() { return {Kind::kOffline, 1}; }
  static CollectionMode batched(std::size_t k) { return {Kind::kBatched, k}; }
  static CollectionMode online() { return {Kind::kOnline, 1}; }
  void validate() const;
};

// "offline", "online" or "batched:K".
std::string to_string(const CollectionMode& m);
CollectionMode collection_mode_from_string(const std::string& s);

// Label targets and retrain points for one mode. Offline uses N_r0 labels
// from the start; batched(k) asks for N_r/k more labels at the start of each
// of k equal episode segments; online follows l(n).
class CollectionPlan {
 public:
  CollectionPlan(LabelSchedule schedule, CollectionMode mode,
                 std::size_t outstanding = kOutstandingQueries);

  std::size_t target(std::size_t n) const;
  // Total requests that should have been issued by episode n.
  std::size_t request_target(std::size_t n) const;
  std::size_t total_labels() const;
  const std::vector<std::size_t>& retrain_points() const { return points_; }
  const LabelSchedule& schedule() const { return schedule_; }
  const CollectionMode& mode() const { return mode_; }

 private:
  LabelSchedule schedule_;
  CollectionMode mode_;
  std::size_t outstanding_;
  std::vector<std::size_t> points_;
};

// Written after each batch for crash recovery.
struct SchedulerState {
  std::size_t n = 0;
  std::size_t labels_collected = 0;
  std::size_t requests_issued = 0;
  std::size_t retrains_done = 0;

  nlohmann::json to_json() const;
  static SchedulerState from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static SchedulerState load(const std::filesystem::path& path);
};

// Where labels come from: the mock labeler answers at once, the labeling
// service answers whenever people submit.
class LabelSource {
 public:
  virtual ~LabelSource() = default;
  virtual void request(std::vector<Query> queries) = 0;
  // Labels committed since the previous call.
  virtual std::vector<PreferenceRecord> poll() = 0;
  virtual bool stop_requested() const { return false; }
};

class MockLabelSource final : public LabelSource {
 public:
  MockLabelSource(MockLabeler labeler, std::uint64_t seed);
  void request(std::vector<Query> queries) override;
  std::vector<PreferenceRecord> poll() override;

 private:
  MockLabeler labeler_;
  std::uint64_t seed_;
  std::size_t labeled_ = 0;
  std::vector<PreferenceRecord> ready_;
};

// Picks up an interrupted run. Collected labels are reused, never requested
// again; requests that were still unanswered are issued afresh.
struct RlhfResume {
  SchedulerState state;
  std::vector<PreferenceRecord> records;  // everything collected so far
  std::shared_ptr<const reward_model::RewardModel> reward_model;  // null before the first retrain
  std::size_t episodes = 0;
  std::optional<ppo_trainer::ValueEstimator> value;
};

struct RlhfConfig {
  LabelSchedule schedule;
  CollectionMode mode;
  std::size_t outstanding = kOutstandingQueries;
  double validation_fraction = 0.0;
  reward_model::RMTrainConfig rm;
  std::size_t norm_samples = 1000;
  ppo_trainer::PPOConfig ppo;  // episodes_total is taken from the schedule
  ppo_trainer::KLControllerState controller;
  std::uint64_t seed = 0;
  std::chrono::milliseconds poll_interval{200};

  const seq_model::Vocab* vocab = nullptr;  // required for records_path
  std::filesystem::path records_path;       // appended as labels arrive
  std::filesystem::path state_path;

  std::optional<RlhfResume> resume;  // pi0 is then the checkpointed policy

  std::function<bool()> stop;  // extra stop signal besides the label source
  std::function<void(const ppo_trainer::BatchRecord&, const PolicyModel&)> on_batch;
  std::function<void(std::size_t, const reward_model::RewardModel&)> on_retrain;
};

struct RlhfResult {
  std::unique_ptr<PolicyModel> policy;
  ppo_trainer::ValueEstimator value;
  std::shared_ptr<const reward_model::RewardModel> reward_model;
  std::vector<PreferenceRecord> records;
  std::vector<ppo_trainer::BatchRecord> ppo_log;
  ppo_trainer::KLControllerState controller;
  SchedulerState state;
  bool stopped = false;
  std::optional<double> validation_win_rate;
};

// Reward model from scratch on all labels so far: random head (seeded),
// one training pass, normalization under rho.
reward_model::RewardModel fit_reward_model(std::shared_ptr<const PolicyModel> rho,
                                           std::span<const PreferenceRecord> records,
                                           const seq_model::ContextSet& contexts,
                                           const reward_model::RMTrainConfig& rm_cfg,
                                           std::size_t norm_samples, std::size_t response_len,
                                           std::uint64_t seed);

// Full loop: label collection per the plan, reward-model retrains, and PPO
// from pi0 against the latest reward model.
RlhfResult run_rlhf(const PolicyModel& pi0, std::shared_ptr<const PolicyModel> rho,
                    const seq_model::ContextSet& contexts, LabelSource& labels,
                    const RlhfConfig& cfg);

}  // namespace rlhf::pref_data
