#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "rlhf/oracle_bench/oracle.hpp"
#include "rlhf/ppo_trainer/ppo.hpp"
#include "rlhf/pref_data/collection.hpp"
#include "rlhf/seq_model/tabular_lm.hpp"

namespace rlhf::oracle_bench {

// A small enumerable sentiment-like task: word vocabulary, random Markov rho,
// lexicon oracle, and fixed-length continuations of short contexts.
struct MockTaskConfig {
  std::vector<std::string> symbols{"great ", "good ", "fine ", "the ", "a ", "dull ", "bad ", "awful "};
  std::vector<double> weights{1.0, 0.6, 0.3, 0.0, 0.0, -0.3, -0.6, -1.0};
  std::size_t rho_order = 1;
  double rho_logit_scale = 1.5;
  std::uint64_t rho_seed = 0;
  std::size_t response_len = 4;
  std::size_t n_contexts = 4;
  std::size_t context_len = 1;
  // Policy context window; 0 means the full history (context + response).
  std::size_t policy_order = 0;
};

void to_json(nlohmann::json& j, const MockTaskConfig& c);
MockTaskConfig mock_task_from_json(const nlohmann::json& j, MockTaskConfig base = {});

struct MockTask {
  seq_model::Vocab vocab;
  std::shared_ptr<const seq_model::TabularLM> rho;
  seq_model::TabularLM pi0;  // rho re-expressed over the policy window
  ContextSet contexts;
  LexiconOracle oracle;
  std::size_t response_len = 0;
};

MockTask make_mock_task(const MockTaskConfig& cfg);

struct CurvePoint {
  std::size_t episode = 0;
  double oracle_reward = 0.0;  // exact, averaged over contexts
  double kl_nats = 0.0;        // exact
  double beta = 0.0;
};

struct ArmRun {
  std::string arm;         // "direct" or "rm"
  std::size_t labels = 0;  // 0 for the direct arm
  std::uint64_t seed = 0;
  std::vector<CurvePoint> curve;
  FrontierPoint final_point;
  std::unique_ptr<seq_model::PolicyModel> policy;
};

nlohmann::json to_json(const ArmRun& run);

struct MockExperimentConfig {
  MockTaskConfig task;
  ppo_trainer::PPOConfig ppo;
  ppo_trainer::KLControllerState controller{.beta = 0.1, .target_kl = 8.0};
  std::vector<std::size_t> label_counts{0};  // 0 is the direct arm
  pref_data::CollectionMode mode = pref_data::CollectionMode::online();
  double n_r0_fraction = 0.25;  // N_r0 = fraction * N_r (at least 1)
  std::size_t outstanding = 0;
  reward_model::RMTrainConfig rm;
  std::size_t norm_samples = 2000;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::size_t eval_every = 10;  // batches between curve points

  // Optimizer settings sized for the mock task (50k episodes, batch 64) rather
  // than the large-model presets, which barely move a table of this size.
  static MockExperimentConfig desk();
};

void to_json(nlohmann::json& j, const MockExperimentConfig& c);
MockExperimentConfig mock_experiment_from_json(const nlohmann::json& j,
                                               MockExperimentConfig base = {});

// One arm for one seed.
ArmRun run_arm(const MockTask& task, const MockExperimentConfig& cfg, std::size_t labels,
               std::uint64_t seed, const std::function<bool()>& stop = {});

// Every (label count, seed) pair; runs are reported as they finish.
std::vector<ArmRun> run_mock_experiment(const MockExperimentConfig& cfg,
                                        const std::function<void(const ArmRun&)>& on_run = {});

// How close a trained policy gets to pi_opt at its own KL.
struct Dominance {
  FrontierPoint policy;
  FrontierPoint optimal;  // exact pi_opt point at the policy's KL
  double reward_ratio = 0.0;
};

Dominance frontier_dominance(const seq_model::PolicyModel& pi, const MockTask& task);

}  // namespace rlhf::oracle_bench
