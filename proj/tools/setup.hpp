#pragma once

#include <memory>
#include <optional>
#include <string>

#include "cli.hpp"
#include "rlhf/label_service/label_source.hpp"
#include "rlhf/oracle_bench/oracle.hpp"

namespace rlhf::cli {

// Models, contexts and presets shared by collect, rlhf and frontier.
struct TaskSetup {
  std::string kind;  // mock, style or summarize
  seq_model::Vocab vocab;
  std::shared_ptr<const seq_model::PolicyModel> rho;
  std::unique_ptr<seq_model::PolicyModel> pi0;
  bool pi0_is_rho = true;
  seq_model::ContextSet contexts;
  std::optional<oracle_bench::LexiconOracle> oracle;
  std::size_t response_len = 0;
  double temperature = 1.0;

  ppo_trainer::PPOConfig ppo;
  reward_model::RMTrainConfig rm;
  ppo_trainer::KLControllerState controller;

  oracle_bench::RewardFn oracle_fn() const;
};

// Config fields read by load_task; commands merge them into their defaults.
json task_defaults();
TaskSetup load_task(const json& c);

json label_defaults();

// Label source chosen by the "labels" field, validated before any side effect.
struct LabelSpec {
  std::string kind;  // mock, crowd or service
  double noise = 0.0;
  std::size_t crowd_labelers = 5;
  label_service::ServiceConfig crowd_service;
  label_service::RemoteOptions remote;
};

LabelSpec label_spec(const json& c, const TaskSetup& task);

// Owns whatever backs the source; members are destroyed crowd first.
struct OpenLabels {
  std::unique_ptr<label_service::LabelService> service;
  std::unique_ptr<pref_data::LabelSource> source;
  std::unique_ptr<label_service::MockCrowd> crowd;
};

OpenLabels open_labels(const LabelSpec& spec, const TaskSetup& task, const fs::path& out,
                       std::uint64_t seed);

}  // namespace rlhf::cli
