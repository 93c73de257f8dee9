#include "rlhf/oracle_bench/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "rlhf/common/random.hpp"

namespace rlhf::oracle_bench {

void to_json(nlohmann::json& j, const MockTaskConfig& c) {
  j = {{"symbols", c.symbols},
       {"weights", c.weights},
       {"rho_order", c.rho_order},
       {"rho_logit_scale", c.rho_logit_scale},
       {"rho_seed", c.rho_seed},
       {"response_len", c.response_len},
       {"n_contexts", c.n_contexts},
       {"context_len", c.context_len},
       {"policy_order", c.policy_order}};
}

MockTaskConfig mock_task_from_json(const nlohmann::json& j, MockTaskConfig c) {
  c.symbols = j.value("symbols", c.symbols);
  c.weights = j.value("weights", c.weights);
  c.rho_order = j.value("rho_order", c.rho_order);
  c.rho_logit_scale = j.value("rho_logit_scale", c.rho_logit_scale);
  c.rho_seed = j.value("rho_seed", c.rho_seed);
  c.response_len = j.value("response_len", c.response_len);
  c.n_contexts = j.value("n_contexts", c.n_contexts);
  c.context_len = j.value("context_len", c.context_len);
  c.policy_order = j.value("policy_order", c.policy_order);
  return c;
}

MockTask make_mock_task(const MockTaskConfig& cfg) {
  if (cfg.weights.size() != cfg.symbols.size())
    throw std::invalid_argument("mock task: one weight per symbol");
  if (cfg.response_len == 0 || cfg.n_contexts == 0)
    throw std::invalid_argument("mock task: empty responses or contexts");
  const std::size_t v = cfg.symbols.size();
  auto rho = std::make_shared<seq_model::TabularLM>(
      seq_model::TabularLM::random(v, cfg.rho_order, cfg.rho_seed, cfg.rho_logit_scale));

  // Distinct contexts drawn from rho itself.
  std::set<TokenSeq> seen;
  std::vector<TokenSeq> contexts;
  double space = std::pow(static_cast<double>(v), static_cast<double>(cfg.context_len));
  const std::size_t want = static_cast<std::size_t>(std::min(space, static_cast<double>(cfg.n_contexts)));
  for (std::uint64_t i = 0; contexts.size() < want && i < 100000; ++i) {
    TokenSeq x = cfg.context_len == 0
                     ? TokenSeq{}
                     : seq_model::sample(*rho, TokenSeq{}, cfg.context_len,
                                         derive_seed(cfg.rho_seed, 1000 + i));
    if (seen.insert(x).second) contexts.push_back(std::move(x));
  }

  const std::size_t order =
      cfg.policy_order == 0 ? cfg.context_len + cfg.response_len - 1 : cfg.policy_order;
  MockTask t{seq_model::Vocab(cfg.symbols), rho,
             rho->with_order(std::max(order, cfg.rho_order)),
             ContextSet(std::move(contexts)), {}, cfg.response_len};
  for (std::size_t i = 0; i < v; ++i)
    if (cfg.weights[i] != 0.0) t.oracle.weights[static_cast<TokenId>(i)] = cfg.weights[i];
  return t;
}

nlohmann::json to_json(const ArmRun& run) {
  nlohmann::json curve = nlohmann::json::array();
  for (const auto& c : run.curve)
    curve.push_back({{"episode", c.episode},
                     {"oracle_reward", c.oracle_reward},
                     {"kl_nats", c.kl_nats},
                     {"beta", c.beta}});
  return {{"arm", run.arm},
          {"labels", run.labels},
          {"seed", run.seed},
          {"final", to_json(run.final_point)},
          {"curve", curve}};
}

void to_json(nlohmann::json& j, const MockExperimentConfig& c) {
  j = {{"task", c.task},
       {"ppo", c.ppo},
       {"beta", c.controller.beta},
       {"target_kl", c.controller.target_kl ? nlohmann::json(*c.controller.target_kl)
                                            : nlohmann::json(nullptr)},
       {"label_counts", c.label_counts},
       {"mode", pref_data::to_string(c.mode)},
       {"n_r0_fraction", c.n_r0_fraction},
       {"outstanding", c.outstanding},
       {"rm_lr", c.rm.lr},
       {"rm_batch_size", c.rm.batch_size},
       {"norm_samples", c.norm_samples},
       {"seeds", c.seeds},
       {"eval_every", c.eval_every}};
}

MockExperimentConfig mock_experiment_from_json(const nlohmann::json& j, MockExperimentConfig c) {
  if (j.contains("task")) c.task = mock_task_from_json(j.at("task"), c.task);
  if (j.contains("ppo")) c.ppo = ppo_trainer::ppo_config_from_json(j.at("ppo"), c.ppo);
  c.controller.beta = j.value("beta", c.controller.beta);
  if (j.contains("target_kl")) {
    if (j.at("target_kl").is_null()) c.controller.target_kl.reset();
    else c.controller.target_kl = j.at("target_kl").get<double>();
  }
  c.label_counts = j.value("label_counts", c.label_counts);
  if (j.contains("mode")) c.mode = pref_data::collection_mode_from_string(j.at("mode"));
  c.n_r0_fraction = j.value("n_r0_fraction", c.n_r0_fraction);
  c.outstanding = j.value("outstanding", c.outstanding);
  c.rm.lr = j.value("rm_lr", c.rm.lr);
  c.rm.batch_size = j.value("rm_batch_size", c.rm.batch_size);
  c.norm_samples = j.value("norm_samples", c.norm_samples);
  c.seeds = j.value("seeds", c.seeds);
  c.eval_every = j.value("eval_every", c.eval_every);
  return c;
}

MockExperimentConfig MockExperimentConfig::desk() {
  MockExperimentConfig c;
  c.ppo.policy_lr = 0.01;
  c.ppo.value_lr = 0.01;
  c.ppo.batch_size = 64;
  c.ppo.episodes_total = 50000;
  c.rm.lr = 0.05;
  return c;
}

ArmRun run_arm(const MockTask& task, const MockExperimentConfig& cfg, std::size_t labels,
               std::uint64_t seed, const std::function<bool()>& stop) {
  ArmRun run;
  run.arm = labels == 0 ? "direct" : "rm";
  run.labels = labels;
  run.seed = seed;
  const RewardFn oracle = as_reward(task.oracle);
  ppo_trainer::PPOConfig ppo = cfg.ppo;
  ppo.response_len = task.response_len;

  std::size_t batches = 0;
  auto evaluate = [&](std::size_t episode, double beta, const seq_model::PolicyModel& pi) {
    const auto p = policy_point(pi, *task.rho, oracle, task.contexts, task.response_len);
    run.curve.push_back({episode, p.reward, p.kl_nats, beta});
  };
  evaluate(0, cfg.controller.beta, task.pi0);
  auto on_batch = [&](const ppo_trainer::BatchRecord& r, const seq_model::PolicyModel& pi) {
    ++batches;
    if (cfg.eval_every > 0 && batches % cfg.eval_every == 0) evaluate(r.episode, r.beta, pi);
  };

  if (labels == 0) {
    ppo_trainer::TrainHooks hooks;
    hooks.on_batch = on_batch;
    if (stop) hooks.stop_requested = stop;
    auto out = ppo_trainer::train(task.pi0, *task.rho, oracle, task.contexts, ppo,
                                  cfg.controller, hooks, seed);
    run.policy = std::move(out.policy);
  } else {
    pref_data::RlhfConfig rc;
    rc.schedule = {std::max<std::size_t>(1, static_cast<std::size_t>(
                                                 std::lround(cfg.n_r0_fraction * labels))),
                   labels, ppo.episodes_total};
    rc.mode = cfg.mode;
    rc.outstanding = cfg.outstanding;
    rc.rm = cfg.rm;
    rc.norm_samples = cfg.norm_samples;
    rc.ppo = ppo;
    rc.controller = cfg.controller;
    rc.seed = seed;
    rc.on_batch = on_batch;
    rc.stop = stop;
    pref_data::MockLabelSource src({oracle}, derive_seed(seed, 77));
    auto out = pref_data::run_rlhf(task.pi0, task.rho, task.contexts, src, rc);
    run.policy = std::move(out.policy);
  }
  run.final_point = policy_point(*run.policy, *task.rho, oracle, task.contexts, task.response_len);
  if (run.curve.back().episode != ppo.episodes_total)
    run.curve.push_back({ppo.episodes_total, run.final_point.reward, run.final_point.kl_nats, 0.0});
  return run;
}

std::vector<ArmRun> run_mock_experiment(const MockExperimentConfig& cfg,
                                        const std::function<void(const ArmRun&)>& on_run) {
  const MockTask task = make_mock_task(cfg.task);
  std::vector<ArmRun> runs;
  for (std::size_t labels : cfg.label_counts) {
    for (std::uint64_t seed : cfg.seeds) {
      runs.push_back(run_arm(task, cfg, labels, seed));
      if (on_run) on_run(runs.back());
    }
  }
  return runs;
}

Dominance frontier_dominance(const seq_model::PolicyModel& pi, const MockTask& task) {
  const RewardFn oracle = as_reward(task.oracle);
  Dominance d;
  d.policy = policy_point(pi, *task.rho, oracle, task.contexts, task.response_len);
  d.optimal = kl_matched_point(*task.rho, oracle, task.contexts, task.response_len,
                               d.policy.kl_nats);
  d.reward_ratio = d.policy.reward / d.optimal.reward;
  return d;
}

}  // namespace rlhf::oracle_bench
