#include <chrono>
#include <fstream>
#include <thread>

#include "rlhf/oracle_bench/oracle.hpp"
#include "setup.hpp"

namespace rlhf::cli {
namespace {

using pref_data::Query;
using reward_model::Source;

constexpr const char* kPolicyFile = "policy.ckpt";
constexpr const char* kRewardFile = "reward_model.ckpt";
constexpr const char* kRecordsFile = "records.jsonl";
constexpr const char* kLogFile = "ppo_log.jsonl";
constexpr const char* kStateFile = "scheduler_state.json";

json merged(json a, const json& b) {
  a.update(b);
  return a;
}

// Pipeline sections layered over the task presets; empty objects keep them.
json pipeline_defaults() {
  return {{"mode", "online"},
          {"schedule", {{"n_r0", nullptr}, {"n_r", nullptr}, {"n_pi", nullptr}}},
          {"outstanding", pref_data::kOutstandingQueries},
          {"validation_fraction", 0.0},
          {"norm_samples", 1000},
          {"rm", json::object()},
          {"ppo", json::object()},
          {"controller", json::object()},
          {"poll_interval_ms", 200},
          {"checkpoint_every", 1},
          {"resume", false}};
}

// Mock runs default to the desk-scale label experiment; text tasks must say.
pref_data::LabelSchedule resolve_schedule(const json& c, const TaskSetup& t) {
  json s = c.at("schedule");
  if (t.kind == "mock") {
    if (s["n_r0"].is_null()) s["n_r0"] = 500;
    if (s["n_r"].is_null()) s["n_r"] = 2000;
    if (s["n_pi"].is_null()) s["n_pi"] = 50000;
  }
  return schedule_config(s);
}

void remove_if_present(const fs::path& p) {
  std::error_code ec;
  fs::remove(p, ec);
}

void save_atomic(const seq_model::Checkpoint& ck, const fs::path& path) {
  const fs::path tmp = path.string() + ".tmp";
  ck.save(tmp);
  fs::rename(tmp, path);
}

json policy_summary(const TaskSetup& t, const seq_model::PolicyModel& pi, std::uint64_t seed) {
  if (!t.oracle) return nullptr;
  const auto r = t.oracle_fn();
  if (t.kind == "mock") return oracle_bench::to_json(oracle_bench::policy_point(pi, *t.rho, r, t.contexts, t.response_len));
  return oracle_bench::to_json(
      oracle_bench::sampled_policy_point(pi, *t.rho, r, t.contexts, t.response_len, 1000, seed));
}

// Queries still waiting for labels; repeat tasks return several records each.
std::size_t unanswered(const pref_data::LabelSource& s) {
  if (const auto* l = dynamic_cast<const label_service::ServiceLabelSource*>(&s)) return l->pending();
  if (const auto* l = dynamic_cast<const label_service::RemoteLabelSource*>(&s)) return l->pending();
  return 0;
}

int collect(const RunContext& ctx) {
  const auto& c = ctx.config;
  const auto task = load_task(c);
  const auto spec = label_spec(c, task);
  const auto n_queries = get<std::size_t>(c, "n_queries");
  const auto vfrac = get<double>(c, "validation_fraction");
  if (n_queries == 0) throw ConfigError("n_queries must be positive");
  if (vfrac < 0.0 || vfrac > 1.0) throw ConfigError("validation_fraction must be in [0, 1]");
  if (vfrac > 0.0 && task.pi0_is_rho)
    throw ConfigError("validation queries compare two models; set 'reference' next to 'policy'");
  const auto poll = std::chrono::milliseconds(get<int>(c, "poll_interval_ms"));
  const pref_data::SamplingSpec sampling{task.response_len, task.ppo.constraint, task.ppo.max_attempts};

  prepare_out(ctx);
  install_stop_signals();
  const auto records_path = ctx.out / kRecordsFile;
  remove_if_present(records_path);
  auto labels = open_labels(spec, task, ctx.out, derive_seed(ctx.seed, 7));

  // The whole batch goes out at once, so collection never pauses midway.
  std::vector<Query> queries;
  std::size_t n_validation = 0;
  const Source tag = task.pi0_is_rho ? Source::kRho : Source::kPi;
  for (std::size_t i = 0; i < n_queries; ++i) {
    const auto& x = task.contexts.draw(derive_seed(derive_seed(ctx.seed, 1), i));
    const std::uint64_t ys = derive_seed(derive_seed(ctx.seed, 2), i);
    Rng coin(derive_seed(derive_seed(ctx.seed, 3), i));
    if (vfrac > 0.0 && coin.bernoulli(vfrac)) {
      queries.push_back(pref_data::make_validation_query(*task.rho, *task.pi0, x, sampling, ys));
      ++n_validation;
    } else {
      queries.push_back(pref_data::make_policy_query(*task.pi0, x, sampling, ys, tag));
    }
  }
  labels.source->request(std::move(queries));

  std::size_t got = 0;
  bool stopped = false;
  std::vector<pref_data::PreferenceRecord> all;
  for (;;) {
    auto fresh = labels.source->poll();
    if (!fresh.empty()) {
      reward_model::write_records(records_path, fresh, task.vocab, true);
      got += fresh.size();
      for (auto& r : fresh) all.push_back(std::move(r));
    }
    if (got >= n_queries && unanswered(*labels.source) == 0) break;
    if (labels.source->stop_requested() || interrupted()) {
      stopped = true;
      break;
    }
    std::this_thread::sleep_for(poll);
  }
  if (labels.crowd) labels.crowd->stop();

  std::vector<pref_data::PreferenceRecord> validation;
  for (const auto& r : all)
    if (r.is_validation) validation.push_back(r);
  json summary = {{"queries", n_queries}, {"validation_queries", n_validation}, {"records", got},
                  {"stopped", stopped}, {"labels", spec.kind}};
  if (!validation.empty()) summary["validation_win_rate"] = pref_data::win_rate(validation);
  write_json(ctx.out / "summary.json", summary);
  log_line("collected " + std::to_string(got) + " records into " + records_path.string());
  return stopped ? kStopped : kOk;
}

int rlhf(const RunContext& ctx) {
  const auto& c = ctx.config;
  const auto task = load_task(c);
  const auto spec = label_spec(c, task);

  pref_data::RlhfConfig cfg;
  cfg.schedule = resolve_schedule(c, task);
  cfg.mode = parse_section("mode", [&] { return pref_data::collection_mode_from_string(get<std::string>(c, "mode")); });
  cfg.outstanding = get<std::size_t>(c, "outstanding");
  cfg.validation_fraction = get<double>(c, "validation_fraction");
  if (cfg.validation_fraction < 0.0 || cfg.validation_fraction > 1.0)
    throw ConfigError("validation_fraction must be in [0, 1]");
  cfg.norm_samples = get<std::size_t>(c, "norm_samples");
  cfg.rm = rm_config(c.at("rm"), task.rm);
  cfg.ppo = ppo_section(c.at("ppo"), task.ppo, &task.vocab);
  cfg.ppo.episodes_total = cfg.schedule.n_pi;
  cfg.controller = controller_config(c.at("controller"), task.controller);
  cfg.seed = ctx.seed;
  cfg.poll_interval = std::chrono::milliseconds(get<int>(c, "poll_interval_ms"));
  cfg.vocab = &task.vocab;
  cfg.records_path = ctx.out / kRecordsFile;
  cfg.state_path = ctx.out / kStateFile;
  cfg.ppo.log_path = ctx.out / kLogFile;
  cfg.ppo.checkpoint_path = ctx.out / kPolicyFile;
  cfg.ppo.checkpoint_every = get<std::size_t>(c, "checkpoint_every");
  parse_section("ppo", [&] { cfg.ppo.validate(); return 0; });

  const bool resume = get<bool>(c, "resume");
  std::unique_ptr<seq_model::PolicyModel> start_policy;
  if (resume) {
    for (const char* f : {kPolicyFile, kStateFile})
      if (!fs::exists(ctx.out / f)) throw ConfigError("--resume: " + (ctx.out / f).string() + " not found");
    auto ck = parse_section("resume", [&] { return ppo_trainer::load_ppo_checkpoint(ctx.out / kPolicyFile); });
    pref_data::RlhfResume r;
    r.state = parse_section("resume", [&] { return pref_data::SchedulerState::load(ctx.out / kStateFile); });
    if (fs::exists(cfg.records_path))
      r.records = parse_section("resume", [&] { return reward_model::read_records(cfg.records_path, task.vocab); });
    if (fs::exists(ctx.out / kRewardFile)) {
      const auto rk = seq_model::Checkpoint::load(ctx.out / kRewardFile);
      r.reward_model = std::make_shared<const reward_model::RewardModel>(
          reward_model::RewardModel::from_checkpoint(rk, task.rho));
    }
    r.episodes = ck.episodes;
    r.value = ck.value;
    cfg.controller = ck.controller;
    start_policy = std::move(ck.policy);
    cfg.resume = std::move(r);
    log_line("resuming at episode " + std::to_string(cfg.resume->episodes) + " with " +
             std::to_string(cfg.resume->records.size()) + " labels");
  }

  prepare_out(ctx);
  install_stop_signals();
  task.vocab.save(ctx.out / "vocab.txt");
  if (!resume)
    for (const char* f : {kPolicyFile, kRewardFile, kRecordsFile, kLogFile, kStateFile}) remove_if_present(ctx.out / f);
  auto labels = open_labels(spec, task, ctx.out, derive_seed(ctx.seed, 7));

  cfg.stop = [] { return interrupted(); };
  std::size_t retrains = cfg.resume ? cfg.resume->state.retrains_done : 0;
  cfg.on_retrain = [&](std::size_t n, const reward_model::RewardModel& rm) {
    save_atomic(rm.to_checkpoint(), ctx.out / kRewardFile);
    log_line("reward model training " + std::to_string(++retrains) + " (" + std::to_string(n) + " labels in)");
  };
  std::size_t batches = 0;
  cfg.on_batch = [&](const ppo_trainer::BatchRecord& r, const seq_model::PolicyModel&) {
    if (++batches % 50 == 0)
      log_line("episode " + std::to_string(r.episode) + " kl " + std::to_string(r.kl_nats) + " beta " +
               std::to_string(r.beta));
  };

  const auto& pi0 = start_policy ? *start_policy : *task.pi0;
  auto res = pref_data::run_rlhf(pi0, task.rho, task.contexts, *labels.source, cfg);
  if (labels.crowd) labels.crowd->stop();

  json summary = {{"task", task.kind},
                  {"mode", pref_data::to_string(cfg.mode)},
                  {"stopped", res.stopped},
                  {"episodes", res.state.n},
                  {"labels", res.state.labels_collected},
                  {"retrains", res.state.retrains_done},
                  {"beta", res.controller.beta},
                  {"validation_win_rate", res.validation_win_rate ? json(*res.validation_win_rate) : json(nullptr)},
                  {"oracle", policy_summary(task, *res.policy, derive_seed(ctx.seed, 9))}};
  if (!res.ppo_log.empty()) summary["final_batch"] = ppo_trainer::to_json(res.ppo_log.back());
  write_json(ctx.out / "summary.json", summary);
  if (res.stopped) {
    log_line("stopped at episode " + std::to_string(res.state.n) + "; rerun with --resume to continue");
    return kStopped;
  }
  log_line("done: " + std::to_string(res.state.n) + " episodes, " + std::to_string(res.state.labels_collected) +
           " labels, " + std::to_string(res.state.retrains_done) + " reward model trainings");
  return kOk;
}

void task_flags(CLI::App& app, json& flags) {
  flag_value<std::string>(app, "--task", flags, "task", "mock, style or summarize");
  flag_value<std::string>(app, "--policy", flags, "policy", "Policy checkpoint");
  flag_value<std::string>(app, "--reference", flags, "reference", "Reference model (default: the policy)");
  flag_value<std::string>(app, "--vocab", flags, "vocab", "Vocabulary file");
  flag_value<std::string>(app, "--contexts", flags, "contexts", "Contexts, one per line");
  flag_value<std::string>(app, "--oracle", flags, "oracle", "Lexicon oracle JSON for mock or crowd labels");
  flag_value<double>(app, "--temperature", flags, "temperature", "Sampling temperature (task preset if unset)");
  flag_value<std::string>(app, "--constraint", flags, "constraint", "period or newline");
  flag_value<std::string>(app, "--labels", flags, "labels", "mock, crowd or service");
}

}  // namespace

std::vector<CommandSpec> rlhf_commands() {
  const json collect_defaults = merged(merged(task_defaults(), label_defaults()),
                                       {{"seed", 0}, {"n_queries", 100}, {"validation_fraction", 0.0},
                                        {"poll_interval_ms", 200}});
  const json rlhf_defaults = merged(merged(merged(task_defaults(), label_defaults()), pipeline_defaults()),
                                    {{"seed", 0}});
  return {
      {"collect", "Sample best-of-4 queries from a policy and gather labels", collect_defaults,
       [](CLI::App& app, json& flags) {
         task_flags(app, flags);
         flag_value<std::size_t>(app, "--n-queries", flags, "n_queries", "Number of queries");
         flag_value<double>(app, "--validation-fraction", flags, "validation_fraction",
                            "Share of two-reference, two-policy queries");
       },
       collect},
      {"rlhf", "Reward-model training and PPO with label collection on a schedule", rlhf_defaults,
       [](CLI::App& app, json& flags) {
         task_flags(app, flags);
         flag_value<std::string>(app, "--mode", flags, "mode", "offline, online or batched:K");
         flag_switch(app, "--resume", flags, "resume", "Continue an interrupted run in --out");
       },
       rlhf},
  };
}

}  // namespace rlhf::cli
