#include "setup.hpp"

#include <fstream>

#include "rlhf/label_service/server.hpp"
#include "rlhf/oracle_bench/experiment.hpp"

namespace rlhf::cli {

using seq_model::PolicyModel;

oracle_bench::RewardFn TaskSetup::oracle_fn() const {
  if (!oracle) throw ConfigError("this command needs an oracle lexicon (config field 'oracle')");
  return oracle_bench::as_reward(*oracle);
}

json task_defaults() {
  json mock;
  oracle_bench::to_json(mock, oracle_bench::MockTaskConfig{});
  return {{"task", "mock"},
          {"mock", mock},
          {"policy", nullptr},
          {"reference", nullptr},
          {"vocab", nullptr},
          {"contexts", nullptr},
          {"oracle", nullptr},
          {"temperature", nullptr},
          {"response_len", nullptr},
          {"constraint", nullptr}};
}

namespace {

std::unique_ptr<PolicyModel> load_policy(const fs::path& p) {
  return parse_section("model " + p.string(), [&] { return seq_model::load_model(p); });
}

void check_vocab(const PolicyModel& m, const seq_model::Vocab& v, const std::string& what) {
  if (m.vocab_size() != v.size())
    throw ConfigError(what + " has " + std::to_string(m.vocab_size()) + " symbols, vocabulary has " +
                      std::to_string(v.size()));
}

}  // namespace

TaskSetup load_task(const json& c) {
  TaskSetup t;
  t.kind = get<std::string>(c, "task");
  const auto policy = optional_path(c, "policy");
  const auto reference = optional_path(c, "reference");
  if (t.kind == "mock") {
    const auto mc = parse_section("mock", [&] { return oracle_bench::mock_task_from_json(c.at("mock")); });
    auto task = parse_section("mock", [&] { return oracle_bench::make_mock_task(mc); });
    const auto desk = oracle_bench::MockExperimentConfig::desk();
    t.vocab = task.vocab;
    t.temperature = c.at("temperature").is_null() ? 1.0 : get<double>(c, "temperature");
    if (!(t.temperature > 0.0)) throw ConfigError("temperature must be positive");
    t.rho = std::shared_ptr<const PolicyModel>(scaled(*task.rho, t.temperature));
    if (reference) {
      t.rho = std::shared_ptr<const PolicyModel>(load_policy(*reference));
      check_vocab(*t.rho, t.vocab, "reference");
    }
    t.pi0_is_rho = !policy;
    t.pi0 = policy ? load_policy(*policy) : scaled(task.pi0, t.temperature);
    check_vocab(*t.pi0, t.vocab, "policy");
    t.contexts = task.contexts;
    t.oracle = task.oracle;
    t.response_len = task.response_len;
    t.ppo = desk.ppo;
    t.ppo.episodes_total = 0;
    t.rm = desk.rm;
    t.controller = desk.controller;
  } else if (t.kind == "style" || t.kind == "summarize") {
    const bool style = t.kind == "style";
    if (!policy) throw ConfigError("task " + t.kind + " needs a policy checkpoint (config field 'policy')");
    t.vocab = load_vocab(existing_path(c, "vocab"));
    t.contexts = load_contexts(existing_path(c, "contexts"), t.vocab);
    t.temperature = c.at("temperature").is_null() ? (style ? 0.7 : 0.5) : get<double>(c, "temperature");
    if (!(t.temperature > 0.0)) throw ConfigError("temperature must be positive");
    auto base = load_policy(reference ? *reference : *policy);
    check_vocab(*base, t.vocab, "policy");
    t.rho = std::shared_ptr<const PolicyModel>(scaled(*base, t.temperature));
    t.pi0_is_rho = !reference;
    t.pi0 = reference ? load_policy(*policy) : t.rho->clone();
    check_vocab(*t.pi0, t.vocab, "policy");
    t.ppo = style ? ppo_trainer::PPOConfig::style() : ppo_trainer::PPOConfig::summarization();
    t.rm = style ? reward_model::RMTrainConfig::style() : reward_model::RMTrainConfig::summarization();
    t.controller = {.beta = style ? 0.1 : 0.03};
    t.response_len = t.ppo.response_len;
    if (const auto o = optional_path(c, "oracle")) {
      std::ifstream in(*o);
      t.oracle = parse_section("oracle " + o->string(),
                               [&] { return oracle_bench::lexicon_from_json(json::parse(in), t.vocab); });
    }
  } else {
    throw ConfigError("task must be mock, style or summarize, got '" + t.kind + "'");
  }
  if (!c.at("response_len").is_null()) t.response_len = get<std::size_t>(c, "response_len");
  if (t.response_len == 0) throw ConfigError("response_len must be positive");
  t.ppo.response_len = t.response_len;

  // "period" and "newline" name the two preset windows; an object spells one out.
  const auto& con = c.at("constraint");
  if (con.is_string()) {
    const auto name = con.get<std::string>();
    const std::string sym = name == "period" ? "." : name == "newline" ? "\n" : "";
    if (sym.empty()) throw ConfigError("constraint must be period, newline or an object");
    const auto id = t.vocab.find(sym);
    if (!id) throw ConfigError("constraint " + name + ": symbol not in vocabulary");
    t.ppo.constraint = name == "period" ? ppo_trainer::period_constraint(*id)
                                        : ppo_trainer::newline_constraint(*id);
  } else if (!con.is_null()) {
    t.ppo.constraint = constraint_config(con, &t.vocab);
  }
  if (t.ppo.constraint && t.ppo.constraint->window_hi >= t.response_len)
    throw ConfigError("constraint window ends past response_len");
  return t;
}

json label_defaults() {
  return {{"labels", "mock"},
          {"label_noise", 0.0},
          {"crowd", {{"labelers", 5}, {"repeat_fraction", 0.05}}},
          {"service", {{"url", nullptr}, {"log", nullptr}, {"max_retries", 5}, {"backoff_ms", 200},
                       {"majority_vote", false}}}};
}

LabelSpec label_spec(const json& c, const TaskSetup& task) {
  LabelSpec s;
  s.kind = get<std::string>(c, "labels");
  s.noise = get<double>(c, "label_noise");
  if (s.kind == "mock" || s.kind == "crowd") {
    if (!task.oracle) throw ConfigError(s.kind + " labels need an oracle lexicon (config field 'oracle')");
    if (s.noise < 0.0 || s.noise > 1.0) throw ConfigError("label_noise must be in [0, 1]");
    const auto& cr = c.at("crowd");
    s.crowd_labelers = get<std::size_t>(cr, "labelers");
    if (s.crowd_labelers == 0) throw ConfigError("crowd.labelers must be positive");
    s.crowd_service.repeat_fraction = get<double>(cr, "repeat_fraction");
    s.crowd_service.fsync = false;
    parse_section("crowd", [&] { s.crowd_service.validate(); return 0; });
  } else if (s.kind == "service") {
    const auto& sv = c.at("service");
    if (sv.at("url").is_null()) {
      const auto bind = label_service::bind_from_env();
      s.remote.url = "http://" + bind.host + ":" + std::to_string(bind.port);
    } else {
      s.remote.url = get<std::string>(sv, "url");
    }
    const auto log = get<std::string>(sv, "log");
    s.remote.log_path = fs::is_directory(log) ? fs::path(log) / label_service::kLogFile : fs::path(log);
    if (!fs::exists(s.remote.log_path.parent_path().empty() ? fs::path(".") : s.remote.log_path.parent_path()))
      throw ConfigError("service.log: no such directory " + s.remote.log_path.parent_path().string());
    s.remote.max_retries = get<int>(sv, "max_retries");
    s.remote.backoff = std::chrono::milliseconds(get<int>(sv, "backoff_ms"));
    s.remote.majority_vote = get<bool>(sv, "majority_vote");
  } else {
    throw ConfigError("labels must be mock, crowd or service, got '" + s.kind + "'");
  }
  return s;
}

OpenLabels open_labels(const LabelSpec& spec, const TaskSetup& task, const fs::path& out,
                       std::uint64_t seed) {
  OpenLabels o;
  if (spec.kind == "mock") {
    o.source = std::make_unique<pref_data::MockLabelSource>(
        pref_data::MockLabeler{task.oracle_fn(), spec.noise, "mock"}, seed);
  } else if (spec.kind == "crowd") {
    auto cfg = spec.crowd_service;
    cfg.seed = seed;
    cfg.data_dir = out / "crowd";
    o.service = std::make_unique<label_service::LabelService>(cfg);
    o.source = std::make_unique<label_service::ServiceLabelSource>(*o.service, task.vocab);
    o.crowd = std::make_unique<label_service::MockCrowd>(*o.service, task.vocab, task.oracle_fn(),
                                                         spec.crowd_labelers);
  } else {
    o.source = std::make_unique<label_service::RemoteLabelSource>(spec.remote, task.vocab);
  }
  return o;
}

}  // namespace rlhf::cli
