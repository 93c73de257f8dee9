#include "rlhf/pref_data/collection.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>
#include <thread>

#include "rlhf/common/random.hpp"

namespace rlhf::pref_data {

namespace {

// Independent seed streams of one run.
enum Stream : std::uint64_t {
  kQueryStream = 1,
  kValidationStream,
  kRmInitStream,
  kRmTrainStream,
  kNormStream,
  kPpoStream,
};

}  // namespace

void CollectionMode::validate() const {
  if (kind == Kind::kBatched && k_batches == 0)
    throw std::invalid_argument("collection mode: k_batches must be positive");
}

std::string to_string(const CollectionMode& m) {
  switch (m.kind) {
    case CollectionMode::Kind::kOffline: return "offline";
    case CollectionMode::Kind::kOnline: return "online";
    case CollectionMode::Kind::kBatched: return "batched:" + std::to_string(m.k_batches);
  }
  return "online";
}

CollectionMode collection_mode_from_string(const std::string& s) {
  if (s == "offline") return CollectionMode::offline();
  if (s == "online") return CollectionMode::online();
  if (s.rfind("batched", 0) == 0) {
    if (s == "batched") return CollectionMode::batched(1);
    if (s.size() > 8 && s[7] == ':') {
      std::size_t used = 0;
      const auto k = std::stoul(s.substr(8), &used);
      if (used == s.size() - 8 && k > 0) return CollectionMode::batched(k);
    }
  }
  throw std::invalid_argument("collection mode must be offline, online or batched:K, got " + s);
}

CollectionPlan::CollectionPlan(LabelSchedule schedule, CollectionMode mode,
                               std::size_t outstanding)
    : schedule_(schedule), mode_(mode), outstanding_(outstanding) {
  schedule_.validate();
  mode_.validate();
  switch (mode_.kind) {
    case CollectionMode::Kind::kOffline:
      points_ = {schedule_.n_r0};
      break;
    case CollectionMode::Kind::kOnline:
      points_ = pref_data::retrain_points(schedule_);
      break;
    case CollectionMode::Kind::kBatched:
      if (mode_.k_batches > schedule_.n_r || mode_.k_batches > schedule_.n_pi)
        throw std::invalid_argument("batched mode: more batches than labels or episodes");
      for (std::size_t j = 1; j <= mode_.k_batches; ++j)
        points_.push_back(j * schedule_.n_r / mode_.k_batches);
      break;
  }
}

std::size_t CollectionPlan::total_labels() const {
  return mode_.kind == CollectionMode::Kind::kOffline ? schedule_.n_r0 : schedule_.n_r;
}

std::size_t CollectionPlan::target(std::size_t n) const {
  if (n > schedule_.n_pi) throw std::out_of_range("collection plan: episode beyond N_pi");
  switch (mode_.kind) {
    case CollectionMode::Kind::kOffline:
      return schedule_.n_r0;
    case CollectionMode::Kind::kOnline:
      return label_target(schedule_, n);
    case CollectionMode::Kind::kBatched: {
      const std::size_t seg = std::min(n * mode_.k_batches / schedule_.n_pi, mode_.k_batches - 1);
      return points_[seg];
    }
  }
  return 0;
}

std::size_t CollectionPlan::request_target(std::size_t n) const {
  const std::size_t t = target(n);
  if (mode_.kind != CollectionMode::Kind::kOnline) return t;
  return std::min(total_labels(), t + outstanding_);
}

nlohmann::json SchedulerState::to_json() const {
  return {{"n", n},
          {"labels_collected", labels_collected},
          {"requests_issued", requests_issued},
          {"retrains_done", retrains_done}};
}

SchedulerState SchedulerState::from_json(const nlohmann::json& j) {
  return {j.at("n").get<std::size_t>(), j.at("labels_collected").get<std::size_t>(),
          j.at("requests_issued").get<std::size_t>(), j.at("retrains_done").get<std::size_t>()};
}

void SchedulerState::save(const std::filesystem::path& path) const {
  // Write-then-rename so a crash never leaves a torn file.
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write scheduler state " + tmp.string());
    out << to_json().dump() << '\n';
  }
  std::filesystem::rename(tmp, path);
}

SchedulerState SchedulerState::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read scheduler state " + path.string());
  return from_json(nlohmann::json::parse(in));
}

MockLabelSource::MockLabelSource(MockLabeler labeler, std::uint64_t seed)
    : labeler_(std::move(labeler)), seed_(seed) {
  labeler_.validate();
}

void MockLabelSource::request(std::vector<Query> queries) {
  for (const auto& q : queries) {
    const int b = mock_label(labeler_, q, derive_seed(seed_, labeled_++));
    ready_.push_back(to_record(q, b, labeler_.id));
  }
}

std::vector<PreferenceRecord> MockLabelSource::poll() { return std::exchange(ready_, {}); }

reward_model::RewardModel fit_reward_model(std::shared_ptr<const PolicyModel> rho,
                                           std::span<const PreferenceRecord> records,
                                           const seq_model::ContextSet& contexts,
                                           const reward_model::RMTrainConfig& rm_cfg,
                                           std::size_t norm_samples, std::size_t response_len,
                                           std::uint64_t seed) {
  const reward_model::RewardModel init(rho, derive_seed(seed, kRmInitStream));
  auto trained =
      reward_model::train_reward_model(init, records, rm_cfg, derive_seed(seed, kRmTrainStream));
  return reward_model::normalize_reward(trained.model, *rho, contexts, norm_samples,
                                        response_len, derive_seed(seed, kNormStream));
}

RlhfResult run_rlhf(const PolicyModel& pi0, std::shared_ptr<const PolicyModel> rho,
                    const seq_model::ContextSet& contexts, LabelSource& labels,
                    const RlhfConfig& cfg) {
  if (!rho) throw std::invalid_argument("run_rlhf: no reference model");
  if (!cfg.records_path.empty() && !cfg.vocab)
    throw std::invalid_argument("run_rlhf: writing records needs a vocabulary");
  if (cfg.validation_fraction < 0.0 || cfg.validation_fraction > 1.0)
    throw std::invalid_argument("run_rlhf: validation_fraction must be in [0, 1]");
  const CollectionPlan plan(cfg.schedule, cfg.mode, cfg.outstanding);
  ppo_trainer::PPOConfig ppo = cfg.ppo;
  ppo.episodes_total = cfg.schedule.n_pi;
  ppo.validate();
  const SamplingSpec spec{ppo.response_len, ppo.constraint, ppo.max_attempts};

  RlhfResult res;
  std::size_t next_point = 0;
  std::shared_ptr<const reward_model::RewardModel> current;
  ppo_trainer::TrainStart start;
  if (cfg.resume) {
    const auto& r = *cfg.resume;
    if (r.state.retrains_done > 0 && !r.reward_model)
      throw std::invalid_argument("run_rlhf: resuming after a retrain needs its reward model");
    if (r.episodes > ppo.episodes_total) throw std::invalid_argument("run_rlhf: resume past the end");
    res.records = r.records;
    res.state = r.state;
    res.state.n = r.episodes;
    res.state.labels_collected = r.records.size();
    res.state.requests_issued = std::min(r.state.requests_issued, r.records.size());
    next_point = std::min(r.state.retrains_done, plan.retrain_points().size());
    res.state.retrains_done = next_point;
    current = r.reward_model;
    start.episodes = r.episodes;
    start.value = r.value;
  }

  auto stop_signal = [&] { return labels.stop_requested() || (cfg.stop && cfg.stop()); };

  auto issue = [&](std::size_t n, const PolicyModel& pi) {
    const std::size_t want = plan.request_target(n);
    if (want <= res.state.requests_issued) return;
    std::vector<Query> queries;
    for (std::size_t i = res.state.requests_issued; i < want; ++i) {
      const std::uint64_t qs = derive_seed(cfg.seed, kQueryStream);
      const auto& x = contexts.draw(derive_seed(qs, 2 * i));
      const std::uint64_t ys = derive_seed(qs, 2 * i + 1);
      Rng coin(derive_seed(derive_seed(cfg.seed, kValidationStream), i));
      if (n > 0 && cfg.validation_fraction > 0.0 && coin.bernoulli(cfg.validation_fraction))
        queries.push_back(make_validation_query(*rho, pi, x, spec, ys));
      else
        queries.push_back(make_policy_query(pi, x, spec, ys, n == 0 ? Source::kRho : Source::kPi));
    }
    res.state.requests_issued = want;
    labels.request(std::move(queries));
  };

  auto collect = [&] {
    auto fresh = labels.poll();
    if (fresh.empty()) return;
    if (!cfg.records_path.empty()) reward_model::write_records(cfg.records_path, fresh, *cfg.vocab, true);
    res.state.labels_collected += fresh.size();
    for (auto& r : fresh) res.records.push_back(std::move(r));
  };

  // Pauses until `target` labels are in; false if stopped meanwhile.
  auto wait_for = [&](std::size_t target) {
    collect();
    while (res.state.labels_collected < target) {
      if (stop_signal()) return false;
      std::this_thread::sleep_for(cfg.poll_interval);
      collect();
    }
    return true;
  };

  auto retrain_due = [&](std::size_t n) {
    const std::size_t t = plan.target(n);
    while (next_point < plan.retrain_points().size() && t >= plan.retrain_points()[next_point]) {
      auto rm = fit_reward_model(rho, res.records, contexts, cfg.rm, cfg.norm_samples,
                                 spec.response_len, derive_seed(cfg.seed, 100 + next_point));
      current = std::make_shared<const reward_model::RewardModel>(std::move(rm));
      ++next_point;
      ++res.state.retrains_done;
      if (cfg.on_retrain) cfg.on_retrain(res.state.labels_collected, *current);
    }
  };

  auto step = [&](std::size_t n, const PolicyModel& pi, ppo_trainer::RewardFn& reward) {
    res.state.n = n;
    issue(n, pi);
    if (!wait_for(plan.target(n))) {
      res.stopped = true;
      return;
    }
    retrain_due(n);
    if (current) reward = ppo_trainer::reward_fn(current);
    if (!cfg.state_path.empty()) res.state.save(cfg.state_path);
  };

  ppo_trainer::TrainHooks hooks;
  hooks.before_batch = step;
  hooks.on_finish = [&](std::size_t n, const PolicyModel& pi, ppo_trainer::RewardFn& reward) {
    if (res.stopped || n < cfg.schedule.n_pi) return;
    step(n, pi, reward);
  };
  hooks.stop_requested = [&] { return res.stopped || stop_signal(); };
  hooks.on_batch = [&](const ppo_trainer::BatchRecord& r, const PolicyModel& pi) {
    res.state.n = r.episode;
    collect();
    if (!cfg.state_path.empty()) res.state.save(cfg.state_path);
    if (cfg.on_batch) cfg.on_batch(r, pi);
  };

  auto unset = [](std::span<const TokenId>, std::span<const TokenId>) -> double {
    throw std::logic_error("run_rlhf: reward used before the first reward model");
  };
  auto out = ppo_trainer::train(pi0, *rho, unset, contexts, ppo, cfg.controller, hooks,
                                derive_seed(cfg.seed, kPpoStream), start);
  res.stopped = res.stopped || out.stopped;
  res.policy = std::move(out.policy);
  res.value = std::move(out.value);
  res.ppo_log = std::move(out.log);
  res.controller = out.controller;
  res.reward_model = current;
  res.state.n = out.episodes;
  if (!cfg.state_path.empty()) res.state.save(cfg.state_path);

  std::vector<PreferenceRecord> validation;
  for (const auto& r : res.records)
    if (r.is_validation) validation.push_back(r);
  if (!validation.empty()) res.validation_win_rate = win_rate(validation);
  return res;
}

}  // namespace rlhf::pref_data
