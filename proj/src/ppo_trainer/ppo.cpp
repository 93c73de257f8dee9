#include "rlhf/ppo_trainer/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "rlhf/common/parallel.hpp"
#include "rlhf/common/random.hpp"
#include "rlhf/seq_model/lm_training.hpp"
#include "rlhf/simd/kernels.hpp"

namespace rlhf::ppo_trainer {

using seq_model::TrainingDiverged;

RewardFn reward_fn(std::shared_ptr<const reward_model::RewardModel> rm) {
  return [rm = std::move(rm)](std::span<const TokenId> x, std::span<const TokenId> y) {
    return rm->score(x, y);
  };
}

std::optional<double> constraint_penalty(std::span<const TokenId> y,
                                         const SampleConstraint& constraint) {
  if (seq_model::constraint_position(y, constraint)) return std::nullopt;
  return kConstraintPenalty;
}

SampleConstraint period_constraint(TokenId period) { return {period, 15, 23}; }
SampleConstraint newline_constraint(TokenId newline) { return {newline, 54, 74}; }

void PPOConfig::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("ppo: gamma must be in (0, 1]");
  if (ppo_epochs == 0 || minibatches_per_batch == 0 || batch_size == 0 || response_len == 0)
    throw std::invalid_argument("ppo: epochs, minibatches, batch size and length must be positive");
  if (!(clip_ratio > 0.0)) throw std::invalid_argument("ppo: clip ratio must be positive");
  if (!(policy_lr > 0.0) || value_lr < 0.0) throw std::invalid_argument("ppo: bad learning rate");
  if (value_coef < 0.0) throw std::invalid_argument("ppo: value coefficient must be nonnegative");
  if (constraint) {
    constraint->validate();
    if (constraint->window_hi >= response_len)
      throw std::invalid_argument("ppo: constraint window exceeds response length");
  }
}

PPOConfig PPOConfig::style() { return {}; }

PPOConfig PPOConfig::summarization() {
  PPOConfig c;
  c.policy_lr = 7.07e-6;
  c.batch_size = 512;
  c.response_len = 75;
  return c;
}

void to_json(nlohmann::json& j, const PPOConfig& c) {
  j = {{"gamma", c.gamma},
       {"ppo_epochs", c.ppo_epochs},
       {"minibatches_per_batch", c.minibatches_per_batch},
       {"clip_ratio", c.clip_ratio},
       {"policy_lr", c.policy_lr},
       {"value_lr", c.value_lr},
       {"value_coef", c.value_coef},
       {"normalize_advantages", c.normalize_advantages},
       {"episodes_total", c.episodes_total},
       {"batch_size", c.batch_size},
       {"response_len", c.response_len},
       {"max_attempts", c.max_attempts},
       {"penalty_mode", c.penalty_mode == PenaltyMode::kRawReward ? "raw" : "shaped"},
       {"n_threads", c.n_threads}};
  if (c.constraint)
    j["constraint"] = {{"symbol", c.constraint->required_symbol},
                       {"window_lo", c.constraint->window_lo},
                       {"window_hi", c.constraint->window_hi}};
  else
    j["constraint"] = nullptr;
}

PPOConfig ppo_config_from_json(const nlohmann::json& j, PPOConfig c) {
  c.gamma = j.value("gamma", c.gamma);
  c.ppo_epochs = j.value("ppo_epochs", c.ppo_epochs);
  c.minibatches_per_batch = j.value("minibatches_per_batch", c.minibatches_per_batch);
  c.clip_ratio = j.value("clip_ratio", c.clip_ratio);
  c.policy_lr = j.value("policy_lr", c.policy_lr);
  c.value_lr = j.value("value_lr", c.value_lr);
  c.value_coef = j.value("value_coef", c.value_coef);
  c.normalize_advantages = j.value("normalize_advantages", c.normalize_advantages);
  c.episodes_total = j.value("episodes_total", c.episodes_total);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.response_len = j.value("response_len", c.response_len);
  c.max_attempts = j.value("max_attempts", c.max_attempts);
  c.n_threads = j.value("n_threads", c.n_threads);
  if (j.contains("penalty_mode")) {
    const auto m = j.at("penalty_mode").get<std::string>();
    if (m == "raw") c.penalty_mode = PenaltyMode::kRawReward;
    else if (m == "shaped") c.penalty_mode = PenaltyMode::kShapedReturn;
    else throw std::invalid_argument("ppo: penalty_mode must be raw or shaped");
  }
  if (j.contains("constraint")) {
    const auto& k = j.at("constraint");
    if (k.is_null()) {
      c.constraint.reset();
    } else {
      c.constraint = SampleConstraint{k.at("symbol").get<TokenId>(),
                                      k.at("window_lo").get<std::size_t>(),
                                      k.at("window_hi").get<std::size_t>()};
    }
  }
  return c;
}

double Episode::log_ratio() const {
  double s = 0.0;
  for (double v : logp_pi) s += v;
  for (double v : logp_rho) s -= v;
  return s;
}

ValueEstimator::ValueEstimator(std::size_t feature_width) : params_(feature_width + 1, 0.0) {}

double ValueEstimator::value(std::span<const double> features) const {
  if (features.size() != width())
    throw std::invalid_argument("value head: feature width mismatch");
  return simd::dot(features, std::span<const double>(params_).first(width())) + params_.back();
}

std::vector<double> ValueEstimator::values(const seq_model::TokenEval& eval) const {
  std::vector<double> out;
  out.reserve(eval.features.size());
  for (const auto& f : eval.features) out.push_back(value(f));
  return out;
}

void ValueEstimator::accumulate_grad(std::span<const double> features, double coef,
                                     std::span<double> grad) const {
  simd::axpy(coef, features, grad.first(width()));
  grad[width()] += coef;
}

std::vector<Episode> rollout(const PolicyModel& pi, const PolicyModel& rho,
                             const RewardFn& reward, const ValueEstimator* value,
                             const ContextSet& contexts, std::size_t batch_size,
                             const PPOConfig& cfg, double beta, std::uint64_t seed) {
  if (pi.vocab_size() != rho.vocab_size())
    throw std::invalid_argument("rollout: policy and reference vocabularies differ");
  std::vector<Episode> out(batch_size);
  parallel_for(batch_size, cfg.n_threads, [&](std::size_t i) {
    Episode& e = out[i];
    e.x = contexts.draw(derive_seed(seed, 2 * i));
    const std::uint64_t ys = derive_seed(seed, 2 * i + 1);
    if (cfg.constraint) {
      auto s = seq_model::sample_constrained(pi, e.x, cfg.response_len, *cfg.constraint,
                                             cfg.max_attempts, ys);
      e.y = std::move(s.y);
      e.constraint_satisfied = s.satisfied;
    } else {
      e.y = seq_model::sample(pi, e.x, cfg.response_len, ys);
    }
    auto ev = pi.evaluate(e.x, e.y);
    e.logp_pi = std::move(ev.logprobs);
    e.logp_rho = rho.token_logprobs(seq_model::concat(e.x, e.y), e.x.size());
    if (value) e.values = value->values(ev);
    e.raw_reward = e.constraint_satisfied ? reward(e.x, e.y) : kConstraintPenalty;
    const double lp = std::accumulate(e.logp_pi.begin(), e.logp_pi.end(), 0.0);
    const double lr = std::accumulate(e.logp_rho.begin(), e.logp_rho.end(), 0.0);
    if (!e.constraint_satisfied && cfg.penalty_mode == PenaltyMode::kShapedReturn)
      e.shaped_return = kConstraintPenalty;
    else
      e.shaped_return = shaped_reward(e.raw_reward, lp, lr, beta);
  });
  return out;
}

PPOOptimizer::PPOOptimizer(const PolicyModel& pi, const ValueEstimator& value,
                           const PPOConfig& cfg)
    : policy_(pi.parameters().size(), {.lr = cfg.policy_lr}),
      value_(value.parameters().size(),
             {.lr = cfg.value_lr > 0.0 ? cfg.value_lr : cfg.policy_lr}) {}

PPOStats ppo_step(PolicyModel& pi, ValueEstimator& value, const std::vector<Episode>& batch,
                  const PPOConfig& cfg, PPOOptimizer& opt, std::uint64_t seed) {
  if (batch.empty()) throw std::invalid_argument("ppo_step: empty batch");
  const std::size_t n = batch.size();

  // Reward arrives at the last token; G_t = gamma^(T-1-t) R.
  std::vector<std::vector<double>> returns(n), adv(n);
  double sum = 0.0, sum_sq = 0.0;
  std::size_t tokens = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Episode& e = batch[i];
    const std::size_t len = e.y.size();
    if (e.logp_pi.size() != len) throw std::invalid_argument("ppo_step: logprob length mismatch");
    const auto vals = e.values.size() == len ? e.values : value.values(pi.evaluate(e.x, e.y));
    returns[i].resize(len);
    adv[i].resize(len);
    for (std::size_t t = 0; t < len; ++t) {
      returns[i][t] = std::pow(cfg.gamma, static_cast<double>(len - 1 - t)) * e.shaped_return;
      adv[i][t] = returns[i][t] - vals[t];
      sum += adv[i][t];
      sum_sq += adv[i][t] * adv[i][t];
    }
    tokens += len;
  }
  if (cfg.normalize_advantages && tokens > 0) {
    const double mean = sum / static_cast<double>(tokens);
    const double var = std::max(0.0, sum_sq / static_cast<double>(tokens) - mean * mean);
    const double sd = std::max(std::sqrt(var), 1e-8);
    for (auto& a : adv)
      for (double& v : a) v = (v - mean) / sd;
  }

  PPOStats stats;
  std::vector<double> gpi(pi.parameters().size());
  std::vector<double> gv(value.parameters().size());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t n_mb = std::min(cfg.minibatches_per_batch, n);
  std::size_t clipped = 0, counted = 0;
  for (std::size_t epoch = 0; epoch < cfg.ppo_epochs; ++epoch) {
    if (n_mb > 1) {
      Rng rng(derive_seed(seed, epoch));
      std::shuffle(order.begin(), order.end(), rng.engine());
    }
    const bool last_epoch = epoch + 1 == cfg.ppo_epochs;
    double approx_kl = 0.0;
    std::size_t kl_tokens = 0;
    for (std::size_t mb = 0; mb < n_mb; ++mb) {
      const std::size_t lo = mb * n / n_mb, hi = (mb + 1) * n / n_mb;
      std::size_t mb_tokens = 0;
      for (std::size_t k = lo; k < hi; ++k) mb_tokens += batch[order[k]].y.size();
      if (mb_tokens == 0) continue;
      const double inv = 1.0 / static_cast<double>(mb_tokens);
      std::fill(gpi.begin(), gpi.end(), 0.0);
      std::fill(gv.begin(), gv.end(), 0.0);
      double policy_loss = 0.0, value_loss = 0.0;
      std::vector<double> coef;
      for (std::size_t k = lo; k < hi; ++k) {
        const Episode& e = batch[order[k]];
        const auto& a = adv[order[k]];
        const auto& g = returns[order[k]];
        const auto ev = pi.evaluate(e.x, e.y);
        coef.assign(e.y.size(), 0.0);
        for (std::size_t t = 0; t < e.y.size(); ++t) {
          const double log_r = ev.logprobs[t] - e.logp_pi[t];
          const double ratio = std::exp(log_r);
          const double unclipped = ratio * a[t];
          const double clamped =
              std::clamp(ratio, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio) * a[t];
          policy_loss -= std::min(unclipped, clamped) * inv;
          if (unclipped <= clamped) coef[t] = -a[t] * ratio * inv;
          if (std::abs(ratio - 1.0) > cfg.clip_ratio) ++clipped;
          ++counted;
          if (last_epoch) {
            approx_kl -= log_r;
            ++kl_tokens;
          }
          const double v = value.value(ev.features[t]);
          value_loss += 0.5 * (v - g[t]) * (v - g[t]) * inv;
          value.accumulate_grad(ev.features[t], cfg.value_coef * (v - g[t]) * inv, gv);
        }
        pi.accumulate_logprob_grad(e.x, e.y, coef, gpi);
      }
      if (!std::isfinite(policy_loss) || !std::isfinite(value_loss))
        throw TrainingDiverged("ppo_step: non-finite loss");
      opt.policy().step(pi.parameters(), gpi, pi.float_parameters());
      opt.value().step(value.parameters(), gv);
      stats.policy_loss += policy_loss;
      stats.value_loss += value_loss;
      ++stats.updates;
    }
    if (last_epoch && kl_tokens > 0) stats.approx_kl = approx_kl / static_cast<double>(kl_tokens);
  }
  if (stats.updates > 0) {
    stats.policy_loss /= static_cast<double>(stats.updates);
    stats.value_loss /= static_cast<double>(stats.updates);
  }
  if (counted > 0) stats.clip_fraction = static_cast<double>(clipped) / static_cast<double>(counted);
  return stats;
}

nlohmann::json to_json(const BatchRecord& r) {
  return {{"episode", r.episode},
          {"mean_reward", r.mean_reward},
          {"mean_raw_reward", r.mean_raw_reward},
          {"kl_nats", r.kl_nats},
          {"beta", r.beta},
          {"constraint_violation_rate", r.constraint_violation_rate},
          {"policy_loss", r.stats.policy_loss},
          {"value_loss", r.stats.value_loss},
          {"clip_fraction", r.stats.clip_fraction},
          {"approx_kl", r.stats.approx_kl}};
}

TrainResult train(const PolicyModel& pi0, const PolicyModel& rho, RewardFn reward,
                  const ContextSet& contexts, const PPOConfig& cfg,
                  KLControllerState controller, const TrainHooks& hooks, std::uint64_t seed,
                  const TrainStart& start) {
  cfg.validate();
  controller.validate();
  TrainResult res;
  res.policy = pi0.clone();
  res.value = start.value ? *start.value : ValueEstimator(pi0.feature_width());
  if (res.value.parameters().size() != pi0.feature_width() + 1)
    throw std::invalid_argument("train: value head does not match the policy");
  res.controller = controller;
  res.episodes = start.episodes;
  PPOOptimizer opt(*res.policy, res.value, cfg);

  std::ofstream log;
  if (!cfg.log_path.empty()) {
    log.open(cfg.log_path, start.episodes > 0 ? std::ios::app : std::ios::trunc);
    if (!log) throw std::runtime_error("cannot open training log " + cfg.log_path.string());
  }
  std::filesystem::path last_good;
  auto checkpoint = [&] {
    if (cfg.checkpoint_path.empty()) return;
    save_ppo_checkpoint(*res.policy, res.value, res.controller, res.episodes,
                        cfg.checkpoint_path);
    last_good = cfg.checkpoint_path;
  };

  for (std::size_t b = start.episodes / cfg.batch_size; res.episodes < cfg.episodes_total; ++b) {
    if (hooks.stop_requested && hooks.stop_requested()) {
      res.stopped = true;
      break;
    }
    if (hooks.before_batch) {
      hooks.before_batch(res.episodes, *res.policy, reward);
      // A stop can arrive while the hook waits for labels.
      if (hooks.stop_requested && hooks.stop_requested()) {
        res.stopped = true;
        break;
      }
    }
    const std::size_t bs = std::min(cfg.batch_size, cfg.episodes_total - res.episodes);
    const auto batch = rollout(*res.policy, rho, reward, &res.value, contexts, bs, cfg,
                               res.controller.beta, derive_seed(seed, 2 * b));

    BatchRecord rec;
    rec.beta = res.controller.beta;
    std::size_t violations = 0;
    for (const auto& e : batch) {
      rec.mean_reward += e.shaped_return;
      rec.mean_raw_reward += e.raw_reward;
      rec.kl_nats += e.log_ratio();
      if (!e.constraint_satisfied) ++violations;
    }
    const double inv = 1.0 / static_cast<double>(bs);
    rec.mean_reward *= inv;
    rec.mean_raw_reward *= inv;
    rec.kl_nats *= inv;
    rec.constraint_violation_rate = static_cast<double>(violations) * inv;

    try {
      rec.stats = ppo_step(*res.policy, res.value, batch, cfg, opt, derive_seed(seed, 2 * b + 1));
    } catch (const TrainingDiverged& e) {
      throw TrainingDiverged(std::string(e.what()) + "; last good checkpoint: " +
                             (last_good.empty() ? std::string("none") : last_good.string()));
    }
    res.episodes += bs;
    rec.episode = res.episodes;
    res.controller = controller_update(res.controller, rec.kl_nats);
    res.log.push_back(rec);
    if (log) log << to_json(rec).dump() << '\n' << std::flush;
    if (hooks.on_batch) hooks.on_batch(rec, *res.policy);
    if (cfg.checkpoint_every > 0 && (b + 1) % cfg.checkpoint_every == 0) checkpoint();
  }
  if (hooks.on_finish) hooks.on_finish(res.episodes, *res.policy, reward);
  checkpoint();
  return res;
}

void save_ppo_checkpoint(const PolicyModel& pi, const ValueEstimator& value,
                         const KLControllerState& controller, std::size_t episodes,
                         const std::filesystem::path& path) {
  auto ck = pi.to_checkpoint();
  ck.config["ppo"] = {{"beta", controller.beta},
                      {"target_kl", controller.target_kl ? nlohmann::json(*controller.target_kl)
                                                         : nlohmann::json(nullptr)},
                      {"k_beta", controller.k_beta},
                      {"clip", controller.clip},
                      {"episodes", episodes},
                      {"value_width", value.width()}};
  const auto p = value.parameters();
  ck.arrays.push_back({"ppo.value", seq_model::DType::kF64, {p.begin(), p.end()}});
  ck.save(path);
}

PPOCheckpoint load_ppo_checkpoint(const std::filesystem::path& path) {
  const auto ck = seq_model::Checkpoint::load(path);
  if (!ck.config.contains("ppo")) throw std::runtime_error("checkpoint has no ppo section");
  const auto& meta = ck.config.at("ppo");
  PPOCheckpoint out;
  out.policy = seq_model::model_from_checkpoint(ck);
  out.value = ValueEstimator(meta.at("value_width").get<std::size_t>());
  const auto& arr = ck.array("ppo.value");
  if (arr.values.size() != out.value.parameters().size())
    throw std::runtime_error("checkpoint: value head size mismatch");
  std::copy(arr.values.begin(), arr.values.end(), out.value.parameters().begin());
  out.controller.beta = meta.at("beta").get<double>();
  if (!meta.at("target_kl").is_null()) out.controller.target_kl = meta.at("target_kl").get<double>();
  out.controller.k_beta = meta.at("k_beta").get<double>();
  out.controller.clip = meta.at("clip").get<double>();
  out.episodes = meta.at("episodes").get<std::size_t>();
  return out;
}

}  // namespace rlhf::ppo_trainer
