#include "rlhf/oracle_bench/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "rlhf/common/random.hpp"
#include "rlhf/simd/kernels.hpp"

namespace rlhf::oracle_bench {

void LexiconOracle::validate() const {
  if (!std::isfinite(offset)) throw std::invalid_argument("lexicon: non-finite offset");
  for (const auto& [t, w] : weights)
    if (!std::isfinite(w)) throw std::invalid_argument("lexicon: non-finite weight");
}

double LexiconOracle::weight(TokenId t) const {
  const auto it = weights.find(t);
  return it == weights.end() ? 0.0 : it->second;
}

double oracle_score(const LexiconOracle& o, std::span<const TokenId> x,
                    std::span<const TokenId> y) {
  double s = o.offset;
  for (TokenId t : y) s += o.weight(t);
  if (o.include_context)
    for (TokenId t : x) s += o.weight(t);
  return s;
}

LexiconOracle lexicon_from_json(const nlohmann::json& j, const seq_model::Vocab& vocab) {
  LexiconOracle o;
  for (const auto& [sym, w] : j.at("weights").items()) {
    const auto id = vocab.find(sym);
    if (!id) throw std::invalid_argument("lexicon: symbol not in vocabulary: " + sym);
    o.weights[*id] = w.get<double>();
  }
  o.offset = j.value("offset", 0.0);
  o.include_context = j.value("include_context", false);
  o.validate();
  return o;
}

nlohmann::json lexicon_to_json(const LexiconOracle& o, const seq_model::Vocab& vocab) {
  nlohmann::json w = nlohmann::json::object();
  for (const auto& [t, v] : o.weights) w[vocab.symbol(t)] = v;
  return {{"weights", w}, {"offset", o.offset}, {"include_context", o.include_context}};
}

RewardFn as_reward(LexiconOracle o) {
  o.validate();
  return [o = std::move(o)](std::span<const TokenId> x, std::span<const TokenId> y) {
    return oracle_score(o, x, y);
  };
}

std::string to_string(Estimator e) {
  switch (e) {
    case Estimator::kExact: return "exact";
    case Estimator::kReweighted: return "reweighted";
    case Estimator::kPolicy: return "policy";
  }
  return "exact";
}

nlohmann::json to_json(const FrontierPoint& p) {
  nlohmann::json j = {{"kl_nats", p.kl_nats},
                      {"reward", p.reward},
                      {"beta", p.beta},
                      {"estimator", to_string(p.estimator)}};
  if (p.kl_se) j["kl_se"] = *p.kl_se;
  if (p.reward_se) j["reward_se"] = *p.reward_se;
  return j;
}

OptimalPolicy exact_optimal_policy(const PolicyModel& rho, const RewardFn& r, double beta,
                                   const TokenSeq& x, std::size_t len, std::uint64_t cap) {
  if (!(beta > 0.0)) throw std::invalid_argument("optimal policy: beta must be positive");
  auto outputs = seq_model::enumerate_outputs(rho, x, len, cap);
  const std::size_t n = outputs.size();
  std::vector<double> log_rho(n), rewards(n), logw(n);
  for (std::size_t i = 0; i < n; ++i) {
    log_rho[i] = seq_model::conditional_logprob(rho, x, outputs[i].first);
    rewards[i] = r(x, outputs[i].first);
    logw[i] = log_rho[i] + rewards[i] / beta;
  }
  OptimalPolicy out;
  out.log_partition = simd::log_sum_exp(logw);  // log E_rho[exp(r/beta)]
  double er = 0.0, direct = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double lp = logw[i] - out.log_partition;
    const double p = std::exp(lp);
    outputs[i].second = p;
    if (p == 0.0) continue;
    er += p * rewards[i];
    direct += p * (lp - log_rho[i]);
  }
  out.outputs = std::move(outputs);
  out.expected_reward = er;
  out.kl = er / beta - out.log_partition;
  out.direct_kl = direct;
  return out;
}

FrontierPoint reweighted_frontier(const PolicyModel& rho, const RewardFn& r, double beta,
                                  const TokenSeq& x, std::size_t len, std::size_t n_samples,
                                  std::uint64_t seed) {
  if (!(beta > 0.0)) throw std::invalid_argument("reweighted frontier: beta must be positive");
  if (n_samples < 2) throw std::invalid_argument("reweighted frontier: need at least 2 samples");
  std::vector<double> rewards(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i)
    rewards[i] = r(x, seq_model::sample(rho, x, len, derive_seed(seed, i)));
  const double shift = *std::max_element(rewards.begin(), rewards.end()) / beta;

  // A = mean(w r), B = mean(w) with w = exp(r/beta - shift).
  const double inv_n = 1.0 / static_cast<double>(n_samples);
  double a = 0.0, b = 0.0;
  std::vector<double> w(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    w[i] = std::exp(rewards[i] / beta - shift);
    a += w[i] * rewards[i];
    b += w[i];
  }
  a *= inv_n;
  b *= inv_n;
  const double mu = a / b;

  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (std::size_t i = 0; i < n_samples; ++i) {
    const double da = w[i] * rewards[i] - a, db = w[i] - b;
    saa += da * da;
    sbb += db * db;
    sab += da * db;
  }
  const double dn = static_cast<double>(n_samples - 1);
  saa /= dn;
  sbb /= dn;
  sab /= dn;
  auto delta_se = [&](double ga, double gb) {
    const double var = (ga * ga * saa + 2.0 * ga * gb * sab + gb * gb * sbb) * inv_n;
    return std::sqrt(std::max(var, 0.0));
  };

  FrontierPoint p;
  p.estimator = Estimator::kReweighted;
  p.beta = beta;
  p.reward = mu;
  p.kl_nats = mu / beta - (shift + std::log(b));
  // reward = A/B; KL = A/(B beta) - log B - shift
  p.reward_se = delta_se(1.0 / b, -a / (b * b));
  p.kl_se = delta_se(1.0 / (b * beta), -a / (b * b * beta) - 1.0 / b);
  return p;
}

FrontierPoint exact_frontier_point(const PolicyModel& rho, const RewardFn& r, double beta,
                                   const ContextSet& contexts, std::size_t len) {
  if (contexts.empty()) throw std::invalid_argument("frontier: no contexts");
  FrontierPoint p;
  p.beta = beta;
  for (const auto& x : contexts.contexts()) {
    const auto opt = exact_optimal_policy(rho, r, beta, x, len);
    p.kl_nats += opt.kl;
    p.reward += opt.expected_reward;
  }
  p.kl_nats /= static_cast<double>(contexts.size());
  p.reward /= static_cast<double>(contexts.size());
  return p;
}

FrontierPoint policy_point(const PolicyModel& pi, const PolicyModel& rho, const RewardFn& r,
                           const ContextSet& contexts, std::size_t len) {
  if (contexts.empty()) throw std::invalid_argument("frontier: no contexts");
  FrontierPoint p;
  p.estimator = Estimator::kPolicy;
  for (const auto& x : contexts.contexts()) {
    for (const auto& [y, prob] : seq_model::enumerate_outputs(pi, x, len)) {
      if (prob == 0.0) continue;
      p.reward += prob * r(x, y);
      p.kl_nats += prob * (seq_model::conditional_logprob(pi, x, y) -
                           seq_model::conditional_logprob(rho, x, y));
    }
  }
  p.kl_nats /= static_cast<double>(contexts.size());
  p.reward /= static_cast<double>(contexts.size());
  return p;
}

FrontierPoint sampled_policy_point(const PolicyModel& pi, const PolicyModel& rho,
                                   const RewardFn& r, const ContextSet& contexts,
                                   std::size_t len, std::size_t n_samples, std::uint64_t seed) {
  if (n_samples < 2) throw std::invalid_argument("policy point: need at least 2 samples");
  double sk = 0.0, skk = 0.0, sr = 0.0, srr = 0.0;
  for (std::size_t i = 0; i < n_samples; ++i) {
    const auto& x = contexts.draw(derive_seed(seed, 2 * i));
    const auto y = seq_model::sample(pi, x, len, derive_seed(seed, 2 * i + 1));
    const double k =
        seq_model::conditional_logprob(pi, x, y) - seq_model::conditional_logprob(rho, x, y);
    const double v = r(x, y);
    sk += k;
    skk += k * k;
    sr += v;
    srr += v * v;
  }
  const double n = static_cast<double>(n_samples);
  FrontierPoint p;
  p.estimator = Estimator::kPolicy;
  p.kl_nats = sk / n;
  p.reward = sr / n;
  p.kl_se = std::sqrt(std::max(0.0, skk / n - p.kl_nats * p.kl_nats) / (n - 1));
  p.reward_se = std::sqrt(std::max(0.0, srr / n - p.reward * p.reward) / (n - 1));
  return p;
}

FrontierPoint kl_matched_point(const PolicyModel& rho, const RewardFn& r,
                               const ContextSet& contexts, std::size_t len, double target_kl,
                               double tol) {
  if (!(target_kl >= 0.0)) throw std::invalid_argument("kl match: target must be nonnegative");
  // KL is non-increasing in beta.
  double lo = std::log(1e-6), hi = std::log(1e9);
  if (exact_frontier_point(rho, r, std::exp(lo), contexts, len).kl_nats < target_kl)
    throw std::invalid_argument("kl match: target KL beyond the reachable frontier");
  FrontierPoint best = exact_frontier_point(rho, r, std::exp(hi), contexts, len);
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    best = exact_frontier_point(rho, r, std::exp(mid), contexts, len);
    if (std::abs(best.kl_nats - target_kl) <= tol) break;
    if (best.kl_nats > target_kl) lo = mid;
    else hi = mid;
  }
  return best;
}

std::vector<FrontierPoint> frontier_sweep(const PolicyModel& rho, const RewardFn& r,
                                          std::span<const double> betas,
                                          std::span<const PolicyModel* const> policies,
                                          const ContextSet& contexts, const SweepOptions& opt) {
  std::vector<FrontierPoint> out;
  for (double beta : betas) {
    out.push_back(exact_frontier_point(rho, r, beta, contexts, opt.len));
    if (!opt.reweighted) continue;
    // Context-averaged reweighted estimate; errors combine independently.
    FrontierPoint avg;
    avg.estimator = Estimator::kReweighted;
    avg.beta = beta;
    double kv = 0.0, rv = 0.0;
    std::size_t c = 0;
    for (const auto& x : contexts.contexts()) {
      const auto p = reweighted_frontier(rho, r, beta, x, opt.len, opt.n_samples,
                                         derive_seed(opt.seed, c++));
      avg.kl_nats += p.kl_nats;
      avg.reward += p.reward;
      kv += *p.kl_se * *p.kl_se;
      rv += *p.reward_se * *p.reward_se;
    }
    const double m = static_cast<double>(contexts.size());
    avg.kl_nats /= m;
    avg.reward /= m;
    avg.kl_se = std::sqrt(kv) / m;
    avg.reward_se = std::sqrt(rv) / m;
    out.push_back(avg);
  }
  for (const PolicyModel* pi : policies) out.push_back(policy_point(*pi, rho, r, contexts, opt.len));
  return out;
}

}  // namespace rlhf::oracle_bench
