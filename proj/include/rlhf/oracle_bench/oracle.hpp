#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rlhf/seq_model/sampling.hpp"
#include "rlhf/seq_model/vocab.hpp"

namespace rlhf::oracle_bench {

using seq_model::ContextSet;
using seq_model::PolicyModel;
using seq_model::TokenId;
using seq_model::TokenSeq;

// Deterministic stand-in for a sentiment classifier's log odds: a per-token
// lexicon summed over the continuation (and the context when enabled).
struct LexiconOracle {
  std::map<TokenId, double> weights;
  double offset = 0.0;
  bool include_context = false;

  void validate() const;
  double weight(TokenId t) const;
};

double oracle_score(const LexiconOracle& o, std::span<const TokenId> x,
                    std::span<const TokenId> y);

// {"weights": {"symbol": w, ...}, "offset": c, "include_context": false}
LexiconOracle lexicon_from_json(const nlohmann::json& j, const seq_model::Vocab& vocab);
nlohmann::json lexicon_to_json(const LexiconOracle& o, const seq_model::Vocab& vocab);

using RewardFn = std::function<double(std::span<const TokenId>, std::span<const TokenId>)>;
RewardFn as_reward(LexiconOracle o);

enum class Estimator { kExact, kReweighted, kPolicy };
std::string to_string(Estimator e);

struct FrontierPoint {
  double kl_nats = 0.0;
  double reward = 0.0;
  double beta = 0.0;  // 0 for policy points
  Estimator estimator = Estimator::kExact;
  // Standard errors for sampled estimates.
  std::optional<double> kl_se;
  std::optional<double> reward_se;
};

nlohmann::json to_json(const FrontierPoint& p);

// pi_opt(y|x) proportional to rho(y|x) exp(r(x,y)/beta), over all |V|^len outputs.
struct OptimalPolicy {
  std::vector<std::pair<TokenSeq, double>> outputs;  // (y, pi_opt(y|x))
  double expected_reward = 0.0;
  double kl = 0.0;         // closed form E[r]/beta - log E_rho[exp(r/beta)]
  double direct_kl = 0.0;  // sum pi log(pi/rho)
  double log_partition = 0.0;
};

OptimalPolicy exact_optimal_policy(const PolicyModel& rho, const RewardFn& r, double beta,
                                   const TokenSeq& x, std::size_t len,
                                   std::uint64_t cap = seq_model::kDefaultEnumerationCap);

// Self-normalized importance estimate from n samples of rho, with
// delta-method standard errors.
FrontierPoint reweighted_frontier(const PolicyModel& rho, const RewardFn& r, double beta,
                                  const TokenSeq& x, std::size_t len, std::size_t n_samples,
                                  std::uint64_t seed);

// Exact pi_opt point averaged over contexts at one shared beta.
FrontierPoint exact_frontier_point(const PolicyModel& rho, const RewardFn& r, double beta,
                                   const ContextSet& contexts, std::size_t len);

// Exact (KL, E[r]) of a policy, averaged over contexts.
FrontierPoint policy_point(const PolicyModel& pi, const PolicyModel& rho, const RewardFn& r,
                           const ContextSet& contexts, std::size_t len);

// Monte Carlo (KL, E[r]) of a policy for models too large to enumerate.
FrontierPoint sampled_policy_point(const PolicyModel& pi, const PolicyModel& rho,
                                   const RewardFn& r, const ContextSet& contexts,
                                   std::size_t len, std::size_t n_samples, std::uint64_t seed);

// The exact frontier point whose averaged KL equals target_kl, found by
// bisection on log beta. Throws if the target exceeds the reachable range.
FrontierPoint kl_matched_point(const PolicyModel& rho, const RewardFn& r,
                               const ContextSet& contexts, std::size_t len, double target_kl,
                               double tol = 1e-9);

struct SweepOptions {
  std::size_t len = 1;
  bool reweighted = false;  // adds reweighted points next to the exact ones
  std::size_t n_samples = 100000;
  std::uint64_t seed = 0;
};

// Exact pi_opt points per beta (plus reweighted ones when asked) and one
// point per supplied policy.
std::vector<FrontierPoint> frontier_sweep(const PolicyModel& rho, const RewardFn& r,
                                          std::span<const double> betas,
                                          std::span<const PolicyModel* const> policies,
                                          const ContextSet& contexts, const SweepOptions& opt);

}  // namespace rlhf::oracle_bench
