#pragma once

#include <cstdint>
#include <optional>

#include "rlhf/seq_model/sampling.hpp"

namespace rlhf::ppo_trainer {

using seq_model::ContextSet;
using seq_model::PolicyModel;
using seq_model::TokenId;

// R = r - beta * (log pi - log rho). Throws on non-finite input.
double shaped_reward(double r_score, double logp_pi, double logp_rho, double beta);

// Adaptive beta. Without a target the controller is fixed.
struct KLControllerState {
  double beta = 0.1;
  std::optional<double> target_kl;
  double k_beta = 0.1;
  double clip = 0.2;

  void validate() const;
};

// e = clip((kl - target) / target, -clip, clip); beta' = beta * (1 + k_beta * e).
KLControllerState controller_update(const KLControllerState& state, double measured_kl);

// Monte Carlo KL(pi, rho) in nats: mean of log pi(y|x) - log rho(y|x) with
// x drawn uniformly from contexts and y ~ pi(.|x) of length response_len.
double measure_kl(const PolicyModel& pi, const PolicyModel& rho, const ContextSet& contexts,
                  std::size_t n_samples, std::size_t response_len, std::uint64_t seed);

// Exact KL by enumerating every continuation, averaged over contexts.
double exact_kl(const PolicyModel& pi, const PolicyModel& rho, const ContextSet& contexts,
                std::size_t response_len,
                std::uint64_t cap = seq_model::kDefaultEnumerationCap);

}  // namespace rlhf::ppo_trainer
