#include "rlhf/ppo_trainer/kl_control.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "rlhf/common/random.hpp"

namespace rlhf::ppo_trainer {

double shaped_reward(double r_score, double logp_pi, double logp_rho, double beta) {
  if (!std::isfinite(r_score) || !std::isfinite(logp_pi) || !std::isfinite(logp_rho) ||
      !std::isfinite(beta))
    throw std::invalid_argument("shaped_reward: non-finite input");
  return r_score - beta * (logp_pi - logp_rho);
}

void KLControllerState::validate() const {
  if (!(beta > 0.0)) throw std::invalid_argument("kl controller: beta must be positive");
  if (target_kl && !(*target_kl > 0.0))
    throw std::invalid_argument("kl controller: target must be positive");
  if (!(clip >= 0.0)) throw std::invalid_argument("kl controller: clip must be nonnegative");
}

KLControllerState controller_update(const KLControllerState& state, double measured_kl) {
  if (!state.target_kl) return state;
  const double target = *state.target_kl;
  const double e = std::clamp((measured_kl - target) / target, -state.clip, state.clip);
  KLControllerState next = state;
  next.beta = state.beta * (1.0 + state.k_beta * e);
  return next;
}

double measure_kl(const PolicyModel& pi, const PolicyModel& rho, const ContextSet& contexts,
                  std::size_t n_samples, std::size_t response_len, std::uint64_t seed) {
  if (n_samples == 0) throw std::invalid_argument("measure_kl: need at least one sample");
  double total = 0.0;
  for (std::size_t i = 0; i < n_samples; ++i) {
    const auto& x = contexts.draw(derive_seed(seed, 2 * i));
    const auto y = seq_model::sample(pi, x, response_len, derive_seed(seed, 2 * i + 1));
    total += seq_model::conditional_logprob(pi, x, y) - seq_model::conditional_logprob(rho, x, y);
  }
  return total / static_cast<double>(n_samples);
}

double exact_kl(const PolicyModel& pi, const PolicyModel& rho, const ContextSet& contexts,
                std::size_t response_len, std::uint64_t cap) {
  if (contexts.empty()) throw std::invalid_argument("exact_kl: no contexts");
  double total = 0.0;
  for (const auto& x : contexts.contexts()) {
    double kl = 0.0;
    for (const auto& [y, p] : seq_model::enumerate_outputs(pi, x, response_len, cap)) {
      if (p == 0.0) continue;
      const double lq = seq_model::conditional_logprob(rho, x, y);
      if (lq == -std::numeric_limits<double>::infinity())
        return std::numeric_limits<double>::infinity();
      kl += p * (seq_model::conditional_logprob(pi, x, y) - lq);
    }
    total += kl;
  }
  return total / static_cast<double>(contexts.size());
}

}  // namespace rlhf::ppo_trainer
