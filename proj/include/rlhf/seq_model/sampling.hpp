#pragma once

#include <cstdint>
#include <optional>
#include <utility>

#include "rlhf/seq_model/policy.hpp"

namespace rlhf::seq_model {

// A required symbol that must appear at some 0-based position in
// [window_lo, window_hi] of the continuation.
struct SampleConstraint {
  TokenId required_symbol = 0;
  std::size_t window_lo = 0;
  std::size_t window_hi = 0;

  void validate() const;
};

struct ConstrainedSample {
  TokenSeq y;
  bool satisfied = false;
  std::size_t attempts = 0;
};

inline constexpr std::size_t kDefaultMaxAttempts = 32;
inline constexpr std::uint64_t kDefaultEnumerationCap = 1'000'000;

// Per-token log-probabilities of seq under the model (chain rule from the
// empty prefix). Throws on empty seq or out-of-range ids.
std::vector<double> seq_logprob(const PolicyModel& model, std::span<const TokenId> seq);
double seq_logprob_total(const PolicyModel& model, std::span<const TokenId> seq);

// log p(y | x) = log p(xy) - log p(x), evaluated as the sum of the y-token
// conditionals.
double conditional_logprob(const PolicyModel& model, std::span<const TokenId> x,
                           std::span<const TokenId> y);

// Draws one token from a log-distribution given a uniform in [0, 1).
TokenId draw_token(std::span<const double> logprobs, double u);

TokenSeq sample(const PolicyModel& model, std::span<const TokenId> x,
                std::size_t n_tokens, std::uint64_t seed);

// First position inside the window that holds the required symbol.
std::optional<std::size_t> constraint_position(std::span<const TokenId> y,
                                               const SampleConstraint& c);

// Rejection sampling: draws max_tokens = window_hi + 1 tokens per attempt and
// truncates right after the first required symbol inside the window. After
// max_attempts failures returns the last draw, unsatisfied.
ConstrainedSample sample_constrained(const PolicyModel& model, std::span<const TokenId> x,
                                     std::size_t max_tokens, const SampleConstraint& c,
                                     std::size_t max_attempts, std::uint64_t seed);

// All |V|^len continuations of x with their probabilities, in lexicographic
// order. Throws when |V|^len exceeds cap.
std::vector<std::pair<TokenSeq, double>> enumerate_outputs(
    const PolicyModel& model, std::span<const TokenId> x, std::size_t len,
    std::uint64_t cap = kDefaultEnumerationCap);

}  // namespace rlhf::seq_model

namespace rlhf::seq_model {

// Context distribution D: uniform over a fixed list of contexts.
class ContextSet {
 public:
  ContextSet() = default;
  explicit ContextSet(std::vector<TokenSeq> contexts);

  const TokenSeq& draw(std::uint64_t seed) const;
  const std::vector<TokenSeq>& contexts() const { return contexts_; }
  std::size_t size() const { return contexts_.size(); }
  bool empty() const { return contexts_.empty(); }

 private:
  std::vector<TokenSeq> contexts_;
};

}  // namespace rlhf::seq_model
