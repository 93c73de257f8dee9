#include "rlhf/seq_model/sampling.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>

#include "rlhf/common/random.hpp"

namespace rlhf::seq_model {

void SampleConstraint::validate() const {
  if (window_lo > window_hi)
    throw std::invalid_argument("constraint: window_lo must not exceed window_hi");
}

std::vector<double> seq_logprob(const PolicyModel& model, std::span<const TokenId> seq) {
  if (seq.empty()) throw std::invalid_argument("seq_logprob: empty sequence");
  check_ids(seq, model.vocab_size());
  return model.token_logprobs(seq, 0);
}

double seq_logprob_total(const PolicyModel& model, std::span<const TokenId> seq) {
  double total = 0.0;
  for (double v : seq_logprob(model, seq)) total += v;
  return total;
}

double conditional_logprob(const PolicyModel& model, std::span<const TokenId> x,
                           std::span<const TokenId> y) {
  if (y.empty()) throw std::invalid_argument("conditional_logprob: empty continuation");
  const TokenSeq xy = concat(x, y);
  check_ids(xy, model.vocab_size());
  double total = 0.0;
  for (double v : model.token_logprobs(xy, x.size())) total += v;
  return total;
}

TokenId draw_token(std::span<const double> logprobs, double u) {
  double acc = 0.0;
  std::size_t last_nonzero = 0;
  for (std::size_t j = 0; j < logprobs.size(); ++j) {
    const double p = std::exp(logprobs[j]);
    if (p > 0.0) last_nonzero = j;
    acc += p;
    if (u < acc) return static_cast<TokenId>(j);
  }
  return static_cast<TokenId>(last_nonzero);
}

TokenSeq sample(const PolicyModel& model, std::span<const TokenId> x,
                std::size_t n_tokens, std::uint64_t seed) {
  if (n_tokens == 0) throw std::invalid_argument("sample: n_tokens must be >= 1");
  check_ids(x, model.vocab_size());
  Rng rng(seed);
  TokenSeq prefix(x.begin(), x.end());
  for (std::size_t i = 0; i < n_tokens; ++i)
    prefix.push_back(draw_token(model.next_logprobs(prefix), rng.uniform()));
  return TokenSeq(prefix.begin() + static_cast<std::ptrdiff_t>(x.size()), prefix.end());
}

std::optional<std::size_t> constraint_position(std::span<const TokenId> y,
                                               const SampleConstraint& c) {
  for (std::size_t t = c.window_lo; t <= c.window_hi && t < y.size(); ++t)
    if (y[t] == c.required_symbol) return t;
  return std::nullopt;
}

ConstrainedSample sample_constrained(const PolicyModel& model, std::span<const TokenId> x,
                                     std::size_t max_tokens, const SampleConstraint& c,
                                     std::size_t max_attempts, std::uint64_t seed) {
  c.validate();
  if (c.window_hi >= max_tokens)
    throw std::invalid_argument("sample_constrained: window exceeds max_tokens");
  if (max_attempts == 0) throw std::invalid_argument("sample_constrained: no attempts");
  ConstrainedSample out;
  for (std::size_t a = 0; a < max_attempts; ++a) {
    out.y = sample(model, x, max_tokens, derive_seed(seed, a));
    out.attempts = a + 1;
    if (auto pos = constraint_position(out.y, c)) {
      out.y.resize(*pos + 1);
      out.satisfied = true;
      return out;
    }
  }
  return out;
}

std::vector<std::pair<TokenSeq, double>> enumerate_outputs(const PolicyModel& model,
                                                           std::span<const TokenId> x,
                                                           std::size_t len,
                                                           std::uint64_t cap) {
  const std::size_t v = model.vocab_size();
  double count = 1.0;
  for (std::size_t i = 0; i < len; ++i) count *= static_cast<double>(v);
  if (count > static_cast<double>(cap))
    throw std::invalid_argument("enumerate_outputs: |V|^len exceeds enumeration cap");
  check_ids(x, v);
  std::vector<std::pair<TokenSeq, double>> out;
  out.reserve(static_cast<std::size_t>(count));
  TokenSeq prefix(x.begin(), x.end());
  std::function<void(double)> rec = [&](double logp) {
    if (prefix.size() == x.size() + len) {
      out.emplace_back(TokenSeq(prefix.begin() + static_cast<std::ptrdiff_t>(x.size()),
                                prefix.end()),
                       std::exp(logp));
      return;
    }
    const auto lp = model.next_logprobs(prefix);
    for (std::size_t j = 0; j < v; ++j) {
      prefix.push_back(static_cast<TokenId>(j));
      rec(logp + lp[j]);
      prefix.pop_back();
    }
  };
  rec(0.0);
  return out;
}

}  // namespace rlhf::seq_model

namespace rlhf::seq_model {

ContextSet::ContextSet(std::vector<TokenSeq> contexts) : contexts_(std::move(contexts)) {
  if (contexts_.empty()) throw std::invalid_argument("context set is empty");
}

const TokenSeq& ContextSet::draw(std::uint64_t seed) const {
  if (contexts_.empty()) throw std::logic_error("context set is empty");
  return contexts_[Rng(seed).below(contexts_.size())];
}

}  // namespace rlhf::seq_model
