#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rlhf/seq_model/checkpoint.hpp"
#include "rlhf/seq_model/vocab.hpp"

namespace rlhf::seq_model {

// Per-token view of a continuation y after context x: log pi(y_t | x y_<t)
// and the backbone feature vector at the position that emits y_t.
struct TokenEval {
  std::vector<double> logprobs;
  std::vector<std::vector<double>> features;
};

// Autoregressive distribution over token sequences. Implementations are
// immutable during inference; training mutates parameters() through a single
// owner.
class PolicyModel {
 public:
  virtual ~PolicyModel() = default;

  virtual std::string kind() const = 0;
  virtual std::size_t vocab_size() const = 0;
  virtual std::unique_ptr<PolicyModel> clone() const = 0;

  // Log-distribution over the next token after prefix (sums to 1 in prob).
  virtual std::vector<double> next_logprobs(std::span<const TokenId> prefix) const = 0;

  // log p(seq[t] | seq[0..t)) for t in [start, seq.size()).
  virtual std::vector<double> token_logprobs(std::span<const TokenId> seq,
                                             std::size_t start) const = 0;

  virtual TokenEval evaluate(std::span<const TokenId> x,
                             std::span<const TokenId> y) const = 0;
  virtual std::size_t feature_width() const = 0;

  // Final embedding of xy: the backbone state after the last token.
  virtual std::vector<double> final_embedding(std::span<const TokenId> x,
                                              std::span<const TokenId> y) const = 0;
  virtual std::size_t embedding_width() const = 0;

  virtual std::span<double> parameters() = 0;
  virtual std::span<const double> parameters() const = 0;
  // True when parameters must stay float-representable after updates.
  virtual bool float_parameters() const = 0;

  // grad += sum_t coef[t] * d/dtheta log p(y_t | x y_<t)
  virtual void accumulate_logprob_grad(std::span<const TokenId> x,
                                       std::span<const TokenId> y,
                                       std::span<const double> coef,
                                       std::span<double> grad) const = 0;

  // grad += d/dtheta <dembed, final_embedding(x, y)>. No-op for backbones
  // whose embedding has no parameters.
  virtual void accumulate_embedding_grad(std::span<const TokenId> x,
                                         std::span<const TokenId> y,
                                         std::span<const double> dembed,
                                         std::span<double> grad) const = 0;

  virtual Checkpoint to_checkpoint() const = 0;
};

std::unique_ptr<PolicyModel> model_from_checkpoint(const Checkpoint& ck);
std::unique_ptr<PolicyModel> load_model(const std::filesystem::path& path);
void save_model(const PolicyModel& model, const std::filesystem::path& path);

// Throws std::out_of_range when an id is outside [0, vocab_size).
void check_ids(std::span<const TokenId> ids, std::size_t vocab_size);

TokenSeq concat(std::span<const TokenId> x, std::span<const TokenId> y);

}  // namespace rlhf::seq_model
