#pragma once

#include <cstdint>
#include <map>

#include "rlhf/seq_model/policy.hpp"

namespace rlhf::seq_model {

// Markov model of fixed order with one logit row per context window. Contexts
// shorter than the order (near the start of a sequence) have their own rows,
// so the table is dense over all windows of length 0..order.
//
// Parameters are the logits; conditionals are log_softmax of a row. A zero
// probability is a -inf logit and stays zero under gradient updates.
class TabularLM final : public PolicyModel {
 public:
  static constexpr std::size_t kMaxPositions = 64;

  TabularLM(std::size_t vocab_size, std::size_t order);

  // Rows not listed in the table stay uniform. Each listed vector must be a
  // probability vector (nonnegative, sums to 1 within 1e-9).
  static TabularLM from_table(std::size_t vocab_size, std::size_t order,
                              const std::map<TokenSeq, std::vector<double>>& table);
  // Logits drawn i.i.d. normal(0, logit_scale).
  static TabularLM random(std::size_t vocab_size, std::size_t order,
                          std::uint64_t seed, double logit_scale = 1.0);
  static TabularLM from_checkpoint(const Checkpoint& ck);

  std::size_t order() const { return order_; }
  std::size_t n_contexts() const { return n_contexts_; }
  std::size_t context_index(std::span<const TokenId> prefix) const;
  std::vector<double> row_logprobs(std::size_t row) const;
  void set_row_probs(std::span<const TokenId> context, std::span<const double> probs);
  // logits /= t for every row.
  TabularLM with_temperature(double t) const;
  // Same distribution re-expressed with a longer context window, so a policy
  // initialized from this model can condition on more history.
  TabularLM with_order(std::size_t order) const;

  std::string kind() const override { return "tabular"; }
  std::size_t vocab_size() const override { return vocab_size_; }
  std::unique_ptr<PolicyModel> clone() const override;
  std::vector<double> next_logprobs(std::span<const TokenId> prefix) const override;
  std::vector<double> token_logprobs(std::span<const TokenId> seq,
                                     std::size_t start) const override;
  TokenEval evaluate(std::span<const TokenId> x,
                     std::span<const TokenId> y) const override;
  std::size_t feature_width() const override { return n_contexts_ + kMaxPositions; }
  std::vector<double> final_embedding(std::span<const TokenId> x,
                                      std::span<const TokenId> y) const override;
  std::size_t embedding_width() const override { return vocab_size_ + n_contexts_; }
  std::span<double> parameters() override { return logits_; }
  std::span<const double> parameters() const override { return logits_; }
  bool float_parameters() const override { return false; }
  void accumulate_logprob_grad(std::span<const TokenId> x, std::span<const TokenId> y,
                               std::span<const double> coef,
                               std::span<double> grad) const override;
  void accumulate_embedding_grad(std::span<const TokenId>, std::span<const TokenId>,
                                 std::span<const double>,
                                 std::span<double>) const override {}
  Checkpoint to_checkpoint() const override;

 private:
  double token_logprob(std::size_t row, TokenId token) const;

  std::size_t vocab_size_;
  std::size_t order_;
  std::size_t n_contexts_;
  std::vector<std::size_t> level_offset_;  // first row of windows of length k
  std::vector<double> logits_;
};

}  // namespace rlhf::seq_model
