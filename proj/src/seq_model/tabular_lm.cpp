#include "rlhf/seq_model/tabular_lm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "rlhf/common/random.hpp"
#include "rlhf/simd/kernels.hpp"

namespace rlhf::seq_model {

TabularLM::TabularLM(std::size_t vocab_size, std::size_t order)
    : vocab_size_(vocab_size), order_(order) {
  if (vocab_size == 0) throw std::invalid_argument("tabular: empty vocabulary");
  std::size_t rows = 0;
  std::size_t level = 1;
  for (std::size_t k = 0; k <= order; ++k) {
    level_offset_.push_back(rows);
    rows += level;
    if (rows > (std::size_t{1} << 24))
      throw std::invalid_argument("tabular: context table too large");
    level *= vocab_size;
  }
  n_contexts_ = rows;
  logits_.assign(n_contexts_ * vocab_size_, 0.0);
}

TabularLM TabularLM::from_table(std::size_t vocab_size, std::size_t order,
                                const std::map<TokenSeq, std::vector<double>>& table) {
  TabularLM m(vocab_size, order);
  for (const auto& [ctx, probs] : table) m.set_row_probs(ctx, probs);
  return m;
}

TabularLM TabularLM::random(std::size_t vocab_size, std::size_t order,
                            std::uint64_t seed, double logit_scale) {
  TabularLM m(vocab_size, order);
  Rng rng(seed);
  for (double& v : m.logits_) v = rng.normal(0.0, logit_scale);
  return m;
}

void TabularLM::set_row_probs(std::span<const TokenId> context,
                              std::span<const double> probs) {
  if (context.size() > order_)
    throw std::invalid_argument("tabular: context longer than model order");
  check_ids(context, vocab_size_);
  if (probs.size() != vocab_size_)
    throw std::invalid_argument("tabular: probability row has wrong width");
  double total = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) throw std::invalid_argument("tabular: negative probability");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw std::invalid_argument("tabular: probability row does not sum to 1");
  std::size_t row = level_offset_[context.size()];
  std::size_t code = 0;
  for (TokenId t : context) code = code * vocab_size_ + static_cast<std::size_t>(t);
  row += code;
  for (std::size_t j = 0; j < vocab_size_; ++j)
    logits_[row * vocab_size_ + j] =
        probs[j] > 0.0 ? std::log(probs[j]) : -std::numeric_limits<double>::infinity();
}

std::size_t TabularLM::context_index(std::span<const TokenId> prefix) const {
  const std::size_t k = std::min(order_, prefix.size());
  std::size_t code = 0;
  for (std::size_t i = prefix.size() - k; i < prefix.size(); ++i)
    code = code * vocab_size_ + static_cast<std::size_t>(prefix[i]);
  return level_offset_[k] + code;
}

std::vector<double> TabularLM::row_logprobs(std::size_t row) const {
  std::span<const double> r(logits_.data() + row * vocab_size_, vocab_size_);
  std::vector<double> out(vocab_size_);
  simd::log_softmax(r, out);
  return out;
}

double TabularLM::token_logprob(std::size_t row, TokenId token) const {
  std::span<const double> r(logits_.data() + row * vocab_size_, vocab_size_);
  return r[static_cast<std::size_t>(token)] - simd::log_sum_exp(r);
}

TabularLM TabularLM::with_temperature(double t) const {
  if (!(t > 0.0)) throw std::invalid_argument("temperature must be positive");
  TabularLM m = *this;
  for (double& v : m.logits_)
    if (std::isfinite(v)) v /= t;
  return m;
}

TabularLM TabularLM::with_order(std::size_t order) const {
  if (order < order_) throw std::invalid_argument("tabular: cannot shorten model order");
  TabularLM m(vocab_size_, order);
  TokenSeq window;
  for (std::size_t k = 0; k <= order; ++k) {
    window.assign(k, 0);
    const std::size_t rows = (k + 1 <= order ? m.level_offset_[k + 1] : m.n_contexts_) -
                             m.level_offset_[k];
    for (std::size_t code = 0; code < rows; ++code) {
      std::size_t c = code;
      for (std::size_t i = k; i-- > 0;) {
        window[i] = static_cast<TokenId>(c % vocab_size_);
        c /= vocab_size_;
      }
      const std::size_t src = context_index(window);
      std::copy_n(logits_.begin() + static_cast<std::ptrdiff_t>(src * vocab_size_),
                  vocab_size_,
                  m.logits_.begin() +
                      static_cast<std::ptrdiff_t>((m.level_offset_[k] + code) * vocab_size_));
    }
  }
  return m;
}

std::unique_ptr<PolicyModel> TabularLM::clone() const {
  return std::make_unique<TabularLM>(*this);
}

std::vector<double> TabularLM::next_logprobs(std::span<const TokenId> prefix) const {
  check_ids(prefix, vocab_size_);
  return row_logprobs(context_index(prefix));
}

std::vector<double> TabularLM::token_logprobs(std::span<const TokenId> seq,
                                              std::size_t start) const {
  check_ids(seq, vocab_size_);
  std::vector<double> out;
  for (std::size_t t = start; t < seq.size(); ++t)
    out.push_back(token_logprob(context_index(seq.first(t)), seq[t]));
  return out;
}

TokenEval TabularLM::evaluate(std::span<const TokenId> x,
                              std::span<const TokenId> y) const {
  const TokenSeq xy = concat(x, y);
  check_ids(xy, vocab_size_);
  TokenEval ev;
  std::span<const TokenId> s(xy);
  for (std::size_t t = 0; t < y.size(); ++t) {
    const std::size_t row = context_index(s.first(x.size() + t));
    ev.logprobs.push_back(token_logprob(row, y[t]));
    std::vector<double> f(feature_width(), 0.0);
    f[row] = 1.0;
    f[n_contexts_ + std::min(t, kMaxPositions - 1)] = 1.0;
    ev.features.push_back(std::move(f));
  }
  return ev;
}

std::vector<double> TabularLM::final_embedding(std::span<const TokenId> x,
                                               std::span<const TokenId> y) const {
  const TokenSeq xy = concat(x, y);
  check_ids(xy, vocab_size_);
  std::vector<double> e(embedding_width(), 0.0);
  for (TokenId t : y) e[static_cast<std::size_t>(t)] += 1.0;
  e[vocab_size_ + context_index(xy)] = 1.0;
  return e;
}

void TabularLM::accumulate_logprob_grad(std::span<const TokenId> x,
                                        std::span<const TokenId> y,
                                        std::span<const double> coef,
                                        std::span<double> grad) const {
  const TokenSeq xy = concat(x, y);
  check_ids(xy, vocab_size_);
  std::span<const TokenId> s(xy);
  for (std::size_t t = 0; t < y.size(); ++t) {
    if (coef[t] == 0.0) continue;
    const std::size_t row = context_index(s.first(x.size() + t));
    const auto lp = row_logprobs(row);
    double* g = grad.data() + row * vocab_size_;
    for (std::size_t j = 0; j < vocab_size_; ++j) g[j] -= coef[t] * std::exp(lp[j]);
    g[static_cast<std::size_t>(y[t])] += coef[t];
  }
}

Checkpoint TabularLM::to_checkpoint() const {
  Checkpoint ck;
  ck.kind = kind();
  ck.config = {{"vocab_size", vocab_size_}, {"order", order_}};
  ck.arrays.push_back({"logits", DType::kF64, logits_});
  return ck;
}

TabularLM TabularLM::from_checkpoint(const Checkpoint& ck) {
  if (ck.kind != "tabular") throw std::runtime_error("checkpoint is not tabular");
  TabularLM m(ck.config.at("vocab_size").get<std::size_t>(),
              ck.config.at("order").get<std::size_t>());
  const auto& a = ck.array("logits");
  if (a.values.size() != m.logits_.size())
    throw std::runtime_error("checkpoint: tabular logits size mismatch");
  m.logits_ = a.values;
  return m;
}

}  // namespace rlhf::seq_model
