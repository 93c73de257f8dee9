#include "rlhf/seq_model/lm_training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "rlhf/common/adam.hpp"
#include "rlhf/common/random.hpp"

namespace rlhf::seq_model {
namespace {

std::vector<TokenSeq> chunk_corpus(const std::vector<TokenSeq>& corpus, std::size_t max_len) {
  std::vector<TokenSeq> out;
  for (const auto& doc : corpus) {
    for (std::size_t i = 0; i < doc.size(); i += max_len)
      out.emplace_back(doc.begin() + static_cast<std::ptrdiff_t>(i),
                       doc.begin() + static_cast<std::ptrdiff_t>(std::min(doc.size(), i + max_len)));
  }
  return out;
}

void check_finite(double loss, std::size_t step) {
  if (!std::isfinite(loss))
    throw TrainingDiverged("training diverged: non-finite loss at step " +
                           std::to_string(step));
}

}  // namespace

double mean_nll(const PolicyModel& model, const std::vector<TokenSeq>& corpus) {
  double total = 0.0;
  std::size_t tokens = 0;
  for (const auto& seq : corpus) {
    if (seq.empty()) continue;
    for (double lp : model.token_logprobs(seq, 0)) total -= lp;
    tokens += seq.size();
  }
  return tokens == 0 ? 0.0 : total / static_cast<double>(tokens);
}

TrainLog train_lm(NeuralLM& model, const std::vector<TokenSeq>& corpus,
                  const LmTrainConfig& config) {
  if (corpus.empty()) throw std::invalid_argument("train_lm: empty corpus");
  const auto docs = chunk_corpus(corpus, model.config().context_len - 1);
  TrainLog log;
  Adam adam(model.num_parameters(), {.lr = config.lr});
  Rng rng(config.seed);
  Rng dropout_rng(derive_seed(config.seed, 1));
  std::vector<double> grad(model.num_parameters());
  std::vector<std::size_t> order(docs.size());
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng.engine());
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      if (config.max_steps != 0 && step >= config.max_steps) break;
      std::fill(grad.begin(), grad.end(), 0.0);
      double loss = 0.0;
      std::size_t tokens = 0;
      for (std::size_t i = b; i < std::min(order.size(), b + config.batch_size); ++i) {
        const auto& doc = docs[order[i]];
        if (doc.empty()) continue;
        loss += model.nll_and_grad(doc, 0, grad, config.dropout, &dropout_rng);
        tokens += doc.size();
      }
      if (tokens == 0) continue;
      const double inv = 1.0 / static_cast<double>(tokens);
      for (double& g : grad) g *= inv;
      check_finite(loss * inv, step);
      adam.step(model.parameters(), grad, true);
      log.step_loss.push_back(loss * inv);
      log.step_lr.push_back(config.lr);
      ++step;
    }
    const double nll = mean_nll(model, docs);
    check_finite(nll, step);
    log.epoch_nll.push_back(nll);
  }
  return log;
}

double cosine_lr(double lr0, std::size_t step, std::size_t total_steps) {
  if (total_steps <= 1) return lr0;
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps - 1);
  if (frac >= 1.0) return 0.0;
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

std::vector<double> log_linear_grid(double lo, double hi, std::size_t n) {
  if (n == 0 || !(lo > 0.0) || !(hi >= lo))
    throw std::invalid_argument("log_linear_grid: bad range");
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double frac = n == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n - 1);
    out[i] = std::exp(std::log(lo) + frac * (std::log(hi) - std::log(lo)));
  }
  out.back() = hi;
  return out;
}

TrainLog supervised_finetune(NeuralLM& model,
                             const std::vector<std::pair<TokenSeq, TokenSeq>>& pairs,
                             const FinetuneConfig& config) {
  if (pairs.empty()) throw std::invalid_argument("supervised_finetune: no pairs");
  TrainLog log;
  Adam adam(model.num_parameters(), {.lr = config.lr});
  Rng rng(config.seed);
  Rng dropout_rng(derive_seed(config.seed, 1));
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine());
  const std::size_t total_steps = (pairs.size() + config.batch_size - 1) / config.batch_size;
  std::vector<double> grad(model.num_parameters());
  for (std::size_t step = 0; step < total_steps; ++step) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double loss = 0.0;
    std::size_t tokens = 0;
    const std::size_t b = step * config.batch_size;
    for (std::size_t i = b; i < std::min(pairs.size(), b + config.batch_size); ++i) {
      const auto& [x, y] = pairs[order[i]];
      if (y.empty()) continue;
      loss += model.nll_and_grad(concat(x, y), x.size(), grad, config.dropout, &dropout_rng);
      tokens += y.size();
    }
    if (tokens == 0) continue;
    const double inv = 1.0 / static_cast<double>(tokens);
    for (double& g : grad) g *= inv;
    check_finite(loss * inv, step);
    const double lr = cosine_lr(config.lr, step, total_steps);
    adam.set_lr(lr);
    adam.step(model.parameters(), grad, true);
    log.step_loss.push_back(loss * inv);
    log.step_lr.push_back(lr);
  }
  return log;
}

TabularLM fit_tabular(const std::vector<TokenSeq>& corpus, std::size_t vocab_size,
                      std::size_t order, double alpha) {
  if (corpus.empty()) throw std::invalid_argument("fit_tabular: empty corpus");
  if (!(alpha > 0.0)) throw std::invalid_argument("fit_tabular: alpha must be positive");
  TabularLM m(vocab_size, order);
  std::vector<double> counts(m.n_contexts() * vocab_size, alpha);
  for (const auto& doc : corpus) {
    check_ids(doc, vocab_size);
    std::span<const TokenId> s(doc);
    for (std::size_t t = 0; t < doc.size(); ++t)
      counts[m.context_index(s.first(t)) * vocab_size + static_cast<std::size_t>(doc[t])] += 1.0;
  }
  auto logits = m.parameters();
  for (std::size_t i = 0; i < counts.size(); ++i) logits[i] = std::log(counts[i]);
  return m;
}

}  // namespace rlhf::seq_model
