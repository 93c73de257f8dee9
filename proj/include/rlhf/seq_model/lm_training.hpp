#pragma once

#include <cstdint>
#include <stdexcept>
#include <utility>

#include "rlhf/seq_model/neural_lm.hpp"
#include "rlhf/seq_model/tabular_lm.hpp"

namespace rlhf::seq_model {

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LmTrainConfig {
  std::size_t epochs = 1;
  double lr = 1e-3;
  std::size_t batch_size = 8;
  double dropout = 0.0;
  std::uint64_t seed = 0;
  // 0 = no limit.
  std::size_t max_steps = 0;
};

struct FinetuneConfig {
  double lr = 1e-4;
  std::size_t batch_size = 8;
  double dropout = 0.1;
  std::uint64_t seed = 0;
};

struct TrainLog {
  std::vector<double> step_loss;   // mean per-token NLL of each batch
  std::vector<double> step_lr;
  std::vector<double> epoch_nll;   // mean per-token NLL over the corpus, after each epoch
};

// Mean per-token negative log-likelihood (tokens after the first are scored
// against the implicit BOS-conditioned model; the first token is scored too).
double mean_nll(const PolicyModel& model, const std::vector<TokenSeq>& corpus);

// Adam on token-level NLL over a seeded shuffle each epoch. Documents longer
// than the context are split into context-sized chunks.
TrainLog train_lm(NeuralLM& model, const std::vector<TokenSeq>& corpus,
                  const LmTrainConfig& config);

// lr0 * (1 + cos(pi * step / (total_steps - 1))) / 2: lr0 at step 0, 0 at the
// last step.
double cosine_lr(double lr0, std::size_t step, std::size_t total_steps);

// n log-linearly spaced values from lo to hi inclusive.
std::vector<double> log_linear_grid(double lo, double hi, std::size_t n);
inline std::vector<double> finetune_lr_grid() { return log_linear_grid(1e-4, 3e-4, 8); }

// One epoch over (x, y) pairs; the loss covers y tokens only.
TrainLog supervised_finetune(NeuralLM& model,
                             const std::vector<std::pair<TokenSeq, TokenSeq>>& pairs,
                             const FinetuneConfig& config);

// Maximum-likelihood Markov table from counts with add-alpha smoothing.
TabularLM fit_tabular(const std::vector<TokenSeq>& corpus, std::size_t vocab_size,
                      std::size_t order, double alpha = 0.5);

}  // namespace rlhf::seq_model
