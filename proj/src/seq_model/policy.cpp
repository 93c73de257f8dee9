#include "rlhf/seq_model/policy.hpp"

#include <stdexcept>

#include "rlhf/seq_model/neural_lm.hpp"
#include "rlhf/seq_model/tabular_lm.hpp"

namespace rlhf::seq_model {

void check_ids(std::span<const TokenId> ids, std::size_t vocab_size) {
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab_size)
      throw std::out_of_range("token id " + std::to_string(ids[i]) + " at position " +
                              std::to_string(i) + " outside vocabulary of size " +
                              std::to_string(vocab_size));
}

TokenSeq concat(std::span<const TokenId> x, std::span<const TokenId> y) {
  TokenSeq out(x.begin(), x.end());
  out.insert(out.end(), y.begin(), y.end());
  return out;
}

std::unique_ptr<PolicyModel> model_from_checkpoint(const Checkpoint& ck) {
  if (ck.kind == "tabular") return std::make_unique<TabularLM>(TabularLM::from_checkpoint(ck));
  if (ck.kind == "neural") return std::make_unique<NeuralLM>(NeuralLM::from_checkpoint(ck));
  throw std::runtime_error("checkpoint: unknown model kind '" + ck.kind + "'");
}

std::unique_ptr<PolicyModel> load_model(const std::filesystem::path& path) {
  return model_from_checkpoint(Checkpoint::load(path));
}

void save_model(const PolicyModel& model, const std::filesystem::path& path) {
  model.to_checkpoint().save(path);
}

}  // namespace rlhf::seq_model
