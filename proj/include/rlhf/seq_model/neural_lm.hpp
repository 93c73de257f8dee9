#pragma once

#include <cstdint>

#include <json.hpp>

#include "rlhf/common/random.hpp"
#include "rlhf/seq_model/policy.hpp"

namespace rlhf::seq_model {

struct NeuralConfig {
  std::size_t vocab_size = 0;
  std::size_t n_layers = 2;
  std::size_t n_heads = 2;
  std::size_t d_model = 64;
  std::size_t context_len = 64;  // input positions, including the BOS slot
  double init_std = 0.02;
};

void to_json(nlohmann::json& j, const NeuralConfig& c);
void from_json(const nlohmann::json& j, NeuralConfig& c);

// Small pre-LayerNorm decoder-only transformer with learned positions, GELU
// MLPs (4x width) and an untied output head. Input is an implicit BOS token
// followed by the sequence; output row i predicts token i. Row n (after the
// last token) is the final embedding used by reward heads.
//
// Parameters live in one flat double array whose values are kept
// float-representable, so float32 checkpoints round-trip bit-exactly.
class NeuralLM final : public PolicyModel {
 public:
  struct LayerOffsets {
    std::size_t ln1_g, ln1_b, w_qkv, b_qkv, w_o, b_o;
    std::size_t ln2_g, ln2_b, w_fc, b_fc, w_proj, b_proj;
  };

  struct LayerCache {
    std::vector<double> xhat1, rstd1, a1, qkv, att, ctx, mask1;
    std::vector<double> xhat2, rstd2, a2, fc, act, mask2;
  };

  // Activations of one forward pass over T = 1 + |tokens| positions.
  struct Cache {
    std::vector<TokenId> inputs;  // BOS first
    std::size_t positions = 0;
    std::vector<LayerCache> layers;
    std::vector<double> xhatf, rstdf;
    std::vector<double> hidden;  // positions x d_model, after final LayerNorm
    std::vector<double> logits;  // positions x vocab, already divided by T
  };

  NeuralLM(NeuralConfig config, std::uint64_t seed);
  static NeuralLM from_checkpoint(const Checkpoint& ck);

  const NeuralConfig& config() const { return config_; }
  double temperature() const { return temperature_; }
  // Conditionals of the result are softmax(logits / t) of this model's logits.
  NeuralLM with_temperature(double t) const;
  std::size_t num_parameters() const { return params_.size(); }

  Cache forward(std::span<const TokenId> tokens, double dropout = 0.0,
                Rng* rng = nullptr) const;
  // grad += backprop of (dlogits, dhidden), both positions-major.
  void backward(const Cache& cache, std::span<const double> dlogits,
                std::span<const double> dhidden, std::span<double> grad) const;

  // Sum over t >= loss_start of -log p(seq[t] | seq[0..t)); grad += its gradient.
  double nll_and_grad(std::span<const TokenId> seq, std::size_t loss_start,
                      std::span<double> grad, double dropout = 0.0,
                      Rng* rng = nullptr) const;

  // Named parameter blocks, in storage order.
  struct Segment {
    std::string name;
    std::size_t offset;
    std::size_t size;
  };
  const std::vector<Segment>& segments() const { return segments_; }

  std::string kind() const override { return "neural"; }
  std::size_t vocab_size() const override { return config_.vocab_size; }
  std::unique_ptr<PolicyModel> clone() const override;
  std::vector<double> next_logprobs(std::span<const TokenId> prefix) const override;
  std::vector<double> token_logprobs(std::span<const TokenId> seq,
                                     std::size_t start) const override;
  TokenEval evaluate(std::span<const TokenId> x,
                     std::span<const TokenId> y) const override;
  std::size_t feature_width() const override { return config_.d_model; }
  std::vector<double> final_embedding(std::span<const TokenId> x,
                                      std::span<const TokenId> y) const override;
  std::size_t embedding_width() const override { return config_.d_model; }
  std::span<double> parameters() override { return params_; }
  std::span<const double> parameters() const override { return params_; }
  bool float_parameters() const override { return true; }
  void accumulate_logprob_grad(std::span<const TokenId> x, std::span<const TokenId> y,
                               std::span<const double> coef,
                               std::span<double> grad) const override;
  void accumulate_embedding_grad(std::span<const TokenId> x, std::span<const TokenId> y,
                                 std::span<const double> dembed,
                                 std::span<double> grad) const override;
  Checkpoint to_checkpoint() const override;

 private:
  void layout();
  // Drops leading tokens so that 1 + |seq| fits the context; returns how many
  // were dropped. Throws if tokens at or after keep_from would be dropped.
  std::size_t window_drop(std::size_t seq_len, std::size_t keep_from) const;

  NeuralConfig config_;
  double temperature_ = 1.0;
  std::vector<double> params_;
  std::vector<Segment> segments_;
  std::size_t tok_emb_ = 0, pos_emb_ = 0, lnf_g_ = 0, lnf_b_ = 0, w_head_ = 0, b_head_ = 0;
  std::vector<LayerOffsets> layer_off_;
};

NeuralLM apply_temperature(const NeuralLM& model, double t);

}  // namespace rlhf::seq_model
