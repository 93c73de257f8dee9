#include "rlhf/reward_model/reward_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "rlhf/common/adam.hpp"
#include "rlhf/common/random.hpp"
#include "rlhf/simd/kernels.hpp"

namespace rlhf::reward_model {

RewardModel::RewardModel(std::shared_ptr<const PolicyModel> backbone, std::uint64_t seed)
    : backbone_(std::move(backbone)) {
  if (!backbone_) throw std::invalid_argument("reward model: null backbone");
  *this = reinit_head(seed);
}

void RewardModel::set_head(std::vector<double> weights, double bias) {
  if (weights.size() != backbone_->embedding_width())
    throw std::invalid_argument("reward model: head width does not match backbone embedding");
  head_ = std::move(weights);
  bias_ = bias;
}

void RewardModel::set_norm(RewardNorm norm) {
  if (!(norm.scale > 0.0) || !std::isfinite(norm.scale) || !std::isfinite(norm.shift))
    throw std::invalid_argument("reward model: normalization scale must be positive");
  norm_ = norm;
}

double RewardModel::raw_from_embedding(std::span<const double> embedding) const {
  if (embedding.size() != head_.size())
    throw std::invalid_argument("reward model: embedding width mismatch");
  return simd::dot(head_, embedding) + bias_;
}

double RewardModel::raw(std::span<const TokenId> x, std::span<const TokenId> y) const {
  return raw_from_embedding(backbone_->final_embedding(x, y));
}

double RewardModel::score(std::span<const TokenId> x, std::span<const TokenId> y) const {
  return normalize_value(raw(x, y));
}

RewardModel RewardModel::reinit_head(std::uint64_t seed) const {
  RewardModel out = *this;
  const std::size_t width = backbone_->embedding_width();
  Rng rng(seed);
  const double std = 1.0 / std::sqrt(static_cast<double>(width));
  out.head_.resize(width);
  for (double& w : out.head_) w = rng.normal(0.0, std);
  out.bias_ = 0.0;
  out.norm_ = {};
  return out;
}

RewardModel RewardModel::with_backbone(std::shared_ptr<const PolicyModel> backbone) const {
  if (!backbone || backbone->embedding_width() != backbone_->embedding_width())
    throw std::invalid_argument("reward model: incompatible backbone");
  RewardModel out = *this;
  out.backbone_ = std::move(backbone);
  return out;
}

seq_model::Checkpoint RewardModel::to_checkpoint() const {
  auto ck = backbone_->to_checkpoint();
  ck.config["reward_head"] = {{"bias", bias_}, {"shift", norm_.shift}, {"scale", norm_.scale},
                              {"backbone_kind", ck.kind}};
  ck.kind = "reward:" + ck.kind;
  ck.arrays.push_back({"reward.head", seq_model::DType::kF64, head_});
  return ck;
}

RewardModel RewardModel::from_checkpoint(const seq_model::Checkpoint& ck,
                                         std::shared_ptr<const PolicyModel> backbone) {
  if (!ck.kind.starts_with("reward:"))
    throw std::runtime_error("checkpoint is not a reward model");
  if (!backbone) {
    seq_model::Checkpoint inner = ck;
    inner.kind = ck.kind.substr(7);
    backbone = seq_model::model_from_checkpoint(inner);
  }
  RewardModel rm(backbone, 0);
  const auto& h = ck.config.at("reward_head");
  rm.set_head(ck.array("reward.head").values, h.at("bias").get<double>());
  rm.set_norm({h.at("shift").get<double>(), h.at("scale").get<double>()});
  return rm;
}

double softmax_nll(std::span<const double> rewards, int b) {
  if (b < 0 || static_cast<std::size_t>(b) >= rewards.size())
    throw std::invalid_argument("softmax_nll: choice out of range");
  for (double r : rewards)
    if (!std::isfinite(r)) throw std::runtime_error("softmax_nll: non-finite reward");
  return simd::log_sum_exp(rewards) - rewards[static_cast<std::size_t>(b)];
}

namespace {

struct RecordEmbeddings {
  std::array<std::vector<double>, 4> e;
};

RecordEmbeddings embed(const PolicyModel& backbone, const PreferenceRecord& r) {
  RecordEmbeddings out;
  for (std::size_t i = 0; i < 4; ++i) out.e[i] = backbone.final_embedding(r.x, r.responses[i]);
  return out;
}

// Adds the gradient of softmax_nll for one record; returns its loss.
double record_grad(const RewardModel& rm, const PreferenceRecord& rec,
                   const RecordEmbeddings& emb, double weight, std::span<double> dhead,
                   double* dbias, std::array<double, 4>* dscore) {
  rec.validate();
  std::array<double, 4> s{};
  for (std::size_t i = 0; i < 4; ++i) s[i] = rm.normalize_value(rm.raw_from_embedding(emb.e[i]));
  const double loss = softmax_nll(s, rec.choice);
  const double lse = simd::log_sum_exp(s);
  const double inv_scale = 1.0 / rm.norm().scale;
  for (std::size_t i = 0; i < 4; ++i) {
    const double g = (std::exp(s[i] - lse) - (static_cast<int>(i) == rec.choice ? 1.0 : 0.0)) * weight;
    if (dscore) (*dscore)[i] = g * inv_scale;
    simd::axpy(g * inv_scale, emb.e[i], dhead);
    *dbias += g * inv_scale;
  }
  return loss;
}

}  // namespace

double preference_nll(const RewardModel& rm, std::span<const PreferenceRecord> batch) {
  if (batch.empty()) throw std::invalid_argument("preference_nll: empty batch");
  double total = 0.0;
  for (const auto& rec : batch) {
    rec.validate();
    std::array<double, 4> s{};
    for (std::size_t i = 0; i < 4; ++i) s[i] = rm.score(rec.x, rec.responses[i]);
    total += softmax_nll(s, rec.choice);
  }
  return total / static_cast<double>(batch.size());
}

HeadGradient preference_nll_grad(const RewardModel& rm, std::span<const PreferenceRecord> batch) {
  if (batch.empty()) throw std::invalid_argument("preference_nll: empty batch");
  HeadGradient g;
  g.head.assign(rm.head().size(), 0.0);
  const double w = 1.0 / static_cast<double>(batch.size());
  for (const auto& rec : batch)
    g.loss += w * record_grad(rm, rec, embed(rm.backbone(), rec), w, g.head, &g.bias, nullptr);
  return g;
}

RMTrainResult train_reward_model(const RewardModel& rm, std::span<const PreferenceRecord> dataset,
                                 const RMTrainConfig& config, std::uint64_t seed) {
  if (dataset.empty()) throw std::invalid_argument("train_reward_model: empty dataset");
  if (config.batch_size == 0) throw std::invalid_argument("train_reward_model: zero batch size");
  RMTrainResult result{rm, {}};
  RewardModel& model = result.model;

  std::unique_ptr<PolicyModel> backbone;
  std::vector<double> backbone_grad;
  std::unique_ptr<Adam> backbone_adam;
  std::vector<RecordEmbeddings> cache;
  if (config.train_backbone) {
    backbone = rm.backbone().clone();
    backbone_grad.resize(backbone->parameters().size());
    backbone_adam = std::make_unique<Adam>(backbone_grad.size(), AdamConfig{.lr = config.lr});
  } else {
    cache.reserve(dataset.size());
    for (const auto& rec : dataset) cache.push_back(embed(rm.backbone(), rec));
  }

  const std::size_t width = model.head().size();
  Adam adam(width + 1, {.lr = config.lr});
  std::vector<double> params(width + 1), grad(width + 1);
  Rng rng(seed);
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng.engine());
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      const std::size_t end = std::min(order.size(), b + config.batch_size);
      const double w = 1.0 / static_cast<double>(end - b);
      std::fill(grad.begin(), grad.end(), 0.0);
      if (backbone) std::fill(backbone_grad.begin(), backbone_grad.end(), 0.0);
      double loss = 0.0;
      for (std::size_t i = b; i < end; ++i) {
        const auto& rec = dataset[order[i]];
        if (backbone) {
          const auto emb = embed(*backbone, rec);
          std::array<double, 4> dscore{};
          loss += w * record_grad(model, rec, emb, w, std::span(grad).first(width), &grad[width], &dscore);
          for (std::size_t k = 0; k < 4; ++k) {
            std::vector<double> dembed(model.head().begin(), model.head().end());
            simd::scale(dscore[k], dembed);
            backbone->accumulate_embedding_grad(rec.x, rec.responses[k], dembed, backbone_grad);
          }
        } else {
          loss += w * record_grad(model, rec, cache[order[i]], w, std::span(grad).first(width),
                                  &grad[width], nullptr);
        }
      }
      if (!std::isfinite(loss))
        throw std::runtime_error("train_reward_model: non-finite loss at batch " +
                                 std::to_string(result.batch_losses.size()));
      std::copy(model.head().begin(), model.head().end(), params.begin());
      params[width] = model.bias();
      adam.step(params, grad);
      model.set_head(std::vector<double>(params.begin(), params.begin() + static_cast<std::ptrdiff_t>(width)),
                     params[width]);
      if (backbone) {
        backbone_adam->step(backbone->parameters(), backbone_grad, backbone->float_parameters());
        model = model.with_backbone(std::shared_ptr<const PolicyModel>(backbone->clone()));
      }
      result.batch_losses.push_back(loss);
    }
  }
  return result;
}

RewardModel normalize_from_raw(const RewardModel& rm, std::span<const double> raw_values) {
  if (raw_values.size() < 2) throw std::invalid_argument("normalize: need at least 2 samples");
  const double n = static_cast<double>(raw_values.size());
  double mean = 0.0;
  for (double v : raw_values) mean += v;
  mean /= n;
  // Second pass removes the rounding left in the first sum.
  double resid = 0.0;
  for (double v : raw_values) resid += v - mean;
  mean += resid / n;
  double var = 0.0;
  for (double v : raw_values) var += (v - mean) * (v - mean);
  var /= n;
  if (!(var > 0.0)) throw std::invalid_argument("normalize: reward has zero variance");
  RewardModel out = rm;
  out.set_norm({mean, std::sqrt(var)});
  return out;
}

RewardModel normalize_reward(const RewardModel& rm, const PolicyModel& rho,
                             const seq_model::ContextSet& contexts, std::size_t n_samples,
                             std::size_t response_len, std::uint64_t seed) {
  if (n_samples < 2) throw std::invalid_argument("normalize: need at least 2 samples");
  std::vector<double> raw(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    const auto& x = contexts.draw(derive_seed(seed, 2 * i));
    const auto y = seq_model::sample(rho, x, response_len, derive_seed(seed, 2 * i + 1));
    raw[i] = rm.raw(x, y);
  }
  return normalize_from_raw(rm, raw);
}

}  // namespace rlhf::reward_model
