#include "rlhf/seq_model/neural_lm.hpp"

#include <cmath>
#include <stdexcept>

#include "rlhf/simd/kernels.hpp"

namespace rlhf::seq_model {
namespace {

constexpr double kLnEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

double to_float(double v) { return static_cast<double>(static_cast<float>(v)); }

void layer_norm(const double* x, const double* g, const double* b, std::size_t d,
                double* xhat, double* rstd, double* y) {
  double mean = 0.0;
  for (std::size_t i = 0; i < d; ++i) mean += x[i];
  mean /= static_cast<double>(d);
  double var = 0.0;
  for (std::size_t i = 0; i < d; ++i) var += (x[i] - mean) * (x[i] - mean);
  var /= static_cast<double>(d);
  const double r = 1.0 / std::sqrt(var + kLnEps);
  *rstd = r;
  for (std::size_t i = 0; i < d; ++i) {
    xhat[i] = (x[i] - mean) * r;
    y[i] = g[i] * xhat[i] + b[i];
  }
}

// dx += LayerNorm backward of dy; dg/db accumulate.
void layer_norm_backward(const double* dy, const double* xhat, double rstd,
                         const double* g, std::size_t d, double* dx, double* dg,
                         double* db) {
  double m1 = 0.0, m2 = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double dxh = dy[i] * g[i];
    m1 += dxh;
    m2 += dxh * xhat[i];
    dg[i] += dy[i] * xhat[i];
    db[i] += dy[i];
  }
  m1 /= static_cast<double>(d);
  m2 /= static_cast<double>(d);
  for (std::size_t i = 0; i < d; ++i)
    dx[i] += rstd * (dy[i] * g[i] - m1 - xhat[i] * m2);
}

double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x)));
}

double gelu_grad(double x) {
  const double th = std::tanh(kGeluC * (x + 0.044715 * x * x * x));
  return 0.5 * (1.0 + th) +
         0.5 * x * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
}

std::span<const double> row(const std::vector<double>& v, std::size_t r, std::size_t w) {
  return {v.data() + r * w, w};
}
std::span<double> row(std::vector<double>& v, std::size_t r, std::size_t w) {
  return {v.data() + r * w, w};
}

}  // namespace

void to_json(nlohmann::json& j, const NeuralConfig& c) {
  j = {{"vocab_size", c.vocab_size}, {"n_layers", c.n_layers},
       {"n_heads", c.n_heads},       {"d_model", c.d_model},
       {"context_len", c.context_len}, {"init_std", c.init_std}};
}

void from_json(const nlohmann::json& j, NeuralConfig& c) {
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.n_layers = j.value("n_layers", c.n_layers);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.d_model = j.value("d_model", c.d_model);
  c.context_len = j.value("context_len", c.context_len);
  c.init_std = j.value("init_std", c.init_std);
}

NeuralLM::NeuralLM(NeuralConfig config, std::uint64_t seed) : config_(config) {
  if (config_.vocab_size == 0) throw std::invalid_argument("neural: empty vocabulary");
  if (config_.n_heads == 0 || config_.d_model % config_.n_heads != 0)
    throw std::invalid_argument("neural: d_model must be divisible by n_heads");
  if (config_.context_len < 2) throw std::invalid_argument("neural: context too short");
  layout();
  Rng rng(seed);
  const double proj_std =
      config_.init_std / std::sqrt(2.0 * static_cast<double>(config_.n_layers));
  for (const auto& s : segments_) {
    const bool gain = s.name.ends_with("_g");
    const bool bias = s.name.starts_with("b_") || s.name.find(".b_") != std::string::npos ||
                      s.name.ends_with("_b");
    const bool proj = s.name.ends_with("w_proj") || s.name.ends_with("w_o");
    for (std::size_t i = 0; i < s.size; ++i) {
      double v = 0.0;
      if (gain) v = 1.0;
      else if (!bias) v = rng.normal(0.0, proj ? proj_std : config_.init_std);
      params_[s.offset + i] = to_float(v);
    }
  }
}

void NeuralLM::layout() {
  const std::size_t d = config_.d_model, v = config_.vocab_size, f = 4 * d;
  std::size_t off = 0;
  segments_.clear();
  auto add = [&](const std::string& name, std::size_t n) {
    segments_.push_back({name, off, n});
    off += n;
    return off - n;
  };
  tok_emb_ = add("tok_emb", (v + 1) * d);
  pos_emb_ = add("pos_emb", config_.context_len * d);
  layer_off_.clear();
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    LayerOffsets o{};
    o.ln1_g = add(p + "ln1_g", d);
    o.ln1_b = add(p + "ln1_b", d);
    o.w_qkv = add(p + "w_qkv", 3 * d * d);
    o.b_qkv = add(p + "b_qkv", 3 * d);
    o.w_o = add(p + "w_o", d * d);
    o.b_o = add(p + "b_o", d);
    o.ln2_g = add(p + "ln2_g", d);
    o.ln2_b = add(p + "ln2_b", d);
    o.w_fc = add(p + "w_fc", f * d);
    o.b_fc = add(p + "b_fc", f);
    o.w_proj = add(p + "w_proj", d * f);
    o.b_proj = add(p + "b_proj", d);
    layer_off_.push_back(o);
  }
  lnf_g_ = add("lnf_g", d);
  lnf_b_ = add("lnf_b", d);
  w_head_ = add("w_head", v * d);
  b_head_ = add("b_head", v);
  params_.assign(off, 0.0);
}

NeuralLM NeuralLM::with_temperature(double t) const {
  if (!(t > 0.0) || !std::isfinite(t))
    throw std::invalid_argument("temperature must be positive");
  NeuralLM m = *this;
  m.temperature_ = temperature_ * t;
  return m;
}

NeuralLM apply_temperature(const NeuralLM& model, double t) {
  return model.with_temperature(t);
}

std::unique_ptr<PolicyModel> NeuralLM::clone() const {
  return std::make_unique<NeuralLM>(*this);
}

NeuralLM::Cache NeuralLM::forward(std::span<const TokenId> tokens, double dropout,
                                  Rng* rng) const {
  check_ids(tokens, config_.vocab_size);
  const std::size_t d = config_.d_model, f = 4 * d, v = config_.vocab_size;
  const std::size_t h_count = config_.n_heads, hd = d / h_count;
  const std::size_t n = tokens.size() + 1;
  if (n > config_.context_len)
    throw std::invalid_argument("neural: sequence exceeds context length");
  const bool use_dropout = dropout > 0.0 && rng != nullptr;
  const double keep_scale = use_dropout ? 1.0 / (1.0 - dropout) : 1.0;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const double* P = params_.data();

  Cache c;
  c.positions = n;
  c.inputs.push_back(static_cast<TokenId>(v));
  c.inputs.insert(c.inputs.end(), tokens.begin(), tokens.end());

  std::vector<double> x(n * d);
  for (std::size_t t = 0; t < n; ++t) {
    const double* te = P + tok_emb_ + static_cast<std::size_t>(c.inputs[t]) * d;
    const double* pe = P + pos_emb_ + t * d;
    for (std::size_t i = 0; i < d; ++i) x[t * d + i] = te[i] + pe[i];
  }

  std::span<const double> params(params_);
  c.layers.resize(config_.n_layers);
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    const auto& o = layer_off_[l];
    auto& lc = c.layers[l];
    lc.xhat1.resize(n * d);
    lc.rstd1.resize(n);
    lc.a1.resize(n * d);
    lc.qkv.resize(n * 3 * d);
    lc.att.assign(h_count * n * n, 0.0);
    lc.ctx.assign(n * d, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
      layer_norm(&x[t * d], P + o.ln1_g, P + o.ln1_b, d, &lc.xhat1[t * d], &lc.rstd1[t],
                 &lc.a1[t * d]);
      auto q = row(lc.qkv, t, 3 * d);
      std::copy(P + o.b_qkv, P + o.b_qkv + 3 * d, q.begin());
      simd::matvec(params.subspan(o.w_qkv, 3 * d * d), 3 * d, d, row(lc.a1, t, d), q, true);
    }
    for (std::size_t h = 0; h < h_count; ++h) {
      for (std::size_t t = 0; t < n; ++t) {
        double* a = &lc.att[(h * n + t) * n];
        std::span<const double> qh(&lc.qkv[t * 3 * d + h * hd], hd);
        for (std::size_t s = 0; s <= t; ++s) {
          std::span<const double> kh(&lc.qkv[s * 3 * d + d + h * hd], hd);
          a[s] = simd::dot(qh, kh) * att_scale;
        }
        std::span<double> arow(a, t + 1);
        simd::softmax(arow, arow);
        std::span<double> out(&lc.ctx[t * d + h * hd], hd);
        for (std::size_t s = 0; s <= t; ++s)
          simd::axpy(a[s], std::span<const double>(&lc.qkv[s * 3 * d + 2 * d + h * hd], hd), out);
      }
    }
    if (use_dropout) {
      lc.mask1.resize(n * d);
      for (double& m : lc.mask1) m = rng->bernoulli(dropout) ? 0.0 : keep_scale;
    }
    std::vector<double> tmp(d);
    for (std::size_t t = 0; t < n; ++t) {
      std::copy(P + o.b_o, P + o.b_o + d, tmp.begin());
      simd::matvec(params.subspan(o.w_o, d * d), d, d, row(lc.ctx, t, d), tmp, true);
      for (std::size_t i = 0; i < d; ++i)
        x[t * d + i] += use_dropout ? tmp[i] * lc.mask1[t * d + i] : tmp[i];
    }

    lc.xhat2.resize(n * d);
    lc.rstd2.resize(n);
    lc.a2.resize(n * d);
    lc.fc.resize(n * f);
    lc.act.resize(n * f);
    if (use_dropout) {
      lc.mask2.resize(n * d);
      for (double& m : lc.mask2) m = rng->bernoulli(dropout) ? 0.0 : keep_scale;
    }
    for (std::size_t t = 0; t < n; ++t) {
      layer_norm(&x[t * d], P + o.ln2_g, P + o.ln2_b, d, &lc.xhat2[t * d], &lc.rstd2[t],
                 &lc.a2[t * d]);
      auto fc = row(lc.fc, t, f);
      std::copy(P + o.b_fc, P + o.b_fc + f, fc.begin());
      simd::matvec(params.subspan(o.w_fc, f * d), f, d, row(lc.a2, t, d), fc, true);
      for (std::size_t i = 0; i < f; ++i) lc.act[t * f + i] = gelu(fc[i]);
      std::copy(P + o.b_proj, P + o.b_proj + d, tmp.begin());
      simd::matvec(params.subspan(o.w_proj, d * f), d, f, row(lc.act, t, f), tmp, true);
      for (std::size_t i = 0; i < d; ++i)
        x[t * d + i] += use_dropout ? tmp[i] * lc.mask2[t * d + i] : tmp[i];
    }
  }

  c.xhatf.resize(n * d);
  c.rstdf.resize(n);
  c.hidden.resize(n * d);
  c.logits.resize(n * v);
  const double inv_t = 1.0 / temperature_;
  for (std::size_t t = 0; t < n; ++t) {
    layer_norm(&x[t * d], P + lnf_g_, P + lnf_b_, d, &c.xhatf[t * d], &c.rstdf[t],
               &c.hidden[t * d]);
    auto lg = row(c.logits, t, v);
    std::copy(P + b_head_, P + b_head_ + v, lg.begin());
    simd::matvec(params.subspan(w_head_, v * d), v, d, row(c.hidden, t, d), lg, true);
    simd::scale(inv_t, lg);
  }
  return c;
}

void NeuralLM::backward(const Cache& c, std::span<const double> dlogits,
                        std::span<const double> dhidden, std::span<double> grad) const {
  const std::size_t d = config_.d_model, f = 4 * d, v = config_.vocab_size;
  const std::size_t h_count = config_.n_heads, hd = d / h_count;
  const std::size_t n = c.positions;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const double inv_t = 1.0 / temperature_;
  const double* P = params_.data();
  std::span<const double> params(params_);
  double* G = grad.data();

  // Gradient w.r.t. the final hidden state, then through the final LayerNorm.
  std::vector<double> dres(n * d, 0.0);
  std::vector<double> dh(d), dz(v);
  for (std::size_t t = 0; t < n; ++t) {
    std::fill(dh.begin(), dh.end(), 0.0);
    if (!dhidden.empty())
      for (std::size_t i = 0; i < d; ++i) dh[i] = dhidden[t * d + i];
    if (!dlogits.empty()) {
      bool any = false;
      for (std::size_t j = 0; j < v; ++j) {
        dz[j] = dlogits[t * v + j] * inv_t;
        any = any || dz[j] != 0.0;
      }
      if (any) {
        simd::outer_acc(dz, row(c.hidden, t, d), grad.subspan(w_head_, v * d));
        simd::axpy(1.0, dz, grad.subspan(b_head_, v));
        simd::matvec_transposed_acc(params.subspan(w_head_, v * d), v, d, dz, dh);
      }
    }
    layer_norm_backward(dh.data(), &c.xhatf[t * d], c.rstdf[t], P + lnf_g_, d,
                        &dres[t * d], G + lnf_g_, G + lnf_b_);
  }

  std::vector<double> dproj(d), dact(f), da(d), dattn(d);
  std::vector<double> dctx(n * d), dqkv(n * 3 * d), datt(n);
  for (std::size_t li = config_.n_layers; li-- > 0;) {
    const auto& o = layer_off_[li];
    const auto& lc = c.layers[li];
    const bool drop = !lc.mask1.empty();

    // MLP branch.
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t i = 0; i < d; ++i)
        dproj[i] = drop ? dres[t * d + i] * lc.mask2[t * d + i] : dres[t * d + i];
      simd::outer_acc(dproj, row(lc.act, t, f), grad.subspan(o.w_proj, d * f));
      simd::axpy(1.0, dproj, grad.subspan(o.b_proj, d));
      std::fill(dact.begin(), dact.end(), 0.0);
      simd::matvec_transposed_acc(params.subspan(o.w_proj, d * f), d, f, dproj, dact);
      for (std::size_t i = 0; i < f; ++i) dact[i] *= gelu_grad(lc.fc[t * f + i]);
      simd::outer_acc(dact, row(lc.a2, t, d), grad.subspan(o.w_fc, f * d));
      simd::axpy(1.0, dact, grad.subspan(o.b_fc, f));
      std::fill(da.begin(), da.end(), 0.0);
      simd::matvec_transposed_acc(params.subspan(o.w_fc, f * d), f, d, dact, da);
      layer_norm_backward(da.data(), &lc.xhat2[t * d], lc.rstd2[t], P + o.ln2_g, d,
                          &dres[t * d], G + o.ln2_g, G + o.ln2_b);
    }

    // Attention output projection.
    std::fill(dctx.begin(), dctx.end(), 0.0);
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t i = 0; i < d; ++i)
        dattn[i] = drop ? dres[t * d + i] * lc.mask1[t * d + i] : dres[t * d + i];
      simd::outer_acc(dattn, row(lc.ctx, t, d), grad.subspan(o.w_o, d * d));
      simd::axpy(1.0, dattn, grad.subspan(o.b_o, d));
      simd::matvec_transposed_acc(params.subspan(o.w_o, d * d), d, d, dattn, row(dctx, t, d));
    }

    // Causal self-attention.
    std::fill(dqkv.begin(), dqkv.end(), 0.0);
    for (std::size_t h = 0; h < h_count; ++h) {
      for (std::size_t t = 0; t < n; ++t) {
        const double* a = &lc.att[(h * n + t) * n];
        std::span<const double> dout(&dctx[t * d + h * hd], hd);
        double weighted = 0.0;
        for (std::size_t s = 0; s <= t; ++s) {
          datt[s] = simd::dot(dout, std::span<const double>(&lc.qkv[s * 3 * d + 2 * d + h * hd], hd));
          weighted += a[s] * datt[s];
          simd::axpy(a[s], dout, std::span<double>(&dqkv[s * 3 * d + 2 * d + h * hd], hd));
        }
        std::span<double> dq(&dqkv[t * 3 * d + h * hd], hd);
        std::span<const double> q(&lc.qkv[t * 3 * d + h * hd], hd);
        for (std::size_t s = 0; s <= t; ++s) {
          const double ds = a[s] * (datt[s] - weighted) * att_scale;
          if (ds == 0.0) continue;
          simd::axpy(ds, std::span<const double>(&lc.qkv[s * 3 * d + d + h * hd], hd), dq);
          simd::axpy(ds, q, std::span<double>(&dqkv[s * 3 * d + d + h * hd], hd));
        }
      }
    }
    for (std::size_t t = 0; t < n; ++t) {
      auto dq = row(dqkv, t, 3 * d);
      simd::outer_acc(dq, row(lc.a1, t, d), grad.subspan(o.w_qkv, 3 * d * d));
      simd::axpy(1.0, dq, grad.subspan(o.b_qkv, 3 * d));
      std::fill(da.begin(), da.end(), 0.0);
      simd::matvec_transposed_acc(params.subspan(o.w_qkv, 3 * d * d), 3 * d, d, dq, da);
      layer_norm_backward(da.data(), &lc.xhat1[t * d], lc.rstd1[t], P + o.ln1_g, d,
                          &dres[t * d], G + o.ln1_g, G + o.ln1_b);
    }
  }

  for (std::size_t t = 0; t < n; ++t) {
    auto dx = row(dres, t, d);
    simd::axpy(1.0, dx, grad.subspan(tok_emb_ + static_cast<std::size_t>(c.inputs[t]) * d, d));
    simd::axpy(1.0, dx, grad.subspan(pos_emb_ + t * d, d));
  }
}

double NeuralLM::nll_and_grad(std::span<const TokenId> seq, std::size_t loss_start,
                              std::span<double> grad, double dropout, Rng* rng) const {
  if (seq.empty()) return 0.0;
  const std::size_t drop = window_drop(seq.size() - 1, loss_start);
  const auto window = seq.subspan(drop);
  const std::size_t start = loss_start - std::min(loss_start, drop);
  const std::size_t v = config_.vocab_size;
  const Cache c = forward(window.first(window.size() - 1), dropout, rng);
  std::vector<double> dlogits(c.positions * v, 0.0);
  std::vector<double> lp(v);
  double nll = 0.0;
  for (std::size_t t = start; t < window.size(); ++t) {
    simd::log_softmax(row(c.logits, t, v), lp);
    const auto y = static_cast<std::size_t>(window[t]);
    nll -= lp[y];
    for (std::size_t j = 0; j < v; ++j) dlogits[t * v + j] = std::exp(lp[j]);
    dlogits[t * v + y] -= 1.0;
  }
  backward(c, dlogits, {}, grad);
  return nll;
}

std::size_t NeuralLM::window_drop(std::size_t seq_len, std::size_t keep_from) const {
  if (seq_len + 1 <= config_.context_len) return 0;
  const std::size_t drop = seq_len + 1 - config_.context_len;
  if (drop > keep_from)
    throw std::invalid_argument("neural: scored tokens exceed context length");
  return drop;
}

std::vector<double> NeuralLM::next_logprobs(std::span<const TokenId> prefix) const {
  const std::size_t drop = window_drop(prefix.size(), prefix.size());
  const Cache c = forward(prefix.subspan(drop));
  std::vector<double> out(config_.vocab_size);
  simd::log_softmax(row(c.logits, c.positions - 1, config_.vocab_size), out);
  return out;
}

std::vector<double> NeuralLM::token_logprobs(std::span<const TokenId> seq,
                                             std::size_t start) const {
  std::vector<double> out;
  if (start >= seq.size()) return out;
  const std::size_t drop = window_drop(seq.size() - 1, start);
  const auto window = seq.subspan(drop);
  const Cache c = forward(window.first(window.size() - 1));
  const std::size_t v = config_.vocab_size;
  std::vector<double> lp(v);
  for (std::size_t t = start - drop; t < window.size(); ++t) {
    simd::log_softmax(row(c.logits, t, v), lp);
    out.push_back(lp[static_cast<std::size_t>(window[t])]);
  }
  return out;
}

TokenEval NeuralLM::evaluate(std::span<const TokenId> x, std::span<const TokenId> y) const {
  TokenEval ev;
  if (y.empty()) return ev;
  const TokenSeq xy = concat(x, y);
  const std::size_t drop = window_drop(xy.size() - 1, x.size());
  std::span<const TokenId> window(xy.data() + drop, xy.size() - drop);
  const Cache c = forward(window.first(window.size() - 1));
  const std::size_t v = config_.vocab_size, d = config_.d_model;
  const std::size_t base = x.size() - drop;
  std::vector<double> lp(v);
  for (std::size_t t = 0; t < y.size(); ++t) {
    simd::log_softmax(row(c.logits, base + t, v), lp);
    ev.logprobs.push_back(lp[static_cast<std::size_t>(y[t])]);
    auto h = row(c.hidden, base + t, d);
    ev.features.emplace_back(h.begin(), h.end());
  }
  return ev;
}

std::vector<double> NeuralLM::final_embedding(std::span<const TokenId> x,
                                              std::span<const TokenId> y) const {
  const TokenSeq xy = concat(x, y);
  const std::size_t drop = window_drop(xy.size(), xy.size());
  const Cache c = forward(std::span<const TokenId>(xy).subspan(drop));
  auto h = row(c.hidden, c.positions - 1, config_.d_model);
  return {h.begin(), h.end()};
}

void NeuralLM::accumulate_logprob_grad(std::span<const TokenId> x,
                                       std::span<const TokenId> y,
                                       std::span<const double> coef,
                                       std::span<double> grad) const {
  if (y.empty()) return;
  const TokenSeq xy = concat(x, y);
  const std::size_t drop = window_drop(xy.size() - 1, x.size());
  std::span<const TokenId> window(xy.data() + drop, xy.size() - drop);
  const Cache c = forward(window.first(window.size() - 1));
  const std::size_t v = config_.vocab_size;
  const std::size_t base = x.size() - drop;
  std::vector<double> dlogits(c.positions * v, 0.0);
  std::vector<double> lp(v);
  for (std::size_t t = 0; t < y.size(); ++t) {
    if (coef[t] == 0.0) continue;
    const std::size_t p = base + t;
    simd::log_softmax(row(c.logits, p, v), lp);
    for (std::size_t j = 0; j < v; ++j) dlogits[p * v + j] = -coef[t] * std::exp(lp[j]);
    dlogits[p * v + static_cast<std::size_t>(y[t])] += coef[t];
  }
  backward(c, dlogits, {}, grad);
}

void NeuralLM::accumulate_embedding_grad(std::span<const TokenId> x,
                                         std::span<const TokenId> y,
                                         std::span<const double> dembed,
                                         std::span<double> grad) const {
  const TokenSeq xy = concat(x, y);
  const std::size_t drop = window_drop(xy.size(), xy.size());
  const Cache c = forward(std::span<const TokenId>(xy).subspan(drop));
  const std::size_t d = config_.d_model;
  std::vector<double> dh(c.positions * d, 0.0);
  std::copy(dembed.begin(), dembed.end(), dh.begin() + static_cast<std::ptrdiff_t>((c.positions - 1) * d));
  backward(c, {}, dh, grad);
}

Checkpoint NeuralLM::to_checkpoint() const {
  Checkpoint ck;
  ck.kind = kind();
  ck.config = config_;
  ck.config["temperature"] = temperature_;
  for (const auto& s : segments_)
    ck.arrays.push_back({s.name, DType::kF32,
                         std::vector<double>(params_.begin() + static_cast<std::ptrdiff_t>(s.offset),
                                             params_.begin() + static_cast<std::ptrdiff_t>(s.offset + s.size))});
  return ck;
}

NeuralLM NeuralLM::from_checkpoint(const Checkpoint& ck) {
  if (ck.kind != "neural") throw std::runtime_error("checkpoint is not neural");
  NeuralLM m(ck.config.get<NeuralConfig>(), 0);
  m.temperature_ = ck.config.value("temperature", 1.0);
  for (const auto& s : m.segments_) {
    const auto& a = ck.array(s.name);
    if (a.values.size() != s.size)
      throw std::runtime_error("checkpoint: size mismatch for " + s.name);
    std::copy(a.values.begin(), a.values.end(),
              m.params_.begin() + static_cast<std::ptrdiff_t>(s.offset));
  }
  return m;
}

}  // namespace rlhf::seq_model
