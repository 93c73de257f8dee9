#include "rlhf/text_metrics/rouge.hpp"

#include <algorithm>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <unordered_map>

namespace rlhf::text_metrics {
namespace {

double f1(double overlap, std::size_t cand, std::size_t ref) {
  if (overlap == 0.0) return 0.0;
  const double p = overlap / static_cast<double>(cand);
  const double r = overlap / static_cast<double>(ref);
  return 2.0 * p * r / (p + r);
}

std::map<std::vector<std::string>, std::size_t> ngram_counts(const WordSeq& w, std::size_t n) {
  std::map<std::vector<std::string>, std::size_t> c;
  for (std::size_t i = 0; i + n <= w.size(); ++i)
    ++c[std::vector<std::string>(w.words.begin() + static_cast<std::ptrdiff_t>(i),
                                 w.words.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return c;
}

double rouge_n(const WordSeq& cand, const WordSeq& ref, std::size_t n) {
  const auto cc = ngram_counts(cand, n);
  const auto rc = ngram_counts(ref, n);
  std::size_t nc = 0, nr = 0, overlap = 0;
  for (const auto& [g, k] : cc) nc += k;
  for (const auto& [g, k] : rc) {
    nr += k;
    if (const auto it = cc.find(g); it != cc.end()) overlap += std::min(k, it->second);
  }
  // Sequences too short for this order agree only if they are identical.
  if (nc == 0 || nr == 0) return (nc == 0 && nr == 0 && cand.words == ref.words) ? 1.0 : 0.0;
  return f1(static_cast<double>(overlap), nc, nr);
}

std::vector<int> intern(const std::vector<std::string>& keys,
                        std::unordered_map<std::string, int>& ids) {
  std::vector<int> out;
  out.reserve(keys.size());
  for (const auto& k : keys) out.push_back(ids.try_emplace(k, static_cast<int>(ids.size())).first->second);
  return out;
}

std::vector<std::string> bigram_keys(const WordSeq& w) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i + 1 < w.size(); ++i) out.push_back(w.words[i] + '\x1f' + w.words[i + 1]);
  return out;
}

}  // namespace

std::vector<std::pair<std::size_t, std::size_t>> lcs_alignment(const std::vector<int>& a,
                                                               const std::vector<int>& b) {
  const std::size_t m = a.size(), n = b.size();
  // s[i][j]: LCS length of a[i..] and b[j..].
  std::vector<std::uint32_t> s((m + 1) * (n + 1), 0);
  const auto at = [&](std::size_t i, std::size_t j) -> std::uint32_t& { return s[i * (n + 1) + j]; };
  for (std::size_t i = m; i-- > 0;)
    for (std::size_t j = n; j-- > 0;)
      at(i, j) = a[i] == b[j] ? at(i + 1, j + 1) + 1 : std::max(at(i + 1, j), at(i, j + 1));
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t i = 0, j = 0;
  while (i < m && j < n) {
    if (a[i] == b[j] && at(i, j) == at(i + 1, j + 1) + 1) {
      out.emplace_back(i++, j++);
    } else if (at(i + 1, j) == at(i, j)) {
      ++i;
    } else {
      ++j;
    }
  }
  return out;
}

LcsSpan bigram_lcs_span(const WordSeq& context, const WordSeq& summary) {
  std::unordered_map<std::string, int> ids;
  const auto a = intern(bigram_keys(context), ids);
  const auto b = intern(bigram_keys(summary), ids);
  LcsSpan out;
  out.context_bigrams = a.size();
  out.summary_bigrams = b.size();
  for (const auto& [i, j] : lcs_alignment(a, b)) {
    out.context_positions.push_back(i);
    out.summary_positions.push_back(j);
  }
  return out;
}

RougeScores rouge(const WordSeq& candidate, const WordSeq& reference) {
  if (reference.empty()) throw std::invalid_argument("rouge: empty reference");
  RougeScores r;
  if (candidate.empty()) return r;
  r.r1 = rouge_n(candidate, reference, 1);
  r.r2 = rouge_n(candidate, reference, 2);
  std::unordered_map<std::string, int> ids;
  const auto a = intern(candidate.words, ids);
  const auto b = intern(reference.words, ids);
  r.rl = f1(static_cast<double>(lcs_alignment(a, b).size()), a.size(), b.size());
  r.r_avg = (r.r1 + r.r2 + r.rl) / 3.0;
  return r;
}

RougeScores rouge(std::string_view candidate, std::string_view reference) {
  return rouge(normalize_words(candidate), normalize_words(reference));
}

std::string lead3(std::string_view article, std::optional<LeadTruncation> trunc) {
  const auto spans = split_sentences(article);
  if (spans.empty()) throw std::invalid_argument("lead3: empty article");
  const std::size_t k = std::min<std::size_t>(3, spans.size());
  std::vector<std::string_view> sents;
  std::vector<std::size_t> ends;  // cumulative raw-token counts
  std::size_t total = 0;
  for (std::size_t i = 0; i < k; ++i) {
    sents.push_back(article.substr(spans[i].begin, spans[i].size()));
    total += raw_tokens(sents.back()).size();
    ends.push_back(total);
  }
  auto join = [&](std::size_t n) {
    std::string out;
    for (std::size_t i = 0; i < n; ++i) {
      if (i) out += ' ';
      out += sents[i];
    }
    return out;
  };
  if (!trunc || total <= trunc->window_hi + 1) return join(k);
  if (trunc->window_lo > trunc->window_hi) throw std::invalid_argument("lead3: empty window");
  for (std::size_t i = 0; i < k; ++i)
    if (ends[i] >= trunc->window_lo + 1 && ends[i] <= trunc->window_hi + 1) return join(i + 1);
  for (std::size_t i = k; i-- > 0;)
    if (ends[i] <= trunc->window_lo) return join(i + 1);
  const std::string all = join(k);
  const auto toks = raw_tokens(all);
  std::string out;
  for (std::size_t i = 0; i <= trunc->window_hi && i < toks.size(); ++i) {
    if (i) out += ' ';
    out += toks[i];
  }
  return out;
}

}  // namespace rlhf::text_metrics
