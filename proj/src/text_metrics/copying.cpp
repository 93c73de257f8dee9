#include "rlhf/text_metrics/copying.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>

namespace rlhf::text_metrics {
namespace {

std::string key(const std::vector<std::string>& w, std::size_t b, std::size_t e) {
  std::string k;
  for (std::size_t i = b; i < e; ++i) {
    k += w[i];
    k += '\x1f';
  }
  return k;
}

std::vector<std::string> sentence_ngrams(const WordSeq& s, std::size_t n) {
  if (n == 0) throw std::invalid_argument("n-gram order must be at least 1");
  std::vector<std::string> out;
  for (const auto& sp : s.sentences)
    for (std::size_t i = sp.begin; i + n <= sp.end; ++i) out.push_back(key(s.words, i, i + n));
  return out;
}

std::unordered_set<std::string> all_ngrams(const WordSeq& s, std::size_t n) {
  std::unordered_set<std::string> out;
  for (std::size_t i = 0; i + n <= s.size(); ++i) out.insert(key(s.words, i, i + n));
  return out;
}

double fraction(std::size_t hits, std::size_t total) {
  return static_cast<double>(hits) / static_cast<double>(total);
}

// Shared counting for novel and repeated fractions.
template <class Pred>
double ngram_fraction(const std::vector<std::string>& grams, CountMode mode, Pred hit) {
  if (grams.empty()) throw std::invalid_argument("summary has no n-grams of this order");
  if (mode == CountMode::kOccurrences)
    return fraction(static_cast<std::size_t>(std::count_if(grams.begin(), grams.end(), hit)),
                    grams.size());
  const std::unordered_set<std::string> types(grams.begin(), grams.end());
  return fraction(static_cast<std::size_t>(std::count_if(types.begin(), types.end(), hit)),
                  types.size());
}

std::unordered_map<std::string, std::size_t> counts(const std::vector<std::string>& grams) {
  std::unordered_map<std::string, std::size_t> c;
  for (const auto& g : grams) ++c[g];
  return c;
}

std::vector<std::string> sentence_keys(const WordSeq& s) {
  std::vector<std::string> out;
  for (const auto& sp : s.sentences) out.push_back(key(s.words, sp.begin, sp.end));
  return out;
}

template <class F>
std::optional<double> maybe(F f) {
  try {
    return f();
  } catch (const std::invalid_argument&) {
    return std::nullopt;
  }
}

}  // namespace

double novel_ngram_fraction(const WordSeq& summary, const WordSeq& source, std::size_t n,
                            CountMode mode) {
  const auto grams = sentence_ngrams(summary, n);
  const auto seen = all_ngrams(source, n);
  return ngram_fraction(grams, mode, [&](const std::string& g) { return !seen.contains(g); });
}

double novel_sentence_fraction(const WordSeq& summary, const WordSeq& source) {
  if (summary.sentences.empty()) throw std::invalid_argument("summary has no sentences");
  std::size_t novel = 0;
  for (const auto& sp : summary.sentences) {
    const auto b = summary.words.begin() + static_cast<std::ptrdiff_t>(sp.begin);
    const auto e = summary.words.begin() + static_cast<std::ptrdiff_t>(sp.end);
    if (std::search(source.words.begin(), source.words.end(), b, e) == source.words.end()) ++novel;
  }
  return fraction(novel, summary.sentences.size());
}

double repeated_ngram_fraction(const WordSeq& summary, std::size_t n, CountMode mode) {
  const auto grams = sentence_ngrams(summary, n);
  const auto c = counts(grams);
  return ngram_fraction(grams, mode, [&](const std::string& g) { return c.at(g) >= 2; });
}

double repeated_sentence_fraction(const WordSeq& summary) {
  if (summary.sentences.empty()) throw std::invalid_argument("summary has no sentences");
  const auto keys = sentence_keys(summary);
  const auto c = counts(keys);
  return fraction(static_cast<std::size_t>(std::count_if(
                      keys.begin(), keys.end(), [&](const auto& k) { return c.at(k) >= 2; })),
                  keys.size());
}

CopyStats copy_stats(const WordSeq& summary, const WordSeq& source, CountMode mode) {
  CopyStats s;
  for (std::size_t n = 1; n <= 4; ++n) {
    s.novel[n - 1] = maybe([&] { return novel_ngram_fraction(summary, source, n, mode); });
    s.repeated[n - 1] = maybe([&] { return repeated_ngram_fraction(summary, n, mode); });
  }
  s.novel_sentence = maybe([&] { return novel_sentence_fraction(summary, source); });
  s.repeated_sentence = maybe([&] { return repeated_sentence_fraction(summary); });
  return s;
}

DatasetKind dataset_kind_from_string(std::string_view s) {
  if (s == "tldr") return DatasetKind::kTldr;
  if (s == "cnndm") return DatasetKind::kCnnDm;
  throw std::invalid_argument("unknown dataset kind: " + std::string(s));
}

std::string_view to_string(DatasetKind k) { return k == DatasetKind::kTldr ? "tldr" : "cnndm"; }

bool preamble_flags(std::string_view text, DatasetKind kind) {
  if (kind == DatasetKind::kCnnDm) {
    const auto toks = raw_tokens(text);
    for (std::size_t i = 0; i < std::min<std::size_t>(3, toks.size()); ++i)
      if (toks[i].find(':') != std::string_view::npos) return true;
    return false;
  }
  static const std::unordered_set<std::string> openers{"hi", "hello", "hey", "ok", "okay", "so"};
  const auto w = normalize_words(text);
  return !w.empty() && openers.contains(w.words[0]);
}

std::optional<double> First3Copy::rate() const {
  if (eligible == 0) return std::nullopt;
  return fraction(copies, eligible);
}

std::optional<bool> first3_copied(const WordSeq& article, const WordSeq& summary) {
  if (article.size() < 3 || summary.size() < 3) return std::nullopt;
  return std::equal(article.words.begin(), article.words.begin() + 3, summary.words.begin());
}

First3Copy first3_copy_rate(const std::vector<std::pair<std::string, std::string>>& pairs) {
  First3Copy r;
  for (const auto& [article, summary] : pairs) {
    const auto c = first3_copied(normalize_words(article), normalize_words(summary));
    if (!c) {
      ++r.excluded;
      continue;
    }
    ++r.eligible;
    if (*c) ++r.copies;
  }
  return r;
}

}  // namespace rlhf::text_metrics
