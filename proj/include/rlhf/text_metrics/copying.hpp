#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string_view>
#include <vector>

#include "rlhf/text_metrics/words.hpp"

namespace rlhf::text_metrics {

// Occurrences weights each summary n-gram by how often it appears; types
// counts every distinct n-gram once.
enum class CountMode { kOccurrences, kTypes };

// Fraction of summary n-grams (taken inside sentences) that never appear as a
// consecutive run in the source. Throws if no sentence has n words.
double novel_ngram_fraction(const WordSeq& summary, const WordSeq& source, std::size_t n,
                            CountMode mode = CountMode::kOccurrences);

// Fraction of summary sentences whose word sequence does not occur in the
// source. Throws on a summary without sentences.
double novel_sentence_fraction(const WordSeq& summary, const WordSeq& source);

// Fraction of summary n-grams that occur at least twice in the summary.
double repeated_ngram_fraction(const WordSeq& summary, std::size_t n,
                               CountMode mode = CountMode::kOccurrences);

// Fraction of summary sentences that appear at least twice.
double repeated_sentence_fraction(const WordSeq& summary);

// Entries are empty where the summary is too short for that n.
struct CopyStats {
  std::array<std::optional<double>, 4> novel;  // n = 1..4
  std::optional<double> novel_sentence;
  std::array<std::optional<double>, 4> repeated;
  std::optional<double> repeated_sentence;
};

CopyStats copy_stats(const WordSeq& summary, const WordSeq& source,
                     CountMode mode = CountMode::kOccurrences);

enum class DatasetKind { kTldr, kCnnDm };

DatasetKind dataset_kind_from_string(std::string_view s);
std::string_view to_string(DatasetKind k);

// TL;DR posts opening with a greeting or filler word; CNN/DM articles with a
// colon among their first three raw tokens.
bool preamble_flags(std::string_view text, DatasetKind kind);

struct First3Copy {
  std::size_t copies = 0;
  std::size_t eligible = 0;
  std::size_t excluded = 0;  // either side under three words

  std::optional<double> rate() const;
};

// nullopt when either side has fewer than three normalized words.
std::optional<bool> first3_copied(const WordSeq& article, const WordSeq& summary);

First3Copy first3_copy_rate(const std::vector<std::pair<std::string, std::string>>& pairs);

}  // namespace rlhf::text_metrics
