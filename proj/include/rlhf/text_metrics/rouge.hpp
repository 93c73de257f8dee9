#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rlhf/text_metrics/words.hpp"

namespace rlhf::text_metrics {

// Matched positions of a longest common subsequence of bigrams. Position i
// names the bigram (words[i], words[i+1]). Among equally long alignments the
// leftmost one is returned.
struct LcsSpan {
  std::vector<std::size_t> context_positions;
  std::vector<std::size_t> summary_positions;
  std::size_t context_bigrams = 0;
  std::size_t summary_bigrams = 0;

  std::size_t length() const { return context_positions.size(); }
};

LcsSpan bigram_lcs_span(const WordSeq& context, const WordSeq& summary);

// Leftmost-greedy LCS alignment over integer symbols.
std::vector<std::pair<std::size_t, std::size_t>> lcs_alignment(const std::vector<int>& a,
                                                               const std::vector<int>& b);

struct RougeScores {
  double r1 = 0.0;
  double r2 = 0.0;
  double rl = 0.0;
  double r_avg = 0.0;
};

// F1 variants: clipped n-gram overlap for R-1/R-2, word LCS for R-L. No
// stemming or stopword removal. Throws on an empty reference.
RougeScores rouge(const WordSeq& candidate, const WordSeq& reference);
RougeScores rouge(std::string_view candidate, std::string_view reference);

// Word window (0-based, inclusive) in which a sentence end must fall.
struct LeadTruncation {
  std::size_t window_lo = 0;
  std::size_t window_hi = 0;
};

// The first three sentences. With a window, text longer than window_hi + 1
// words is cut at the first sentence end inside the window, else at the last
// sentence end before it, else hard at window_hi + 1 words.
std::string lead3(std::string_view article, std::optional<LeadTruncation> trunc = {});

}  // namespace rlhf::text_metrics
