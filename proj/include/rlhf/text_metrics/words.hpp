#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace rlhf::text_metrics {

struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool operator==(const Span&) const = default;
};

// Lowercased, punctuation-free words plus the word ranges of each sentence.
// Sentence ranges partition [0, words.size()) in order and are never empty.
struct WordSeq {
  std::vector<std::string> words;
  std::vector<Span> sentences;

  std::size_t size() const { return words.size(); }
  bool empty() const { return words.empty(); }
};

// Byte ranges of sentences, whitespace-trimmed. A sentence ends after '.', '!'
// or '?' when followed by whitespace or end of text, and at every newline.
std::vector<Span> split_sentences(std::string_view text);

WordSeq normalize_words(std::string_view text);

// Words separated by single spaces (sentence structure is dropped).
std::string join_words(const WordSeq& w);

// Whitespace-separated raw tokens, untouched.
std::vector<std::string_view> raw_tokens(std::string_view text);

}  // namespace rlhf::text_metrics
