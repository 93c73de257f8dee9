#include "rlhf/text_metrics/words.hpp"

#include <cctype>

namespace rlhf::text_metrics {
namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

bool is_terminator(char c) { return c == '.' || c == '!' || c == '?'; }

// Length of a UTF-8 punctuation sequence starting at i, 0 if none. Covers the
// General Punctuation block (curly quotes, dashes, ellipsis), Latin-1
// punctuation and CJK full stops; anything else non-ASCII is kept as a letter.
std::size_t unicode_punct_len(std::string_view s, std::size_t i) {
  const auto b = [&](std::size_t k) { return static_cast<unsigned char>(s[i + k]); };
  const std::size_t left = s.size() - i;
  if (left >= 2 && b(0) == 0xC2) {
    const unsigned c = b(1);
    if (c == 0xA1 || c == 0xAB || c == 0xB7 || c == 0xBB || c == 0xBF) return 2;
  }
  if (left >= 3 && b(0) == 0xE2 && b(1) >= 0x80 && b(1) <= 0x81) return 3;  // U+2000..U+207F
  if (left >= 3 && b(0) == 0xE3 && b(1) == 0x80 && (b(2) == 0x81 || b(2) == 0x82)) return 3;
  return 0;
}

void push_word(std::string& cur, std::vector<std::string>& out) {
  if (!cur.empty()) out.push_back(std::move(cur));
  cur.clear();
}

}  // namespace

std::vector<Span> split_sentences(std::string_view text) {
  std::vector<Span> out;
  auto emit = [&](std::size_t b, std::size_t e) {
    while (b < e && is_space(text[b])) ++b;
    while (e > b && is_space(text[e - 1])) --e;
    if (e > b) out.push_back({b, e});
  };
  std::size_t start = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] == '\n') {
      emit(start, i);
      start = i + 1;
    } else if (is_terminator(text[i]) && (i + 1 == text.size() || is_space(text[i + 1]))) {
      emit(start, i + 1);
      start = i + 1;
    }
  }
  emit(start, text.size());
  return out;
}

WordSeq normalize_words(std::string_view text) {
  WordSeq w;
  for (const auto& s : split_sentences(text)) {
    const std::size_t first = w.words.size();
    std::string cur;
    for (std::size_t i = s.begin; i < s.end;) {
      const char c = text[i];
      if (is_space(c)) {
        push_word(cur, w.words);
        ++i;
      } else if (std::ispunct(static_cast<unsigned char>(c))) {
        ++i;
      } else if (const auto n = unicode_punct_len(text, i); n > 0) {
        i += n;
      } else {
        cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        ++i;
      }
    }
    push_word(cur, w.words);
    if (w.words.size() > first) w.sentences.push_back({first, w.words.size()});
  }
  return w;
}

std::string join_words(const WordSeq& w) {
  std::string out;
  for (const auto& word : w.words) {
    if (!out.empty()) out += ' ';
    out += word;
  }
  return out;
}

std::vector<std::string_view> raw_tokens(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    const std::size_t b = i;
    while (i < text.size() && !is_space(text[i])) ++i;
    if (i > b) out.push_back(text.substr(b, i - b));
  }
  return out;
}

}  // namespace rlhf::text_metrics
