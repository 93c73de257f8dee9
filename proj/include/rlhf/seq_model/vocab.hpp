#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace rlhf::seq_model {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

class TokenizeError : public std::invalid_argument {
 public:
  TokenizeError(std::size_t position, const std::string& what)
      : std::invalid_argument(what), position_(position) {}
  // Byte offset of the first symbol that could not be matched.
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

// Ordered list of distinct symbols. A symbol is usually one character but may
// be any nonempty string; tokenization is greedy longest-match.
class Vocab {
 public:
  Vocab() = default;
  explicit Vocab(std::vector<std::string> symbols);

  // One symbol per line. "\n", "\t" and "\\" escapes are decoded so that
  // whitespace symbols can be listed.
  static Vocab load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return symbols_.size(); }
  const std::string& symbol(TokenId id) const;
  std::optional<TokenId> find(std::string_view symbol) const;
  const std::vector<std::string>& symbols() const { return symbols_; }

  TokenSeq tokenize(std::string_view text) const;
  std::string detokenize(const TokenSeq& ids) const;
  bool valid(const TokenSeq& ids) const;

  friend bool operator==(const Vocab& a, const Vocab& b) {
    return a.symbols_ == b.symbols_;
  }

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, TokenId> index_;
  std::size_t max_symbol_bytes_ = 0;
};

std::string escape_symbol(std::string_view s);
std::string unescape_symbol(std::string_view s);

}  // namespace rlhf::seq_model
