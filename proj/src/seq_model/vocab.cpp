#include "rlhf/seq_model/vocab.hpp"

#include <algorithm>
#include <fstream>

namespace rlhf::seq_model {

Vocab::Vocab(std::vector<std::string> symbols) : symbols_(std::move(symbols)) {
  index_.reserve(symbols_.size());
  for (std::size_t i = 0; i < symbols_.size(); ++i) {
    const auto& s = symbols_[i];
    if (s.empty()) throw std::invalid_argument("vocab: empty symbol");
    if (!index_.emplace(s, static_cast<TokenId>(i)).second)
      throw std::invalid_argument("vocab: duplicate symbol '" + s + "'");
    max_symbol_bytes_ = std::max(max_symbol_bytes_, s.size());
  }
}

std::string escape_symbol(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\\': out += "\\\\"; break;
      default: out += c;
    }
  }
  return out;
}

std::string unescape_symbol(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\\' && i + 1 < s.size()) {
      const char n = s[++i];
      if (n == 'n') out += '\n';
      else if (n == 't') out += '\t';
      else if (n == '\\') out += '\\';
      else { out += '\\'; out += n; }
    } else {
      out += s[i];
    }
  }
  return out;
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("vocab: cannot open " + path.string());
  std::vector<std::string> symbols;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    symbols.push_back(unescape_symbol(line));
  }
  return Vocab(std::move(symbols));
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("vocab: cannot write " + path.string());
  for (const auto& s : symbols_) out << escape_symbol(s) << '\n';
}

const std::string& Vocab::symbol(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= symbols_.size())
    throw std::out_of_range("vocab: token id " + std::to_string(id) +
                            " out of range");
  return symbols_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> Vocab::find(std::string_view symbol) const {
  auto it = index_.find(std::string(symbol));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenSeq Vocab::tokenize(std::string_view text) const {
  TokenSeq ids;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t longest = std::min(max_symbol_bytes_, text.size() - pos);
    bool matched = false;
    for (std::size_t len = longest; len > 0; --len) {
      auto it = index_.find(std::string(text.substr(pos, len)));
      if (it != index_.end()) {
        ids.push_back(it->second);
        pos += len;
        matched = true;
        break;
      }
    }
    if (!matched)
      throw TokenizeError(pos, "tokenize: unknown symbol at byte " +
                                   std::to_string(pos));
  }
  return ids;
}

std::string Vocab::detokenize(const TokenSeq& ids) const {
  std::string out;
  for (TokenId id : ids) out += symbol(id);
  return out;
}

bool Vocab::valid(const TokenSeq& ids) const {
  return std::all_of(ids.begin(), ids.end(), [&](TokenId id) {
    return id >= 0 && static_cast<std::size_t>(id) < symbols_.size();
  });
}

}  // namespace rlhf::seq_model
