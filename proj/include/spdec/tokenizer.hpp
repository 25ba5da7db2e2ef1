#pragma once

#include <iterator>
#include <istream>
#include <ostream>
#include <regex>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "spdec/types.hpp"

namespace spdec {

// Atomwise SMILES pattern used by the molecular transformer family: bracket
// atoms, two-letter halogens and %NN ring closures are single tokens.
inline constexpr std::string_view kSmilesPattern =
    R"((\[[^\]]+]|Br?|Cl?|N|O|S|P|F|I|b|c|n|o|s|p|\(|\)|\.|=|#|-|\+|\\|\/|:|~|@|\?|>|\*|\$|\%[0-9]{2}|[0-9]))";

inline constexpr std::string_view kSpecialTokens[] = {"<pad>", "<bos>", "<eos>",
                                                      "<unk>"};

inline const std::regex& smiles_regex() {
  static const std::regex re(std::string(kSmilesPattern), std::regex::ECMAScript);
  return re;
}

/// Splits a SMILES string into atomwise tokens. Concatenating the result
/// reproduces the input exactly; any character span the pattern cannot
/// consume raises UntokenizableInput with the offending column.
inline std::vector<std::string> tokenize(std::string_view smiles) {
  if (smiles.empty()) throw UntokenizableInput("empty input");
  std::vector<std::string> tokens;
  const auto& re = smiles_regex();
  auto it = smiles.begin();
  while (it != smiles.end()) {
    std::match_results<std::string_view::const_iterator> m;
    if (!std::regex_search(it, smiles.end(), m, re,
                           std::regex_constants::match_continuous) ||
        m.length(0) == 0) {
      throw UntokenizableInput("no token matches at column " +
                               std::to_string(it - smiles.begin()) + " of '" +
                               std::string(smiles) + "'");
    }
    tokens.emplace_back(m[0].first, m[0].second);
    it = m[0].second;
  }
  return tokens;
}

class Vocabulary {
 public:
  Vocabulary() {
    for (auto s : kSpecialTokens) add(std::string(s));
  }

  // Returns the id of `token`, adding it if new.
  TokenId add(const std::string& token) {
    if (auto it = to_id_.find(token); it != to_id_.end()) return it->second;
    const auto id = static_cast<TokenId>(to_token_.size());
    to_id_.emplace(token, id);
    to_token_.push_back(token);
    return id;
  }

  TokenId id(const std::string& token) const {
    auto it = to_id_.find(token);
    return it == to_id_.end() ? kUnk : it->second;
  }

  bool contains(const std::string& token) const { return to_id_.count(token) > 0; }

  const std::string& token(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= to_token_.size())
      throw IdOutOfRange("token id " + std::to_string(id) + " outside vocabulary of size " +
                         std::to_string(to_token_.size()));
    return to_token_[static_cast<std::size_t>(id)];
  }

  std::size_t size() const { return to_token_.size(); }
  const std::vector<std::string>& tokens() const { return to_token_; }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.to_token_ == b.to_token_;
  }

  // One token per line; line number is the id.
  void write(std::ostream& os) const {
    for (const auto& t : to_token_) os << t << '\n';
  }

  std::string to_string() const {
    std::ostringstream os;
    write(os);
    return os.str();
  }

  static Vocabulary read(std::istream& is) {
    Vocabulary v;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (lineno < std::size(kSpecialTokens)) {
        if (line != kSpecialTokens[lineno])
          throw ConfigError("vocabulary line " + std::to_string(lineno) + ": expected '" +
                            std::string(kSpecialTokens[lineno]) + "', got '" + line + "'");
      } else {
        if (line.empty() || v.contains(line))
          throw ConfigError("vocabulary line " + std::to_string(lineno) +
                            ": empty or duplicate token '" + line + "'");
        v.add(line);
      }
      ++lineno;
    }
    if (lineno < std::size(kSpecialTokens))
      throw ConfigError("vocabulary has " + std::to_string(lineno) +
                        " lines, the four special tokens are required");
    return v;
  }

  static Vocabulary from_string(const std::string& text) {
    std::istringstream is(text);
    return read(is);
  }

 private:
  std::unordered_map<std::string, TokenId> to_id_;
  std::vector<std::string> to_token_;
};

inline TokenSequence encode(const std::vector<std::string>& tokens, const Vocabulary& vocab,
                            bool add_bos_eos) {
  TokenSequence ids;
  ids.reserve(tokens.size() + 2);
  if (add_bos_eos) ids.push_back(kBos);
  for (const auto& t : tokens) ids.push_back(vocab.id(t));
  if (add_bos_eos) ids.push_back(kEos);
  return ids;
}

inline std::vector<std::string> decode(const TokenSequence& ids, const Vocabulary& vocab) {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (auto id : ids) out.push_back(vocab.token(id));
  return out;
}

// Joins the non-special tokens back into a SMILES string.
inline std::string detokenize(const TokenSequence& ids, const Vocabulary& vocab) {
  std::string s;
  for (auto id : ids) {
    if (id == kPad || id == kBos || id == kEos) continue;
    s += vocab.token(id);
  }
  return s;
}

/// Builds a vocabulary from one SMILES per line. Ids are assigned specials
/// first, then in order of first appearance. Blank lines are skipped.
inline Vocabulary build_vocabulary(std::istream& corpus) {
  Vocabulary v;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(corpus, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    try {
      for (const auto& t : tokenize(line)) v.add(t);
    } catch (const UntokenizableInput& e) {
      throw UntokenizableInput("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return v;
}

inline Vocabulary build_vocabulary(const std::vector<std::string>& lines) {
  std::ostringstream os;
  for (const auto& l : lines) os << l << '\n';
  std::istringstream is(os.str());
  return build_vocabulary(is);
}

}  // namespace spdec
