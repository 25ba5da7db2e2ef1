#pragma once

// Random token sequences for benchmarks and property tests.

#include <cstdint>
#include <iterator>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "spdec/tokenizer.hpp"
#include "spdec/types.hpp"

namespace spdec {

/// BOS ++ `length` ids drawn uniformly from the non-special range ++ EOS.
inline TokenSequence random_source(std::mt19937_64& rng, std::size_t length,
                                   std::size_t vocab_size) {
  const std::size_t alphabet = vocab_size - kNumSpecials;
  TokenSequence s{kBos};
  for (std::size_t i = 0; i < length; ++i)
    s.push_back(static_cast<TokenId>(kNumSpecials + rng() % alphabet));
  s.push_back(kEos);
  return s;
}

inline std::vector<TokenSequence> random_corpus(std::uint64_t seed, std::size_t count,
                                                std::size_t length, std::size_t vocab_size) {
  std::mt19937_64 rng(seed);
  std::vector<TokenSequence> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(random_source(rng, length, vocab_size));
  return out;
}

// Fragments concatenated to form SMILES-like strings: chains, branches,
// aromatic rings, charged and chiral bracket atoms, halogens.
inline constexpr std::string_view kSmilesFragments[] = {
    "C",         "C",          "C",          "CC",          "c1ccccc1", "N",
    "O",         "C(=O)O",     "C(C)",       "Cl",          "F",        "Br",
    "[nH]",      "c1ccncc1",   "C#N",        "OC",          "S(=O)(=O)", "[C@@H]",
    "[C@H]",     "N(C)C",      "C=C",        "c2ccc(cc2)",  "O=C",      "CCO",
    "[O-]",      "[N+](=O)",   "I",          "P",           "n1cccc1",  "[Si](C)(C)C",
    "C%10CC%10", "B(O)O",      "o1cccc1",    "s1cccc1",     "/C=C/",    "\\C"};

/// Vocabulary over every token of the fragment table, in table order.
inline Vocabulary smiles_fragment_vocabulary() {
  Vocabulary v;
  for (auto f : kSmilesFragments)
    for (const auto& t : tokenize(f)) v.add(t);
  return v;
}

/// `count` token lists of exactly `length` tokens each, built by appending
/// random fragments and cutting at `length`. The cut may leave rings or
/// branches open; only the token statistics matter here.
inline std::vector<std::vector<std::string>> smiles_like_corpus(std::uint64_t seed,
                                                                std::size_t count,
                                                                std::size_t length) {
  std::mt19937_64 rng(seed);
  std::vector<std::vector<std::string>> out;
  out.reserve(count);
  for (std::size_t q = 0; q < count; ++q) {
    std::vector<std::string> tokens;
    while (tokens.size() < length) {
      const auto f = kSmilesFragments[rng() % std::size(kSmilesFragments)];
      for (auto& t : tokenize(f)) tokens.push_back(std::move(t));
    }
    tokens.resize(length);
    out.push_back(std::move(tokens));
  }
  return out;
}

}  // namespace spdec
