#include <fstream>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "spdec/synthetic.hpp"
#include "spdec/tokenizer.hpp"

using namespace spdec;
using Tokens = std::vector<std::string>;

TEST(Tokenize, Examples) {
  EXPECT_EQ(tokenize("CC(=O)O"), (Tokens{"C", "C", "(", "=", "O", ")", "O"}));
  EXPECT_EQ(tokenize("c1c[nH]"), (Tokens{"c", "1", "c", "[nH]"}));
  EXPECT_EQ(tokenize("O"), (Tokens{"O"}));
  EXPECT_EQ(tokenize("C%12Br"), (Tokens{"C", "%12", "Br"}));
}

TEST(Tokenize, Rejects) {
  EXPECT_THROW(tokenize("C[NH"), UntokenizableInput);
  EXPECT_THROW(tokenize(""), UntokenizableInput);
  EXPECT_THROW(tokenize("CXC"), UntokenizableInput);
  try {
    tokenize("CC[");
    FAIL();
  } catch (const UntokenizableInput& e) {
    EXPECT_NE(std::string(e.what()).find("column 2"), std::string::npos) << e.what();
  }
}

TEST(Tokenize, Fixtures) {
  std::ifstream in(SPDEC_FIXTURE_DIR "/smiles_tokens.tsv");
  ASSERT_TRUE(in);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    const auto tab = line.find('\t');
    ASSERT_NE(tab, std::string::npos);
    std::istringstream ts(line.substr(tab + 1));
    Tokens expected;
    for (std::string t; ts >> t;) expected.push_back(t);
    EXPECT_EQ(tokenize(line.substr(0, tab)), expected) << line;
    ++n;
  }
  EXPECT_EQ(n, 50);
}

TEST(Tokenize, RoundTripOnGeneratedStrings) {
  const Tokens alphabet = {"C",  "c",  "N", "O",  "n",   "(",    ")",     "=",   "#",
                           "1",  "2",  "Cl", "Br", "[nH]", "[C@@H]", "[O-]", "%10", "/",
                           "\\", "F",  "S",  "s",  "[Na+]", ".",  "B",   "o",   "-"};
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    std::string s;
    const auto len = 1 + rng() % 40;
    for (std::size_t i = 0; i < len; ++i) s += alphabet[rng() % alphabet.size()];
    std::string joined;
    for (const auto& t : tokenize(s)) joined += t;
    ASSERT_EQ(joined, s);
  }
}

TEST(Encode, Examples) {
  Vocabulary v;
  v.add("x");
  v.add("C");
  ASSERT_EQ(v.id("C"), 5);
  EXPECT_EQ(encode({"C", "C"}, v, true), (TokenSequence{1, 5, 5, 2}));
  EXPECT_EQ(encode({"Xx"}, v, false), (TokenSequence{3}));
  EXPECT_EQ(encode({}, v, true), (TokenSequence{1, 2}));
}

TEST(Encode, DecodeInverse) {
  const auto v = smiles_fragment_vocabulary();
  for (const auto& toks : smiles_like_corpus(5, 20, 30)) {
    EXPECT_EQ(decode(encode(toks, v, false), v), toks);
    std::string joined;
    for (const auto& t : toks) joined += t;
    EXPECT_EQ(detokenize(encode(toks, v, true), v), joined);
  }
  EXPECT_THROW(v.token(static_cast<TokenId>(v.size())), IdOutOfRange);
}

TEST(Vocabulary, BuildExamples) {
  EXPECT_EQ(build_vocabulary(Tokens{"CC"}).size(), 5u);
  const auto v = build_vocabulary(Tokens{"CC", "CO"});
  EXPECT_EQ(v.size(), 6u);
  EXPECT_EQ(v.id("C"), 4);
  EXPECT_EQ(v.id("O"), 5);
  EXPECT_EQ(build_vocabulary(Tokens{}).size(), 4u);
  EXPECT_EQ(v.token(kPad), "<pad>");
  EXPECT_EQ(v.token(kUnk), "<unk>");
}

TEST(Vocabulary, ErrorCarriesLineNumber) {
  std::istringstream in("CC\n\nC[N\n");
  try {
    build_vocabulary(in);
    FAIL();
  } catch (const UntokenizableInput& e) {
    EXPECT_EQ(std::string(e.what()).rfind("line 3", 0), 0u) << e.what();
  }
}

TEST(Vocabulary, FileRoundTripAndDeterminism) {
  const Tokens corpus = {"CC(=O)O", "c1ccccc1Br", "[nH]1cccc1", "ClCCl"};
  const auto a = build_vocabulary(corpus);
  const auto b = build_vocabulary(corpus);
  EXPECT_EQ(a.to_string(), b.to_string());
  const auto back = Vocabulary::from_string(a.to_string());
  EXPECT_EQ(back, a);
  for (std::size_t i = 0; i < a.size(); ++i)
    EXPECT_EQ(back.id(a.token(static_cast<TokenId>(i))), static_cast<TokenId>(i));
}

TEST(Vocabulary, ReadRejectsBadFiles) {
  EXPECT_THROW(Vocabulary::from_string("<pad>\n<bos>\n"), ConfigError);
  EXPECT_THROW(Vocabulary::from_string("<bos>\n<pad>\n<eos>\n<unk>\n"), ConfigError);
  EXPECT_THROW(Vocabulary::from_string("<pad>\n<bos>\n<eos>\n<unk>\nC\nC\n"), ConfigError);
  EXPECT_EQ(Vocabulary::from_string("<pad>\r\n<bos>\r\n<eos>\r\n<unk>\r\nC\r\n").size(), 5u);
}
