#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "spdec/decoding.hpp"
#include "spdec/oracle.hpp"

using namespace spdec;

namespace {
constexpr TokenId a = 4, b = 5, c = 6, x = 7;
constexpr std::size_t V = 10;

TokenId mode(const std::vector<double>& p) {
  return static_cast<TokenId>(std::max_element(p.begin(), p.end()) - p.begin());
}
}  // namespace

TEST(Oracle, NextDistributionExamples) {
  OracleSpec id;
  const TokenSequence src{1, a, b, c, 2};
  EXPECT_EQ(mode(oracle_next_distribution(id, src, TokenSequence{1}, V)), a);
  EXPECT_EQ(mode(oracle_next_distribution(id, src, TokenSequence{1, a, b, c}, V)), kEos);
  OracleSpec edit;
  edit.target = OracleTarget::kEditScript;
  edit.edits = {{1, x}};
  EXPECT_EQ(oracle_target(edit, src, V), (TokenSequence{a, x, c, kEos}));
  EXPECT_EQ(mode(oracle_next_distribution(edit, src, TokenSequence{1, a}, V)), x);
  OracleSpec rev;
  rev.target = OracleTarget::kReverse;
  EXPECT_EQ(oracle_target(rev, src, V), (TokenSequence{c, b, a, kEos}));
}

TEST(Oracle, DistributionShape) {
  OracleSpec id;
  const TokenSequence src{1, a, b, 2};
  const auto on = oracle_next_distribution(id, src, TokenSequence{1, a}, V);
  EXPECT_DOUBLE_EQ(on[b], 0.9);
  EXPECT_DOUBLE_EQ(on[c], 0.1 / 9);
  double sum = 0;
  for (double p : on) sum += p;
  EXPECT_NEAR(sum, 1.0, 1e-12);
  const auto off = oracle_next_distribution(id, src, TokenSequence{1, b}, V);
  for (double p : off) EXPECT_DOUBLE_EQ(p, 0.1);
}

TEST(Oracle, ModelMatchesDistribution) {
  OracleSpec id;
  OracleModel m(id, V);
  const TokenSequence src{1, a, b, c, 2};
  const auto mem = m.encode(src);
  const std::vector<TokenSequence> rows{{1, a, b}, {1, b}};
  const auto batch = pad_left(rows);
  const auto logits = m.decode_step(mem, batch);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t j = 0; j < rows[r].size(); ++j) {
      const auto lp = nn::log_softmax(logits.at(r, batch.pad_counts[r] + j));
      const TokenSequence prefix(rows[r].begin(), rows[r].begin() + static_cast<std::ptrdiff_t>(j + 1));
      const auto p = oracle_next_distribution(id, src, prefix, V);
      for (std::size_t v = 0; v < V; ++v) EXPECT_NEAR(std::exp(lp[v]), p[v], 1e-6);
    }
  EXPECT_THROW(m.encode({1, 10, 2}), IdOutOfRange);
}

TEST(Oracle, GreedyFollowsTarget) {
  OracleModel m(OracleSpec{}, V);
  const auto r = greedy(m, {1, a, b, c, 2}, 50);
  EXPECT_EQ(r.hypotheses[0].ids, (TokenSequence{1, a, b, c, kEos}));
  EXPECT_EQ(r.stats.forward_passes, 4);
}

TEST(Oracle, RandomEditIsDeterministicAndCountsEdits) {
  OracleSpec s;
  s.target = OracleTarget::kRandomEdit;
  s.edit_rate = 0.1;
  s.seed = 5;
  TokenSequence src{1};
  for (int i = 0; i < 50; ++i) src.push_back(static_cast<TokenId>(4 + i % 20));
  src.push_back(2);
  const auto t1 = oracle_target(s, src, 24);
  EXPECT_EQ(t1, oracle_target(s, src, 24));
  const auto body = strip_specials(src);
  int changed = 0;
  for (std::size_t i = 0; i < body.size(); ++i) changed += t1[i] != body[i];
  EXPECT_EQ(changed, 5);
  s.edit_rate = 0.0;
  auto copy = body;
  copy.push_back(kEos);
  EXPECT_EQ(oracle_target(s, src, 24), copy);
}

TEST(OracleConfig, Parses) {
  std::istringstream in(
      "# copy with edits\n"
      "target random-edit\n"
      "rate 0.1   # fraction\n"
      "seed 7\n"
      "epsilon 0.05\n"
      "vocab vocab.txt\n");
  const auto cfg = parse_oracle_config(in, "/data");
  EXPECT_EQ(cfg.spec.target, OracleTarget::kRandomEdit);
  EXPECT_DOUBLE_EQ(cfg.spec.edit_rate, 0.1);
  EXPECT_EQ(cfg.spec.seed, 7u);
  EXPECT_DOUBLE_EQ(cfg.spec.epsilon, 0.05);
  EXPECT_EQ(cfg.vocab_path, "/data/vocab.txt");
  std::istringstream edits("target edit\nedits 1:7,3:9\n");
  EXPECT_EQ(parse_oracle_config(edits).spec.edits,
            (std::vector<std::pair<std::size_t, TokenId>>{{1, 7}, {3, 9}}));
}

TEST(OracleConfig, Errors) {
  auto parse = [](const std::string& s) {
    std::istringstream in(s);
    return parse_oracle_config(in);
  };
  EXPECT_THROW(parse("target sideways\n"), ConfigError);
  EXPECT_THROW(parse("epsilon 0.7\n"), ConfigError);
  EXPECT_THROW(parse("rate abc\n"), ConfigError);
  EXPECT_THROW(parse("colour blue\n"), ConfigError);
  EXPECT_THROW(parse("seed\n"), ConfigError);
  EXPECT_THROW(OracleModel(OracleSpec{}, 4), ConfigError);
}
