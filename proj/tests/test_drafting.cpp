#include <algorithm>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "spdec/drafting.hpp"

using namespace spdec;

namespace {
constexpr TokenId a = 4, b = 5, c = 6, d = 7, e = 8;
}

TEST(GetDrafts, Examples) {
  EXPECT_EQ(get_drafts({1, a, b, c, d, e, 2}, 3, 25).drafts,
            (std::vector<TokenSequence>{{a, b, c}, {b, c, d}, {c, d, e}}));
  EXPECT_EQ(get_drafts({a, a, a, a}, 2, 25).drafts, (std::vector<TokenSequence>{{a, a}}));
  EXPECT_EQ(get_drafts({1, a, b, 2}, 0, 25).drafts, (std::vector<TokenSequence>{{}}));
  EXPECT_EQ(get_drafts({1, a, b, 2}, 3, 25).drafts, (std::vector<TokenSequence>{{}}));
  EXPECT_EQ(get_drafts({1, a, b, c, d, e, 2}, 2, 2).drafts,
            (std::vector<TokenSequence>{{a, b}, {b, c}}));
  EXPECT_THROW(get_drafts({a}, 1, 0), ConfigError);
}

TEST(GetDrafts, Dilated) {
  const auto ds = get_drafts({1, a, b, c, d, e, 2}, 2, 25, true);
  EXPECT_EQ(ds.drafts, (std::vector<TokenSequence>{
                           {a, b}, {b, c}, {c, d}, {d, e}, {a, c}, {b, d}, {c, e}}));
}

TEST(GetDrafts, Invariants) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 300; ++trial) {
    TokenSequence src{kBos};
    const std::size_t len = rng() % 30;
    for (std::size_t i = 0; i < len; ++i) src.push_back(static_cast<TokenId>(4 + rng() % 4));
    src.push_back(kEos);
    const std::size_t L = rng() % 8, max = 1 + rng() % 30;
    const auto ds = get_drafts(src, L, max);
    const auto body = strip_specials(src);
    const std::size_t windows = body.size() >= L ? body.size() - L + 1 : 0;
    EXPECT_LE(ds.size(), std::min(max, std::max<std::size_t>(1, windows)));
    EXPECT_EQ(std::set<TokenSequence>(ds.drafts.begin(), ds.drafts.end()).size(), ds.size());
    for (const auto& dr : ds.drafts) {
      if (dr.empty()) continue;
      EXPECT_EQ(dr.size(), L);
      EXPECT_NE(std::search(body.begin(), body.end(), dr.begin(), dr.end()), body.end());
    }
  }
}
