#include <cmath>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "spdec/decoding.hpp"
#include "spdec/oracle.hpp"
#include "spdec/synthetic.hpp"

using namespace spdec;

namespace {

constexpr TokenId a = 4, b = 5, c = 6;

Transformer random_model(std::uint64_t seed, int vocab = 16) {
  ModelConfig cfg;
  cfg.num_layers = 2;
  cfg.num_heads = 2;
  cfg.d_model = 16;
  cfg.d_ff = 32;
  cfg.vocab_size = vocab;
  cfg.max_len = 64;
  return Transformer(cfg, random_params(cfg, seed));
}

Hypothesis hyp(TokenSequence ids, double lp) {
  Hypothesis h;
  h.ids = std::move(ids);
  h.log_prob = lp;
  h.finished = h.ids.back() == kEos;
  return h;
}

}  // namespace

TEST(Greedy, OracleTrace) {
  OracleModel m(OracleSpec{}, 10);
  const auto r = greedy(m, {1, a, b, c, 2}, 100);
  EXPECT_EQ(r.hypotheses.at(0).ids, (TokenSequence{1, a, b, c, kEos}));
  EXPECT_EQ(r.stats.forward_passes, 4);
  EXPECT_EQ(r.stats.generated_tokens, 4);
  const auto capped = greedy(m, {1, a, b, c, 2}, 1);
  EXPECT_EQ(capped.hypotheses.at(0).ids, (TokenSequence{1, a}));
  EXPECT_EQ(capped.stats.forward_passes, 1);
  EXPECT_THROW(greedy(m, {1, a, 2}, 0), ConfigError);
}

TEST(Greedy, TiesGoToLowestId) {
  const std::vector<double> lp{-1.0, -1.0, -2.0, -0.5, -0.5, -3.0};
  EXPECT_EQ(argmax_token(lp), 3);
  EXPECT_EQ(top_tokens(lp, 3), (std::vector<TokenId>{3, 4, 2}));
  // PAD and BOS are never produced, even as the argmax.
  EXPECT_EQ(argmax_token(std::vector<double>{0.0, 0.0, -1.0, -2.0}), kEos);
  EXPECT_EQ(top_tokens(lp, 2, TokenId{3}), (std::vector<TokenId>{4, 2}));
}

TEST(GreedySpeculative, HandTrace) {
  OracleModel m(OracleSpec{}, 10);
  const TokenSequence src{1, a, b, c, 2};
  const auto drafts = get_drafts(src, 2, 25);
  ASSERT_EQ(drafts.drafts, (std::vector<TokenSequence>{{a, b}, {b, c}}));
  const auto r = greedy_speculative(m, src, drafts, 100);
  EXPECT_EQ(r.hypotheses.at(0).ids, (TokenSequence{1, a, b, c, kEos}));
  EXPECT_EQ(r.stats.forward_passes, 2);
  EXPECT_EQ(r.stats.accepted_draft_tokens, 2);
  EXPECT_EQ(r.stats.generated_tokens, 4);
  EXPECT_DOUBLE_EQ(acceptance_rate(r.stats), 0.5);
  EXPECT_EQ(r.stats.max_batch_rows, 2u);
}

TEST(GreedySpeculative, EmptyDraftMatchesGreedy) {
  const auto m = random_model(1);
  const TokenSequence src{1, 5, 6, 7, 8, 9, 2};
  const auto g = greedy(m, src, 20);
  const auto s = greedy_speculative(m, src, get_drafts(src, 0, 25), 20);
  EXPECT_EQ(s.hypotheses[0].ids, g.hypotheses[0].ids);
  EXPECT_EQ(s.stats.forward_passes, g.stats.forward_passes);
  EXPECT_EQ(s.stats.generated_tokens, g.stats.generated_tokens);
  EXPECT_EQ(s.stats.accepted_draft_tokens, 0);
  EXPECT_DOUBLE_EQ(acceptance_rate(s.stats), 0.0);
}

TEST(GreedySpeculative, PerfectDraftsBound) {
  OracleModel m(OracleSpec{}, 12);
  std::mt19937_64 rng(3);
  for (std::size_t len = 1; len <= 30; ++len) {
    for (std::size_t N = 1; N <= 6; ++N) {
      TokenSequence src{kBos};
      for (std::size_t i = 0; i < len; ++i) src.push_back(static_cast<TokenId>(4 + rng() % 8));
      src.push_back(kEos);
      // Windows over the target itself, EOS included, so every draft step is accepted.
      auto padded = strip_specials(src);
      padded.insert(padded.end(), N, kEos);
      DraftSet ds;
      ds.max_drafts = padded.size();
      for (std::size_t i = 0; i + N <= padded.size(); ++i)
        ds.drafts.emplace_back(padded.begin() + static_cast<std::ptrdiff_t>(i),
                               padded.begin() + static_cast<std::ptrdiff_t>(i + N));
      const auto r = greedy_speculative(m, src, ds, 200);
      const auto gen = r.stats.generated_tokens;
      ASSERT_EQ(gen, static_cast<std::int64_t>(len + 1));
      EXPECT_EQ(r.stats.forward_passes, (gen + static_cast<std::int64_t>(N)) / static_cast<std::int64_t>(N + 1))
          << len << " " << N;
    }
  }
}

TEST(GreedySpeculative, EquivalenceOnRandomModels) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 40; ++trial) {
    const auto m = random_model(50 + trial);
    // Repetitive sources make accidental draft acceptance likely.
    TokenSequence src{kBos};
    const std::size_t len = 2 + rng() % 20;
    for (std::size_t i = 0; i < len; ++i) src.push_back(static_cast<TokenId>(4 + rng() % 3));
    src.push_back(kEos);
    const std::size_t max_len = 1 + rng() % 30;
    const auto g = greedy(m, src, max_len);
    for (std::size_t L = 0; L <= 12; L += 3) {
      const auto s = greedy_speculative(m, src, get_drafts(src, L, 25), max_len);
      ASSERT_EQ(s.hypotheses[0].ids, g.hypotheses[0].ids) << trial << " L=" << L;
      EXPECT_GE(s.stats.forward_passes, 1);
      EXPECT_LE(s.stats.forward_passes, s.stats.generated_tokens);
      EXPECT_LE(s.stats.accepted_draft_tokens, s.stats.generated_tokens);
    }
  }
}

TEST(GreedyBatch, MatchesSingleQueries) {
  const auto m = random_model(5);
  const auto corpus = random_corpus(6, 7, 9, 16);
  const auto batched = greedy_batch(m, corpus, 15);
  for (std::size_t i = 0; i < corpus.size(); ++i)
    EXPECT_EQ(batched[i].hypotheses[0].ids, greedy(m, corpus[i], 15).hypotheses[0].ids);
}

TEST(AcceptanceRate, Bookkeeping) {
  DecodeStats s;
  EXPECT_THROW(acceptance_rate(s), EmptyGeneration);
  s.generated_tokens = 100;
  s.accepted_draft_tokens = 78;
  EXPECT_DOUBLE_EQ(acceptance_rate(s), 0.78);
}

TEST(Beam, WidthOneIsGreedy) {
  for (int seed = 0; seed < 10; ++seed) {
    const auto m = random_model(200 + seed);
    const TokenSequence src{1, 5, 9, 7, 7, 2};
    const auto g = greedy(m, src, 25);
    const auto bm = beam_search(m, src, 1, 25);
    ASSERT_EQ(bm.hypotheses.size(), 1u);
    EXPECT_EQ(bm.hypotheses[0].ids, g.hypotheses[0].ids);
    EXPECT_NEAR(bm.hypotheses[0].log_prob, g.hypotheses[0].log_prob, 1e-9);
  }
}

TEST(Beam, OracleRankOneIsTarget) {
  OracleModel m(OracleSpec{}, 10);
  const auto r = beam_search(m, {1, a, b, c, a, 2}, 3, 50);
  ASSERT_EQ(r.hypotheses.size(), 3u);
  EXPECT_EQ(r.hypotheses[0].ids, (TokenSequence{1, a, b, c, a, kEos}));
  for (std::size_t i = 1; i < r.hypotheses.size(); ++i)
    EXPECT_GE(r.hypotheses[i - 1].log_prob, r.hypotheses[i].log_prob);
}

TEST(Sbs, EmptyDraftReducesToBeam) {
  for (int seed = 0; seed < 6; ++seed) {
    const auto m = random_model(300 + seed);
    const TokenSequence src{1, 4, 8, 8, 12, 5, 2};
    for (std::size_t n : {1, 3, 5}) {
      const auto bm = beam_search(m, src, n, 20);
      const auto sb = speculative_beam_search(m, src, get_drafts(src, 0, 25), n, 20, 1000);
      ASSERT_EQ(sb.hypotheses.size(), bm.hypotheses.size());
      for (std::size_t i = 0; i < bm.hypotheses.size(); ++i) {
        EXPECT_EQ(sb.hypotheses[i].ids, bm.hypotheses[i].ids);
        EXPECT_LT(std::abs(sb.hypotheses[i].log_prob - bm.hypotheses[i].log_prob), 1e-5);
      }
      EXPECT_EQ(sb.stats.forward_passes, bm.stats.forward_passes);
      EXPECT_EQ(sb.stats.accepted_draft_tokens, 0);
    }
  }
}

TEST(Sbs, OracleTopOneMatchesBeam) {
  OracleSpec spec;
  spec.target = OracleTarget::kRandomEdit;
  spec.edit_rate = 0.1;
  OracleModel m(spec, 20);
  for (const auto& src : random_corpus(8, 20, 30, 20)) {
    const auto bm = beam_search(m, src, 5, 100);
    const auto sb = speculative_beam_search(m, src, get_drafts(src, 10, 25), 5, 100, 100);
    EXPECT_EQ(sb.hypotheses[0].ids, bm.hypotheses[0].ids);
    EXPECT_LT(sb.stats.forward_passes, bm.stats.forward_passes);
  }
}

TEST(Sbs, OutputContract) {
  const auto m = random_model(400);
  const TokenSequence src{1, 4, 5, 4, 5, 4, 5, 2};
  const std::size_t max_len = 12;
  const auto r = speculative_beam_search(m, src, get_drafts(src, 3, 25), 4, max_len, 100);
  ASSERT_EQ(r.hypotheses.size(), 4u);
  for (std::size_t i = 0; i < r.hypotheses.size(); ++i) {
    const auto& h = r.hypotheses[i];
    EXPECT_TRUE(h.ids.back() == kEos || h.generated() == max_len);
    EXPECT_LE(h.generated(), max_len);
    if (i) EXPECT_GE(r.hypotheses[i - 1].log_prob, h.log_prob);
  }
  EXPECT_THROW(speculative_beam_search(m, src, get_drafts(src, 3, 25), 0, 10, 10), ConfigError);
  EXPECT_THROW(speculative_beam_search(m, src, get_drafts(src, 3, 25), 2, 10, 0), ConfigError);
}

TEST(Sbs, MaxItersStopsEarly) {
  OracleModel m(OracleSpec{}, 12);
  const auto src = random_corpus(9, 1, 30, 12).front();
  const auto r = speculative_beam_search(m, src, get_drafts(src, 0, 25), 3, 100, 4);
  EXPECT_EQ(r.stats.forward_passes, 4);
  EXPECT_EQ(r.hypotheses.size(), 3u);
}

TEST(Rescoring, StoredLogProbsMatchTeacherForcing) {
  const auto m = random_model(500);
  const TokenSequence src{1, 6, 7, 6, 7, 9, 2};
  std::vector<Hypothesis> all;
  for (auto& h : beam_search(m, src, 4, 15).hypotheses) all.push_back(h);
  for (auto& h : speculative_beam_search(m, src, get_drafts(src, 2, 25), 4, 15, 100).hypotheses)
    all.push_back(h);
  all.push_back(greedy_speculative(m, src, get_drafts(src, 2, 25), 15).hypotheses[0]);
  for (const auto& h : all) EXPECT_NEAR(h.log_prob, score_sequence(m, src, h.ids), 1e-4);
}

TEST(BuildingBlocks, BestDraftRule) {
  EXPECT_EQ(best_draft(std::vector<std::size_t>{2, 0, 3}).draft_index, 2u);
  EXPECT_EQ(best_draft(std::vector<std::size_t>{2, 0, 3}).accepted, 3u);
  EXPECT_EQ(best_draft(std::vector<std::size_t>{0, 0, 0}).draft_index, 0u);
  EXPECT_EQ(best_draft(std::vector<std::size_t>{0, 0, 0}).accepted, 0u);
  EXPECT_EQ(best_draft(std::vector<std::size_t>{2, 2}).draft_index, 0u);
}

TEST(BuildingBlocks, SortAndExtract) {
  std::vector<Hypothesis> cands{hyp({1, 4}, -1.0), hyp({1, 5}, -0.5), hyp({1, 6}, -2.0)};
  auto top = sort_and_extract(cands, {}, 2);
  ASSERT_EQ(top.size(), 2u);
  EXPECT_EQ(top[0].log_prob, -0.5);
  EXPECT_EQ(top[1].log_prob, -1.0);
  auto tie = sort_and_extract({hyp({1, 4, 5}, -1.0), hyp({1, 4}, -1.0)}, {}, 2);
  EXPECT_EQ(tie[0].ids.size(), 2u);
  auto lex = sort_and_extract({hyp({1, 5}, -1.0), hyp({1, 4}, -1.0)}, {}, 2);
  EXPECT_EQ(lex[0].ids, (TokenSequence{1, 4}));
  EXPECT_EQ(sort_and_extract(cands, {}, 10).size(), 3u);
  auto pooled = sort_and_extract(cands, {hyp({1, 2}, -0.1)}, 2);
  EXPECT_EQ(pooled[0].ids, (TokenSequence{1, 2}));
  EXPECT_EQ(sort_and_extract({hyp({1, 4}, -1.0), hyp({1, 4}, -1.0)}, {}, 2).size(), 1u);
}

TEST(BuildingBlocks, PadLeftAndConcat) {
  EXPECT_EQ(pad_left(std::vector<Hypothesis>{hyp({1, 4, 5, 6, 7}, 0), hyp({1, 4, 5}, 0)}).pad_counts,
            (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(pad_left(std::vector<Hypothesis>{hyp({1, 4}, 0)}).ids, (TokenSequence{1, 4}));

  DraftSet three;
  three.drafts = {{a, b}, {b, c}, {c, a}};
  const std::vector<Hypothesis> two{hyp({1, 4}, 0), hyp({1, 4, 5, 6}, 0)};
  const auto rows = concat_drafts_to_sequences(two, three);
  EXPECT_EQ(rows.batch.rows, 6u);
  EXPECT_EQ(rows.batch.width, 6u);
  EXPECT_EQ(rows.batch.pad_counts[0], 2u);
  EXPECT_EQ(rows.origin[4].hypothesis, 1u);
  EXPECT_EQ(rows.origin[4].draft_index, 1u);
  EXPECT_EQ(rows.last_prefix_position(0, two), 3u);

  DraftSet empty;
  empty.drafts = {{}};
  const auto single = concat_drafts_to_sequences({hyp({1, 4, 5}, 0)}, empty);
  EXPECT_EQ(single.batch.rows, 1u);
  EXPECT_EQ(single.batch.ids, (TokenSequence{1, 4, 5}));

  const auto skip = concat_drafts_to_sequences({hyp({1, 4, 2}, 0), hyp({1, 5}, 0)}, three);
  EXPECT_EQ(skip.batch.rows, 3u);
  EXPECT_EQ(skip.origin[0].hypothesis, 1u);
}

TEST(BuildingBlocks, DraftsAreCutAtMaxLen) {
  DraftSet ds;
  ds.drafts = {{a, b, c}, {a, b, a}};
  // 1 token generated, max_len 3: room for one draft token plus the bonus.
  const auto rows = concat_drafts_to_sequences({hyp({1, 4}, 0)}, ds, 3);
  ASSERT_EQ(rows.batch.rows, 1u);
  EXPECT_EQ(rows.origin[0].draft, (TokenSequence{a}));
}

namespace {

// Target: s0..s4 X s6..s11 Y s13.., so a window starting at s0 is accepted for
// five tokens, and so is the window starting at s7 after the prefix t0..t6.
struct Fig5Setup {
  TokenSequence source;
  OracleModel model;
  DraftSet drafts;

  Fig5Setup() : model(make_spec(), 30) {
    source.push_back(kBos);
    for (TokenId t = 4; t < 24; ++t) source.push_back(t);
    source.push_back(kEos);
    drafts = get_drafts(source, 10, 25);
  }
  static OracleSpec make_spec() {
    OracleSpec s;
    s.target = OracleTarget::kEditScript;
    s.edits = {{5, 28}, {12, 29}};
    return s;
  }
};

}  // namespace

TEST(Fig5, CandidateCounts) {
  Fig5Setup f;
  const auto target = oracle_target(f.model.spec(), f.source, 30);
  const auto mem = f.model.encode(f.source);

  const std::vector<Hypothesis> first{Hypothesis{}};
  auto drafted = concat_drafts_to_sequences(first, f.drafts);
  auto logits = f.model.decode_step(mem, drafted.batch);
  auto best = select_best_draft(logits, drafted, first);
  ASSERT_TRUE(best[0]);
  EXPECT_EQ(best[0]->accepted, 5u);
  EXPECT_EQ(best[0]->draft_index, 0u);
  const auto c1 = sample(first[0], drafted.origin[best[0]->row].draft, 5, logits, best[0]->row,
                         drafted.last_prefix_position(best[0]->row, first), 2);
  EXPECT_EQ(c1.size(), 12u);
  std::set<std::size_t> lengths;
  for (const auto& h : c1) {
    lengths.insert(h.ids.size());
    EXPECT_LE(h.log_prob, 0.0);
  }
  EXPECT_EQ(lengths.size(), 6u);

  Hypothesis h1;
  Hypothesis h2;
  h2.ids.insert(h2.ids.end(), target.begin(), target.begin() + 7);
  const std::vector<Hypothesis> two{h1, h2};
  drafted = concat_drafts_to_sequences(two, f.drafts);
  logits = f.model.decode_step(mem, drafted.batch);
  best = select_best_draft(logits, drafted, two);
  std::size_t total = 0;
  for (std::size_t h = 0; h < two.size(); ++h) {
    ASSERT_TRUE(best[h]);
    EXPECT_EQ(best[h]->accepted, 5u);
    total += sample(two[h], drafted.origin[best[h]->row].draft, best[h]->accepted, logits,
                    best[h]->row, drafted.last_prefix_position(best[h]->row, two), 2)
                 .size();
  }
  EXPECT_EQ(best[1]->draft_index, 7u);
  EXPECT_EQ(total, 24u);
}

TEST(Sample, ZeroAcceptedIsBeamExpansion) {
  const auto m = random_model(600);
  const auto mem = m.encode({1, 4, 5, 2});
  Hypothesis h = hyp({1, 7}, -0.25);
  const auto logits = m.decode_step(mem, pad_left(std::vector<TokenSequence>{h.ids}));
  const auto c = sample(h, TokenSequence{}, 0, logits, 0, 1, 3);
  ASSERT_EQ(c.size(), 3u);
  const auto lp = nn::log_softmax(logits.at(0, 1));
  const auto top = top_tokens(lp, 3);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(c[i].ids.back(), top[i]);
    EXPECT_LE(c[i].log_prob, h.log_prob);
  }
}

TEST(Sbs, EffectiveBatchIsLiveTimesDrafts) {
  OracleSpec spec;
  spec.target = OracleTarget::kRandomEdit;
  spec.edit_rate = 0.1;
  OracleModel m(spec, 20);
  for (const auto& src : random_corpus(10, 10, 40, 20)) {
    const auto drafts = get_drafts(src, 6, 25);
    const auto r = speculative_beam_search(m, src, drafts, 5, 200, 200);
    EXPECT_EQ(r.stats.max_batch_rows % drafts.size(), 0u);
    EXPECT_GE(r.stats.max_batch_rows, drafts.size());
    EXPECT_LE(r.stats.max_batch_rows, 5 * drafts.size());
  }
}
