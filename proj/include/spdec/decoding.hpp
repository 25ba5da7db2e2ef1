#pragma once

// Greedy, speculative greedy, beam search and speculative beam search over any
// model exposing encode()/decode_step(). Every loop iteration of every
// strategy performs exactly one decode_step call.

#include <algorithm>
#include <chrono>
#include <concepts>
#include <limits>
#include <optional>
#include <set>
#include <span>
#include <utility>
#include <vector>

#include "spdec/drafting.hpp"
#include "spdec/model.hpp"
#include "spdec/nn.hpp"
#include "spdec/types.hpp"

namespace spdec {

template <class M>
concept SequenceModel = requires(const M& m, const TokenSequence& src,
                                 const typename M::Memory& mem, const PaddedBatch& batch) {
  { m.encode(src) } -> std::same_as<typename M::Memory>;
  { m.decode_step(mem, batch) } -> std::same_as<LogitBatch>;
  { m.vocab_size() } -> std::convertible_to<std::size_t>;
  { m.max_positions() } -> std::convertible_to<std::size_t>;
};

struct Hypothesis {
  TokenSequence ids{kBos};
  double log_prob = 0.0;
  bool finished = false;        // last id is EOS
  std::size_t accepted = 0;     // tokens copied from drafts along this hypothesis

  std::size_t generated() const { return ids.size() - 1; }
};

struct DecodeStats {
  std::int64_t forward_passes = 0;
  std::int64_t accepted_draft_tokens = 0;
  std::int64_t generated_tokens = 0;
  double wall_time_ms = 0.0;
  std::size_t max_batch_rows = 0;  // largest decoder batch seen in one pass
};

struct DecodeResult {
  std::vector<Hypothesis> hypotheses;  // best first
  DecodeStats stats;
};

/// accepted / generated; throws EmptyGeneration when nothing was generated.
inline double acceptance_rate(const DecodeStats& s) {
  if (s.generated_tokens <= 0) throw EmptyGeneration("acceptance rate of an empty generation");
  return static_cast<double>(s.accepted_draft_tokens) / static_cast<double>(s.generated_tokens);
}

/// PAD and BOS are never produced by a decoder.
inline bool emittable(TokenId id) { return id != kPad && id != kBos; }

/// The n best emittable tokens by log-probability, ties to the lower id.
/// `exclude` (if set) is skipped.
inline std::vector<TokenId> top_tokens(std::span<const double> logp, std::size_t n,
                                       std::optional<TokenId> exclude = std::nullopt) {
  std::vector<TokenId> ids;
  ids.reserve(logp.size());
  for (std::size_t i = 0; i < logp.size(); ++i) {
    const auto id = static_cast<TokenId>(i);
    if (emittable(id) && id != exclude) ids.push_back(id);
  }
  n = std::min(n, ids.size());
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n), ids.end(),
                    [&](TokenId a, TokenId b) {
                      const auto la = logp[static_cast<std::size_t>(a)];
                      const auto lb = logp[static_cast<std::size_t>(b)];
                      return la != lb ? la > lb : a < b;
                    });
  ids.resize(n);
  return ids;
}

inline TokenId argmax_token(std::span<const double> logp) { return top_tokens(logp, 1).front(); }

/// Deterministic total order: higher log-prob, then shorter, then
/// lexicographically smaller ids.
inline bool ranks_before(const Hypothesis& a, const Hypothesis& b) {
  if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
  if (a.ids.size() != b.ids.size()) return a.ids.size() < b.ids.size();
  return a.ids < b.ids;
}

/// Union of candidates and the frozen pool, ranked, duplicates dropped, top n
/// kept. No length normalization.
inline std::vector<Hypothesis> sort_and_extract(std::vector<Hypothesis> candidates,
                                                const std::vector<Hypothesis>& pool,
                                                std::size_t n) {
  candidates.insert(candidates.end(), pool.begin(), pool.end());
  std::sort(candidates.begin(), candidates.end(), ranks_before);
  std::vector<Hypothesis> out;
  std::set<TokenSequence> seen;
  for (auto& c : candidates) {
    if (out.size() == n) break;
    if (seen.insert(c.ids).second) out.push_back(std::move(c));
  }
  return out;
}

/// Common-width matrix of hypotheses with leading PADs.
inline PaddedBatch pad_left(const std::vector<Hypothesis>& hyps) {
  std::vector<TokenSequence> seqs;
  seqs.reserve(hyps.size());
  for (const auto& h : hyps) seqs.push_back(h.ids);
  return pad_left(seqs);
}

/// Greedy verify rule: the number of leading draft tokens that each equal the
/// argmax after the tokens before them. `last` is the row position of the
/// final prefix token.
inline std::size_t accepted_length(const LogitBatch& logits, std::size_t row, std::size_t last,
                                   std::span<const TokenId> draft) {
  std::size_t k = 0;
  while (k < draft.size()) {
    const auto lp = nn::log_softmax(logits.at(row, last + k));
    if (argmax_token(lp) != draft[k]) break;
    ++k;
  }
  return k;
}

struct DraftChoice {
  std::size_t draft_index = 0;
  std::size_t accepted = 0;
};

/// Largest count wins, ties to the lowest index.
inline DraftChoice best_draft(std::span<const std::size_t> accepted_counts) {
  DraftChoice best;
  for (std::size_t i = 0; i < accepted_counts.size(); ++i)
    if (accepted_counts[i] > best.accepted) best = {i, accepted_counts[i]};
  return best;
}

// Drafts are cut so that a pass never yields more than max_len generated
// tokens; cutting can make drafts coincide, so only the first copy is kept.
inline std::vector<std::pair<std::size_t, TokenSequence>> fitted_drafts(
    const DraftSet& drafts, std::size_t generated, std::size_t max_len) {
  const std::size_t room = max_len > generated ? max_len - generated - 1 : 0;
  std::vector<std::pair<std::size_t, TokenSequence>> out;
  std::set<TokenSequence> seen;
  for (std::size_t i = 0; i < drafts.drafts.size(); ++i) {
    const auto& d = drafts.drafts[i];
    TokenSequence cut(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(std::min(d.size(), room)));
    if (seen.insert(cut).second) out.emplace_back(i, std::move(cut));
  }
  if (out.empty()) out.emplace_back(0, TokenSequence{});
  return out;
}

struct DraftedBatch {
  PaddedBatch batch;
  struct Origin {
    std::size_t hypothesis;
    std::size_t draft_index;  // index into the DraftSet
    TokenSequence draft;      // as appended, possibly cut
  };
  std::vector<Origin> origin;  // one per row

  // Row position of the last token of the hypothesis part of row r.
  std::size_t last_prefix_position(std::size_t r, const std::vector<Hypothesis>& hyps) const {
    return batch.pad_counts[r] + hyps[origin[r].hypothesis].ids.size() - 1;
  }
};

/// Every draft appended to every unfinished hypothesis, rows left-padded to a
/// common width. Finished hypotheses contribute no rows.
inline DraftedBatch concat_drafts_to_sequences(const std::vector<Hypothesis>& hyps,
                                               const DraftSet& drafts,
                                               std::size_t max_len =
                                                   std::numeric_limits<std::size_t>::max() / 2) {
  DraftedBatch out;
  std::vector<TokenSequence> rows;
  for (std::size_t h = 0; h < hyps.size(); ++h) {
    if (hyps[h].finished) continue;
    for (auto& [index, draft] : fitted_drafts(drafts, hyps[h].generated(), max_len)) {
      TokenSequence row = hyps[h].ids;
      row.insert(row.end(), draft.begin(), draft.end());
      rows.push_back(std::move(row));
      out.origin.push_back({h, index, std::move(draft)});
    }
  }
  out.batch = pad_left(rows);
  return out;
}

struct BestDraft {
  std::size_t row = 0;
  std::size_t draft_index = 0;
  std::size_t accepted = 0;
};

/// For each hypothesis with rows in `drafted`, the draft with the most
/// accepted tokens (lowest index on ties). Indexed like `hyps`; hypotheses
/// without rows get nullopt.
inline std::vector<std::optional<BestDraft>> select_best_draft(const LogitBatch& logits,
                                                               const DraftedBatch& drafted,
                                                               const std::vector<Hypothesis>& hyps) {
  std::vector<std::vector<std::size_t>> rows_of(hyps.size());
  for (std::size_t r = 0; r < drafted.origin.size(); ++r)
    rows_of[drafted.origin[r].hypothesis].push_back(r);
  std::vector<std::optional<BestDraft>> out(hyps.size());
  for (std::size_t h = 0; h < hyps.size(); ++h) {
    if (rows_of[h].empty()) continue;
    std::vector<std::size_t> counts;
    for (auto r : rows_of[h])
      counts.push_back(accepted_length(logits, r, drafted.last_prefix_position(r, hyps),
                                       drafted.origin[r].draft));
    const auto choice = best_draft(counts);
    const auto r = rows_of[h][choice.draft_index];
    out[h] = BestDraft{r, drafted.origin[r].draft_index, choice.accepted};
  }
  return out;
}

/// Candidates from one hypothesis and its accepted draft span of k tokens.
/// At each cut j in 0..k the base is hyp ++ draft[0..j), scored with the
/// model's log-probabilities of the copied tokens, and n one-token
/// extensions are emitted. At cuts j < k the draft token itself is skipped
/// (that continuation is the base of cut j+1), so the n best other tokens are
/// taken. (k+1)*n candidates in total.
inline std::vector<Hypothesis> sample(const Hypothesis& hyp, std::span<const TokenId> draft,
                                      std::size_t k, const LogitBatch& logits, std::size_t row,
                                      std::size_t last, std::size_t n) {
  std::vector<Hypothesis> out;
  out.reserve((k + 1) * n);
  Hypothesis base = hyp;
  for (std::size_t j = 0; j <= k; ++j) {
    const auto lp = nn::log_softmax(logits.at(row, last + j));
    const auto skip = j < k ? std::optional<TokenId>(draft[j]) : std::nullopt;
    for (auto t : top_tokens(lp, n, skip)) {
      Hypothesis c = base;
      c.ids.push_back(t);
      c.log_prob += lp[static_cast<std::size_t>(t)];
      c.finished = t == kEos;
      out.push_back(std::move(c));
    }
    if (j < k) {
      base.ids.push_back(draft[j]);
      base.log_prob += lp[static_cast<std::size_t>(draft[j])];
      ++base.accepted;
    }
  }
  return out;
}

namespace detail {

using Clock = std::chrono::steady_clock;

inline double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

template <SequenceModel M>
std::size_t fit_max_len(const M& model, std::size_t max_len) {
  if (max_len < 1) throw ConfigError("max_len must be at least 1");
  return std::min(max_len, static_cast<std::size_t>(model.max_positions()));
}

// Frozen pool of complete hypotheses (EOS or length cap); keeping its best n
// loses nothing because entries only ever compete for the top n.
inline void freeze(std::vector<Hypothesis>& pool, std::vector<Hypothesis>& candidates,
                   std::size_t max_len, std::size_t n) {
  std::vector<Hypothesis> live, frozen;
  for (auto& c : candidates)
    (c.finished || c.generated() >= max_len ? frozen : live).push_back(std::move(c));
  if (!frozen.empty()) pool = sort_and_extract(std::move(frozen), pool, n);
  candidates = std::move(live);
}

inline bool is_frozen(const Hypothesis& h, std::size_t max_len) {
  return h.finished || h.generated() >= max_len;
}

inline void fill_top_stats(DecodeResult& r) {
  if (r.hypotheses.empty()) return;
  r.stats.generated_tokens = static_cast<std::int64_t>(r.hypotheses.front().generated());
  r.stats.accepted_draft_tokens = static_cast<std::int64_t>(r.hypotheses.front().accepted);
}

}  // namespace detail

/// Plain greedy decoding, one token per forward pass.
template <SequenceModel M>
DecodeResult greedy(const M& model, const TokenSequence& source, std::size_t max_len) {
  const auto start = detail::Clock::now();
  max_len = detail::fit_max_len(model, max_len);
  const auto memory = model.encode(source);
  DecodeResult res;
  Hypothesis h;
  while (!h.finished && h.generated() < max_len) {
    const auto logits = model.decode_step(memory, pad_left(std::vector<TokenSequence>{h.ids}));
    ++res.stats.forward_passes;
    res.stats.max_batch_rows = std::max<std::size_t>(res.stats.max_batch_rows, 1);
    const auto lp = nn::log_softmax(logits.at(0, h.ids.size() - 1));
    const auto t = argmax_token(lp);
    h.ids.push_back(t);
    h.log_prob += lp[static_cast<std::size_t>(t)];
    h.finished = t == kEos;
  }
  res.stats.generated_tokens = static_cast<std::int64_t>(h.generated());
  res.hypotheses.push_back(std::move(h));
  res.stats.wall_time_ms = detail::elapsed_ms(start);
  return res;
}

/// Greedy decoding of several queries in one batch per step; finished
/// queries leave the batch. Each query's forward_passes counts the batched
/// passes it took part in.
template <SequenceModel M>
std::vector<DecodeResult> greedy_batch(const M& model, const std::vector<TokenSequence>& sources,
                                       std::size_t max_len) {
  const auto start = detail::Clock::now();
  max_len = detail::fit_max_len(model, max_len);
  std::vector<typename M::Memory> memories;
  memories.reserve(sources.size());
  for (const auto& s : sources) memories.push_back(model.encode(s));
  std::vector<DecodeResult> res(sources.size());
  std::vector<Hypothesis> hyps(sources.size());
  for (;;) {
    std::vector<std::size_t> active;
    for (std::size_t i = 0; i < hyps.size(); ++i)
      if (!hyps[i].finished && hyps[i].generated() < max_len) active.push_back(i);
    if (active.empty()) break;
    std::vector<TokenSequence> rows;
    std::vector<const typename M::Memory*> mems;
    for (auto i : active) {
      rows.push_back(hyps[i].ids);
      mems.push_back(&memories[i]);
    }
    const auto batch = pad_left(rows);
    const auto logits =
        model.decode_step(std::span<const typename M::Memory* const>(mems), batch);
    for (std::size_t r = 0; r < active.size(); ++r) {
      auto& h = hyps[active[r]];
      auto& st = res[active[r]].stats;
      ++st.forward_passes;
      st.max_batch_rows = std::max(st.max_batch_rows, active.size());
      const auto lp = nn::log_softmax(logits.at(r, batch.width - 1));
      const auto t = argmax_token(lp);
      h.ids.push_back(t);
      h.log_prob += lp[static_cast<std::size_t>(t)];
      h.finished = t == kEos;
    }
  }
  const double ms = detail::elapsed_ms(start);
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    res[i].stats.generated_tokens = static_cast<std::int64_t>(hyps[i].generated());
    res[i].stats.wall_time_ms = ms / static_cast<double>(hyps.size());
    res[i].hypotheses.push_back(std::move(hyps[i]));
  }
  return res;
}

/// Greedy decoding with draft verification: every draft is appended to the
/// prefix and checked in one batched pass; the draft with the longest
/// accepted span contributes those tokens plus the argmax after them. The
/// output is identical to greedy().
template <SequenceModel M>
DecodeResult greedy_speculative(const M& model, const TokenSequence& source,
                                const DraftSet& drafts, std::size_t max_len) {
  const auto start = detail::Clock::now();
  max_len = detail::fit_max_len(model, max_len);
  const auto memory = model.encode(source);
  DecodeResult res;
  Hypothesis h;
  while (!h.finished && h.generated() < max_len) {
    const std::vector<Hypothesis> current{h};
    const auto drafted = concat_drafts_to_sequences(current, drafts, max_len);
    const auto logits = model.decode_step(memory, drafted.batch);
    ++res.stats.forward_passes;
    res.stats.max_batch_rows = std::max(res.stats.max_batch_rows, drafted.batch.rows);
    const auto best = *select_best_draft(logits, drafted, current).front();
    const auto& draft = drafted.origin[best.row].draft;
    const auto last = drafted.last_prefix_position(best.row, current);
    for (std::size_t i = 0; i <= best.accepted && !h.finished; ++i) {
      const auto lp = nn::log_softmax(logits.at(best.row, last + i));
      const TokenId t = i < best.accepted ? draft[i] : argmax_token(lp);
      h.ids.push_back(t);
      h.log_prob += lp[static_cast<std::size_t>(t)];
      h.finished = t == kEos;
      if (i < best.accepted) ++h.accepted;
    }
  }
  res.stats.generated_tokens = static_cast<std::int64_t>(h.generated());
  res.stats.accepted_draft_tokens = static_cast<std::int64_t>(h.accepted);
  res.hypotheses.push_back(std::move(h));
  res.stats.wall_time_ms = detail::elapsed_ms(start);
  return res;
}

/// Synchronized-length beam search of width n. Complete hypotheses are
/// frozen into a pool that competes in every selection; decoding stops once
/// the n best are all complete.
template <SequenceModel M>
DecodeResult beam_search(const M& model, const TokenSequence& source, std::size_t n,
                         std::size_t max_len) {
  if (n < 1) throw ConfigError("beam size must be at least 1");
  const auto start = detail::Clock::now();
  max_len = detail::fit_max_len(model, max_len);
  const auto memory = model.encode(source);
  DecodeResult res;
  std::vector<Hypothesis> live{Hypothesis{}}, pool;
  while (!live.empty()) {
    const auto batch = pad_left(live);
    const auto logits = model.decode_step(memory, batch);
    ++res.stats.forward_passes;
    res.stats.max_batch_rows = std::max(res.stats.max_batch_rows, batch.rows);
    std::vector<Hypothesis> candidates;
    for (std::size_t b = 0; b < live.size(); ++b) {
      const auto lp = nn::log_softmax(logits.at(b, batch.width - 1));
      for (auto t : top_tokens(lp, n)) {
        Hypothesis c = live[b];
        c.ids.push_back(t);
        c.log_prob += lp[static_cast<std::size_t>(t)];
        c.finished = t == kEos;
        candidates.push_back(std::move(c));
      }
    }
    detail::freeze(pool, candidates, max_len, n);
    live.clear();
    for (auto& h : sort_and_extract(std::move(candidates), pool, n))
      if (!detail::is_frozen(h, max_len)) live.push_back(std::move(h));
  }
  res.hypotheses = std::move(pool);
  detail::fill_top_stats(res);
  res.stats.wall_time_ms = detail::elapsed_ms(start);
  return res;
}

/// Speculative beam search: each pass scores every hypothesis with every
/// draft, keeps the best draft per hypothesis, expands candidates of
/// different lengths along its accepted span and keeps the n best. Rows of
/// unequal length are left-padded with shifted positions. With only the
/// empty draft this is beam_search.
template <SequenceModel M>
DecodeResult speculative_beam_search(const M& model, const TokenSequence& source,
                                     const DraftSet& drafts, std::size_t n, std::size_t max_len,
                                     std::size_t max_iters) {
  if (n < 1) throw ConfigError("beam size must be at least 1");
  if (max_iters < 1) throw ConfigError("max_iters must be at least 1");
  const auto start = detail::Clock::now();
  max_len = detail::fit_max_len(model, max_len);
  const auto memory = model.encode(source);
  DecodeResult res;
  std::vector<Hypothesis> live{Hypothesis{}}, pool;
  std::size_t iters = 0;
  while (!live.empty() && iters < max_iters) {
    const auto drafted = concat_drafts_to_sequences(live, drafts, max_len);
    const auto logits = model.decode_step(memory, drafted.batch);
    ++res.stats.forward_passes;
    ++iters;
    res.stats.max_batch_rows = std::max(res.stats.max_batch_rows, drafted.batch.rows);
    const auto best = select_best_draft(logits, drafted, live);
    std::vector<Hypothesis> candidates;
    for (std::size_t h = 0; h < live.size(); ++h) {
      const auto& choice = *best[h];
      auto c = sample(live[h], drafted.origin[choice.row].draft, choice.accepted, logits,
                      choice.row, drafted.last_prefix_position(choice.row, live), n);
      std::move(c.begin(), c.end(), std::back_inserter(candidates));
    }
    detail::freeze(pool, candidates, max_len, n);
    live.clear();
    for (auto& h : sort_and_extract(std::move(candidates), pool, n))
      if (!detail::is_frozen(h, max_len)) live.push_back(std::move(h));
  }
  res.hypotheses = sort_and_extract(live, pool, n);
  detail::fill_top_stats(res);
  res.stats.wall_time_ms = detail::elapsed_ms(start);
  return res;
}

/// Teacher-forced log-probability of `ids` (starting with BOS) in one pass.
template <SequenceModel M>
double score_sequence(const M& model, const TokenSequence& source, const TokenSequence& ids) {
  const auto memory = model.encode(source);
  if (ids.size() < 2) return 0.0;
  const TokenSequence input(ids.begin(), ids.end() - 1);
  const auto logits = model.decode_step(memory, pad_left(std::vector<TokenSequence>{input}));
  double total = 0.0;
  for (std::size_t j = 1; j < ids.size(); ++j)
    total += nn::log_softmax(logits.at(0, j - 1))[static_cast<std::size_t>(ids[j])];
  return total;
}

}  // namespace spdec
