#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <exception>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "spdec/decoding.hpp"
#include "spdec/drafting.hpp"

namespace spdec {

enum class Mode { kGreedy, kGreedySpec, kBeam, kSbs };

inline Mode parse_mode(const std::string& s) {
  if (s == "greedy") return Mode::kGreedy;
  if (s == "greedy-spec") return Mode::kGreedySpec;
  if (s == "beam") return Mode::kBeam;
  if (s == "sbs") return Mode::kSbs;
  throw ConfigError("unknown mode '" + s + "' (expected greedy, greedy-spec, beam or sbs)");
}

inline std::string mode_name(Mode m) {
  switch (m) {
    case Mode::kGreedy: return "greedy";
    case Mode::kGreedySpec: return "greedy-spec";
    case Mode::kBeam: return "beam";
    case Mode::kSbs: return "sbs";
  }
  return "?";
}

struct StrategyConfig {
  Mode mode = Mode::kGreedy;
  std::size_t draft_length = 10;
  std::size_t max_drafts = 25;
  bool dilated_drafts = false;
  std::size_t beam_size = 5;
  std::size_t max_len = 200;
  std::size_t max_iters = 200;

  bool speculative() const { return mode == Mode::kGreedySpec || mode == Mode::kSbs; }

  // e.g. "sbs(n=5,DL=10)"
  std::string name() const {
    std::ostringstream os;
    os << mode_name(mode);
    if (mode == Mode::kBeam) os << "(n=" << beam_size << ")";
    if (mode == Mode::kGreedySpec) os << "(DL=" << draft_length << ")";
    if (mode == Mode::kSbs) os << "(n=" << beam_size << ",DL=" << draft_length << ")";
    return os.str();
  }
};

template <SequenceModel M>
DecodeResult run_strategy(const M& model, const TokenSequence& source, const StrategyConfig& cfg) {
  switch (cfg.mode) {
    case Mode::kGreedy:
      return greedy(model, source, cfg.max_len);
    case Mode::kGreedySpec:
      return greedy_speculative(
          model, source, get_drafts(source, cfg.draft_length, cfg.max_drafts, cfg.dilated_drafts),
          cfg.max_len);
    case Mode::kBeam:
      return beam_search(model, source, cfg.beam_size, cfg.max_len);
    case Mode::kSbs:
      return speculative_beam_search(
          model, source, get_drafts(source, cfg.draft_length, cfg.max_drafts, cfg.dilated_drafts),
          cfg.beam_size, cfg.max_len, cfg.max_iters);
  }
  throw ConfigError("unhandled mode");
}

/// Runs fn(i) for i in [0, n) on `jobs` threads.
template <class Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> workers;
  std::exception_ptr error;
  std::mutex error_mu;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += jobs) fn(i);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& t : workers) t.join();
  if (error) std::rethrow_exception(error);
}

struct QueryRow {
  std::size_t query = 0;
  DecodeStats stats;       // wall time averaged over repeats
  TokenSequence best_ids;  // top-ranked output
};

struct StrategyReport {
  StrategyConfig config;
  std::vector<QueryRow> rows;  // input order
  double mean_acceptance_rate = 0.0;
  std::int64_t total_forward_passes = 0;
  double wall_ms_mean = 0.0;  // whole-corpus time per repeat
  double wall_ms_std = 0.0;   // sample standard deviation over repeats
  double speedup_forward_passes = 1.0;
  double speedup_wall = 1.0;
  std::size_t effective_batch_max = 0;
};

struct BenchReport {
  std::string baseline;
  std::size_t repeats = 1;
  std::vector<StrategyReport> strategies;
};

inline void compute_aggregates(StrategyReport& s, const std::vector<double>& wall_per_repeat) {
  double rate_sum = 0.0;
  std::size_t rate_n = 0;
  s.total_forward_passes = 0;
  s.effective_batch_max = 0;
  for (const auto& r : s.rows) {
    s.total_forward_passes += r.stats.forward_passes;
    s.effective_batch_max = std::max(s.effective_batch_max, r.stats.max_batch_rows);
    if (r.stats.generated_tokens > 0) {
      rate_sum += acceptance_rate(r.stats);
      ++rate_n;
    }
  }
  s.mean_acceptance_rate = rate_n ? rate_sum / static_cast<double>(rate_n) : 0.0;
  const auto k = static_cast<double>(wall_per_repeat.size());
  double mean = 0.0;
  for (double w : wall_per_repeat) mean += w;
  mean /= k;
  double var = 0.0;
  for (double w : wall_per_repeat) var += (w - mean) * (w - mean);
  s.wall_ms_mean = mean;
  s.wall_ms_std = wall_per_repeat.size() > 1 ? std::sqrt(var / (k - 1.0)) : 0.0;
}

/// Runs every strategy over the corpus `repeats` times. Speculative greedy
/// outputs are checked against plain greedy on every query; a mismatch
/// raises EquivalenceViolation. Speedups are baseline / strategy, so the
/// baseline itself reports exactly 1.
template <SequenceModel M>
BenchReport run_bench(const M& model, const std::vector<TokenSequence>& corpus,
                      const std::vector<StrategyConfig>& strategies, std::size_t repeats,
                      std::size_t baseline = 0, std::size_t jobs = 1) {
  if (corpus.empty()) throw ConfigError("benchmark corpus is empty");
  if (strategies.empty()) throw ConfigError("no strategies to benchmark");
  if (repeats < 1) throw ConfigError("repeats must be at least 1");
  if (baseline >= strategies.size()) throw ConfigError("baseline index out of range");

  BenchReport report;
  report.repeats = repeats;
  report.baseline = strategies[baseline].name();

  // Greedy references, one per distinct max_len used by a greedy-spec run.
  std::map<std::size_t, std::vector<TokenSequence>> greedy_ref;
  for (const auto& s : strategies) {
    if (s.mode != Mode::kGreedySpec || greedy_ref.count(s.max_len)) continue;
    auto& ref = greedy_ref[s.max_len];
    ref.resize(corpus.size());
    parallel_for(corpus.size(), jobs, [&](std::size_t i) {
      ref[i] = greedy(model, corpus[i], s.max_len).hypotheses.front().ids;
    });
  }

  for (const auto& cfg : strategies) {
    StrategyReport sr;
    sr.config = cfg;
    sr.rows.resize(corpus.size());
    std::vector<double> wall(repeats);
    std::vector<std::vector<double>> per_query_ms(corpus.size(), std::vector<double>(repeats));
    for (std::size_t rep = 0; rep < repeats; ++rep) {
      const auto start = detail::Clock::now();
      parallel_for(corpus.size(), jobs, [&](std::size_t i) {
        auto res = run_strategy(model, corpus[i], cfg);
        per_query_ms[i][rep] = res.stats.wall_time_ms;
        if (rep == 0) sr.rows[i] = {i, res.stats, res.hypotheses.front().ids};
      });
      wall[rep] = detail::elapsed_ms(start);
    }
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      double m = 0.0;
      for (double w : per_query_ms[i]) m += w;
      sr.rows[i].stats.wall_time_ms = m / static_cast<double>(repeats);
      if (cfg.mode == Mode::kGreedySpec && sr.rows[i].best_ids != greedy_ref.at(cfg.max_len)[i])
        throw EquivalenceViolation("query " + std::to_string(i) + ": " + cfg.name() +
                                   " output differs from greedy");
    }
    compute_aggregates(sr, wall);
    report.strategies.push_back(std::move(sr));
  }

  const auto& base = report.strategies[baseline];
  for (auto& s : report.strategies) {
    s.speedup_forward_passes = s.total_forward_passes > 0
                                   ? static_cast<double>(base.total_forward_passes) /
                                         static_cast<double>(s.total_forward_passes)
                                   : 1.0;
    s.speedup_wall = s.wall_ms_mean > 0.0 ? base.wall_ms_mean / s.wall_ms_mean : 1.0;
  }
  report.strategies[baseline].speedup_forward_passes = 1.0;
  report.strategies[baseline].speedup_wall = 1.0;
  return report;
}

inline nlohmann::ordered_json stats_json(const DecodeStats& s, bool with_time) {
  nlohmann::ordered_json j;
  j["forwardPasses"] = s.forward_passes;
  j["acceptedDraftTokens"] = s.accepted_draft_tokens;
  j["generatedTokens"] = s.generated_tokens;
  j["acceptanceRate"] = s.generated_tokens > 0 ? acceptance_rate(s) : 0.0;
  j["maxBatchRows"] = s.max_batch_rows;
  if (with_time) j["wallTimeMs"] = s.wall_time_ms;
  return j;
}

/// One object per (query, strategy), then one summary object.
/// `inputs[i]` labels query i.
inline void write_report_jsonl(const BenchReport& report, const std::vector<std::string>& inputs,
                               std::ostream& os) {
  for (const auto& s : report.strategies) {
    for (const auto& r : s.rows) {
      nlohmann::ordered_json j;
      j["type"] = "query";
      j["query"] = r.query;
      if (r.query < inputs.size()) j["input"] = inputs[r.query];
      j["strategy"] = s.config.name();
      j["stats"] = stats_json(r.stats, true);
      os << j.dump() << '\n';
    }
  }
  nlohmann::ordered_json summary;
  summary["type"] = "summary";
  summary["baseline"] = report.baseline;
  summary["repeats"] = report.repeats;
  auto arr = nlohmann::ordered_json::array();
  for (const auto& s : report.strategies) {
    nlohmann::ordered_json j;
    j["strategy"] = s.config.name();
    j["meanAcceptanceRate"] = s.mean_acceptance_rate;
    j["totalForwardPasses"] = s.total_forward_passes;
    j["wallTimeMsMean"] = s.wall_ms_mean;
    j["wallTimeMsStd"] = s.wall_ms_std;
    j["speedupForwardPasses"] = s.speedup_forward_passes;
    j["speedupWallTime"] = s.speedup_wall;
    j["effectiveBatchMax"] = s.effective_batch_max;
    arr.push_back(std::move(j));
  }
  summary["strategies"] = std::move(arr);
  os << summary.dump() << '\n';
}

inline void print_report_table(const BenchReport& report, std::ostream& os) {
  os << std::left << std::setw(22) << "strategy" << std::right << std::setw(12) << "fwd passes"
     << std::setw(10) << "accept" << std::setw(20) << "wall ms (mean±sd)" << std::setw(11)
     << "x passes" << std::setw(9) << "x wall" << std::setw(11) << "max rows" << '\n';
  for (const auto& s : report.strategies) {
    std::ostringstream wall;
    wall << std::fixed << std::setprecision(1) << s.wall_ms_mean << "±" << s.wall_ms_std;
    os << std::left << std::setw(22) << s.config.name() << std::right << std::setw(12)
       << s.total_forward_passes << std::setw(10) << std::fixed << std::setprecision(3)
       << s.mean_acceptance_rate << std::setw(21) << wall.str() << std::setw(11)
       << std::setprecision(2) << s.speedup_forward_passes << std::setw(9) << s.speedup_wall
       << std::setw(11) << s.effective_batch_max << '\n';
  }
  os << "baseline: " << report.baseline << ", repeats: " << report.repeats << '\n';
}

}  // namespace spdec
