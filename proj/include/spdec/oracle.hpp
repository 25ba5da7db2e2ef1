#pragma once

// A training-free stand-in for a well-trained seq2seq model. The target is a
// fixed transform of the source body; while the prefix follows the target the
// next target token gets 1 - epsilon of the mass, and once the prefix has
// diverged the distribution is uniform.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "spdec/drafting.hpp"
#include "spdec/model.hpp"
#include "spdec/types.hpp"

namespace spdec {

enum class OracleTarget { kIdentity, kReverse, kEditScript, kRandomEdit };

struct OracleSpec {
  OracleTarget target = OracleTarget::kIdentity;
  // kEditScript: (position in the source body, replacement id)
  std::vector<std::pair<std::size_t, TokenId>> edits;
  // kRandomEdit: floor(edit_rate * len) positions rewritten; the positions and
  // replacements are a pure function of (seed, source).
  double edit_rate = 0.0;
  std::uint64_t seed = 0;
  double epsilon = 0.1;

  void validate() const {
    if (!(epsilon >= 0.0 && epsilon < 0.5))
      throw ConfigError("oracle epsilon must lie in [0, 0.5), got " + std::to_string(epsilon));
    if (!(edit_rate >= 0.0 && edit_rate <= 1.0))
      throw ConfigError("oracle edit rate must lie in [0, 1]");
  }
};

namespace detail {

inline std::uint64_t fnv1a(const TokenSequence& ids, std::uint64_t seed) {
  std::uint64_t h = 1469598103934665603ULL ^ seed;
  for (auto id : ids) {
    h ^= static_cast<std::uint64_t>(static_cast<std::uint32_t>(id));
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace detail

/// targetFn(source body) ++ EOS.
inline TokenSequence oracle_target(const OracleSpec& spec, const TokenSequence& source,
                                   std::size_t vocab_size) {
  TokenSequence t = strip_specials(source);
  switch (spec.target) {
    case OracleTarget::kIdentity:
      break;
    case OracleTarget::kReverse:
      std::reverse(t.begin(), t.end());
      break;
    case OracleTarget::kEditScript:
      for (const auto& [pos, id] : spec.edits)
        if (pos < t.size()) t[pos] = id;
      break;
    case OracleTarget::kRandomEdit: {
      const auto n_edits = static_cast<std::size_t>(std::floor(spec.edit_rate * t.size()));
      const std::size_t alphabet = vocab_size > kNumSpecials ? vocab_size - kNumSpecials : 0;
      if (n_edits == 0 || alphabet < 2) break;
      std::mt19937_64 rng(detail::fnv1a(t, spec.seed));
      std::vector<std::size_t> positions(t.size());
      for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i;
      for (std::size_t i = 0; i < n_edits; ++i) {
        const auto j = i + rng() % (positions.size() - i);
        std::swap(positions[i], positions[j]);
        const auto pos = positions[i];
        TokenId repl;
        do {
          repl = static_cast<TokenId>(kNumSpecials + rng() % alphabet);
        } while (repl == t[pos]);
        t[pos] = repl;
      }
      break;
    }
  }
  t.push_back(kEos);
  return t;
}

/// Next-token probabilities given a prefix that starts with BOS.
inline std::vector<double> oracle_next_distribution(const OracleSpec& spec,
                                                    const TokenSequence& target,
                                                    std::span<const TokenId> prefix,
                                                    std::size_t vocab_size) {
  const auto v = static_cast<double>(vocab_size);
  bool on_target = !prefix.empty() && prefix[0] == kBos && prefix.size() - 1 < target.size();
  for (std::size_t i = 1; on_target && i < prefix.size(); ++i)
    on_target = prefix[i] == target[i - 1];
  if (!on_target) return std::vector<double>(vocab_size, 1.0 / v);
  std::vector<double> p(vocab_size, spec.epsilon / (v - 1.0));
  p[static_cast<std::size_t>(target[prefix.size() - 1])] = 1.0 - spec.epsilon;
  return p;
}

inline std::vector<double> oracle_next_distribution(const OracleSpec& spec,
                                                    const TokenSequence& source,
                                                    const TokenSequence& prefix,
                                                    std::size_t vocab_size) {
  return oracle_next_distribution(spec, oracle_target(spec, source, vocab_size),
                                  std::span<const TokenId>(prefix), vocab_size);
}

/// Exposes the oracle through the same encode/decode_step surface as the
/// transformer; decode_step returns log-probabilities as logits.
class OracleModel {
 public:
  struct Memory {
    TokenSequence target;
  };

  OracleModel(OracleSpec spec, std::size_t vocab_size, std::size_t max_positions = 4096)
      : spec_(std::move(spec)), vocab_(vocab_size), max_positions_(max_positions) {
    spec_.validate();
    if (vocab_ <= kNumSpecials) throw ConfigError("oracle vocabulary needs non-special tokens");
    on_ = static_cast<float>(std::log(1.0 - spec_.epsilon));
    off_ = static_cast<float>(std::log(spec_.epsilon / (static_cast<double>(vocab_) - 1.0)));
    uniform_ = static_cast<float>(-std::log(static_cast<double>(vocab_)));
  }

  const OracleSpec& spec() const { return spec_; }
  std::size_t vocab_size() const { return vocab_; }
  std::size_t max_positions() const { return max_positions_; }

  Memory encode(const TokenSequence& source) const {
    for (auto id : source)
      if (id < 0 || static_cast<std::size_t>(id) >= vocab_)
        throw IdOutOfRange("source id " + std::to_string(id) + " outside oracle vocabulary");
    return {oracle_target(spec_, source, vocab_)};
  }

  LogitBatch decode_step(const Memory& memory, const PaddedBatch& batch) const {
    std::vector<const Memory*> mems(batch.rows, &memory);
    return decode_step(std::span<const Memory* const>(mems), batch);
  }

  LogitBatch decode_step(std::span<const Memory* const> memories, const PaddedBatch& batch) const {
    if (memories.size() != batch.rows) throw ConfigError("decode_step needs one memory per row");
    LogitBatch out{batch.rows, batch.width, vocab_, {}};
    out.values.assign(batch.rows * batch.width * vocab_, 0.0f);
    for (std::size_t b = 0; b < batch.rows; ++b) {
      const auto row = batch.row(b);
      const auto pad = batch.pad_counts[b];
      check_padding(row, pad);
      const auto& target = memories[b]->target;
      // Walk the row once, tracking whether the prefix still follows the target.
      bool on_target = pad < row.size() && row[pad] == kBos;
      for (std::size_t j = pad; j < row.size(); ++j) {
        const std::size_t t = j - pad;  // index into target of the next token
        if (j > pad) on_target = on_target && t - 1 < target.size() && row[j] == target[t - 1];
        auto dst = out.at(b, j);
        if (on_target && t < target.size()) {
          std::fill(dst.begin(), dst.end(), off_);
          dst[static_cast<std::size_t>(target[t])] = on_;
        } else {
          std::fill(dst.begin(), dst.end(), uniform_);
        }
      }
    }
    return out;
  }

 private:
  OracleSpec spec_;
  std::size_t vocab_;
  std::size_t max_positions_;
  float on_ = 0, off_ = 0, uniform_ = 0;
};

struct OracleConfig {
  OracleSpec spec;
  std::string vocab_path;  // resolved against the config file's directory
};

/// Parses the text config: one `key value` per line, `#` starts a comment.
///   target   identity | reverse | edit | random-edit
///   edits    pos:id[,pos:id...]      (target edit)
///   rate     fraction in [0,1]       (target random-edit)
///   seed     unsigned integer        (target random-edit)
///   epsilon  off-target mass in [0, 0.5)
///   vocab    path to a vocabulary file
inline OracleConfig parse_oracle_config(std::istream& is, const std::string& base_dir = "") {
  OracleConfig cfg;
  std::string line;
  int lineno = 0;
  auto fail = [&](const std::string& msg) {
    throw ConfigError("oracle config line " + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string key, value;
    if (!(ls >> key)) continue;
    if (!(ls >> value)) fail("missing value for '" + key + "'");
    try {
      if (key == "target") {
        if (value == "identity") cfg.spec.target = OracleTarget::kIdentity;
        else if (value == "reverse") cfg.spec.target = OracleTarget::kReverse;
        else if (value == "edit") cfg.spec.target = OracleTarget::kEditScript;
        else if (value == "random-edit") cfg.spec.target = OracleTarget::kRandomEdit;
        else fail("unknown target '" + value + "'");
      } else if (key == "edits") {
        std::istringstream es(value);
        std::string item;
        while (std::getline(es, item, ',')) {
          const auto colon = item.find(':');
          if (colon == std::string::npos) fail("edit '" + item + "' is not pos:id");
          cfg.spec.edits.emplace_back(std::stoul(item.substr(0, colon)),
                                      static_cast<TokenId>(std::stoi(item.substr(colon + 1))));
        }
      } else if (key == "rate") {
        cfg.spec.edit_rate = std::stod(value);
      } else if (key == "seed") {
        cfg.spec.seed = std::stoull(value);
      } else if (key == "epsilon") {
        cfg.spec.epsilon = std::stod(value);
      } else if (key == "vocab") {
        std::filesystem::path p(value);
        if (p.is_relative() && !base_dir.empty()) p = std::filesystem::path(base_dir) / p;
        cfg.vocab_path = p.string();
      } else {
        fail("unknown key '" + key + "'");
      }
    } catch (const std::logic_error&) {
      fail("bad value '" + value + "' for '" + key + "'");
    }
  }
  cfg.spec.validate();
  return cfg;
}

inline OracleConfig load_oracle_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open oracle config '" + path + "'");
  return parse_oracle_config(is, std::filesystem::path(path).parent_path().string());
}

}  // namespace spdec
