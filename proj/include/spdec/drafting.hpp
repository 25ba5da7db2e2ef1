#pragma once

#include <algorithm>
#include <set>
#include <vector>

#include "spdec/types.hpp"

namespace spdec {

struct DraftSet {
  std::vector<TokenSequence> drafts;
  std::size_t max_drafts = 25;

  std::size_t size() const { return drafts.size(); }
  // Length of the longest draft (all drafts share one length when built by
  // get_drafts).
  std::size_t draft_length() const {
    std::size_t n = 0;
    for (const auto& d : drafts) n = std::max(n, d.size());
    return n;
  }
};

/// The source with BOS, EOS and PAD removed.
inline TokenSequence strip_specials(const TokenSequence& source) {
  TokenSequence body;
  for (auto id : source)
    if (id != kBos && id != kEos && id != kPad) body.push_back(id);
  return body;
}

/// Sliding windows of `draft_length` tokens, stride one, over the stripped
/// source, left to right, first occurrence kept, capped at `max_drafts`.
/// With `dilated`, windows that take every second token are appended after
/// the contiguous ones. Zero length, or a source shorter than the window,
/// gives the single empty draft.
inline DraftSet get_drafts(const TokenSequence& source, std::size_t draft_length,
                           std::size_t max_drafts, bool dilated = false) {
  if (max_drafts < 1) throw ConfigError("max_drafts must be at least 1");
  DraftSet set;
  set.max_drafts = max_drafts;
  const auto body = strip_specials(source);
  if (draft_length == 0 || body.size() < draft_length) {
    set.drafts.emplace_back();
    return set;
  }
  std::set<TokenSequence> seen;
  auto push = [&](TokenSequence w) {
    if (set.drafts.size() < max_drafts && seen.insert(w).second) set.drafts.push_back(std::move(w));
  };
  for (std::size_t i = 0; i + draft_length <= body.size(); ++i)
    push(TokenSequence(body.begin() + static_cast<std::ptrdiff_t>(i),
                       body.begin() + static_cast<std::ptrdiff_t>(i + draft_length)));
  if (dilated) {
    const std::size_t span = 2 * draft_length - 1;
    for (std::size_t i = 0; i + span <= body.size(); ++i) {
      TokenSequence w;
      for (std::size_t k = 0; k < draft_length; ++k) w.push_back(body[i + 2 * k]);
      push(std::move(w));
    }
  }
  return set;
}

}  // namespace spdec
