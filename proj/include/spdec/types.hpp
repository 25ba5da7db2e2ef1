#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace spdec {

using TokenId = std::int32_t;

// Reserved ids shared by every vocabulary, checkpoint and decoder.
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kUnk = 3;
inline constexpr TokenId kNumSpecials = 4;

inline bool is_special(TokenId id) { return id >= 0 && id < kNumSpecials; }

// Ordered token ids. PAD only ever appears as a left-padding run and EOS, if
// present, is the final id.
using TokenSequence = std::vector<TokenId>;

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define SPDEC_DEFINE_ERROR(Name)        \
  class Name : public Error {           \
   public:                              \
    using Error::Error;                 \
  };

SPDEC_DEFINE_ERROR(UntokenizableInput)
SPDEC_DEFINE_ERROR(SequenceTooLong)
SPDEC_DEFINE_ERROR(IdOutOfRange)
SPDEC_DEFINE_ERROR(MalformedPadding)
SPDEC_DEFINE_ERROR(BadMagic)
SPDEC_DEFINE_ERROR(ShapeMismatch)
SPDEC_DEFINE_ERROR(TruncatedFile)
SPDEC_DEFINE_ERROR(EmptyGeneration)
SPDEC_DEFINE_ERROR(EquivalenceViolation)
SPDEC_DEFINE_ERROR(ConfigError)

#undef SPDEC_DEFINE_ERROR

}  // namespace spdec
