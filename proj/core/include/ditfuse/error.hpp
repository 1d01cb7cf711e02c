#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ditfuse {

enum class ErrorCode {
  ShapeMismatch,
  EmptyRow,
  NotScalar,
  DetachedTensor,
  NonFinite,
  BadParam,
  UnknownSubtag,
  IndivisibleGrid,
  IndivisibleDims,
  MissingInput,
  EmptyPool,
  InvalidTagCombination,
  MissingPlaceholder,
  DuplicatePlaceholder,
  UnknownTag,
  MalformedImageWrapper,
  RankMismatch,
  SeqTooLong,
  NonFiniteState,
  NonFiniteLoss,
  IoError,
  BadMagic,
  CrcMismatch,
  VersionMismatch,
  EmptyManifest,
  ConfigError,
  LengthMismatch,
  DegenerateGT,
  EmptyVerdictList,
  BackendTimeout,
  BackendMalformedReply,
  BackendError,
};

std::string_view to_string(ErrorCode code);

// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace ditfuse
