#include "ditfuse/error.hpp"

namespace ditfuse {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::EmptyRow: return "EmptyRow";
    case ErrorCode::NotScalar: return "NotScalar";
    case ErrorCode::DetachedTensor: return "DetachedTensor";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::BadParam: return "BadParam";
    case ErrorCode::UnknownSubtag: return "UnknownSubtag";
    case ErrorCode::IndivisibleGrid: return "IndivisibleGrid";
    case ErrorCode::IndivisibleDims: return "IndivisibleDims";
    case ErrorCode::MissingInput: return "MissingInput";
    case ErrorCode::EmptyPool: return "EmptyPool";
    case ErrorCode::InvalidTagCombination: return "InvalidTagCombination";
    case ErrorCode::MissingPlaceholder: return "MissingPlaceholder";
    case ErrorCode::DuplicatePlaceholder: return "DuplicatePlaceholder";
    case ErrorCode::UnknownTag: return "UnknownTag";
    case ErrorCode::MalformedImageWrapper: return "MalformedImageWrapper";
    case ErrorCode::RankMismatch: return "RankMismatch";
    case ErrorCode::SeqTooLong: return "SeqTooLong";
    case ErrorCode::NonFiniteState: return "NonFiniteState";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::CrcMismatch: return "CrcMismatch";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::EmptyManifest: return "EmptyManifest";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::DegenerateGT: return "DegenerateGT";
    case ErrorCode::EmptyVerdictList: return "EmptyVerdictList";
    case ErrorCode::BackendTimeout: return "BackendTimeout";
    case ErrorCode::BackendMalformedReply: return "BackendMalformedReply";
    case ErrorCode::BackendError: return "BackendError";
  }
  return "Unknown";
}

}  // namespace ditfuse
