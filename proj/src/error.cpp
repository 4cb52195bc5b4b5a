#include "fairlens/error.hpp"

namespace fairlens {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidInput: return "InvalidInput";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::EmptyCorpus: return "EmptyCorpus";
    case ErrorCode::MissingAction: return "MissingAction";
    case ErrorCode::RewriteFailed: return "RewriteFailed";
    case ErrorCode::EndpointError: return "EndpointError";
    case ErrorCode::LogprobsUnsupported: return "LogprobsUnsupported";
    case ErrorCode::EmbeddingShapeError: return "EmbeddingShapeError";
    case ErrorCode::EmptyDistribution: return "EmptyDistribution";
    case ErrorCode::NoDataForCategory: return "NoDataForCategory";
    case ErrorCode::NotEnoughSamples: return "NotEnoughSamples";
    case ErrorCode::UndefinedCorrelation: return "UndefinedCorrelation";
    case ErrorCode::InvalidDimension: return "InvalidDimension";
    case ErrorCode::KeyMismatch: return "KeyMismatch";
    case ErrorCode::NotApplicable: return "NotApplicable";
    case ErrorCode::ParseFailed: return "ParseFailed";
    case ErrorCode::RefusesToMixRuns: return "RefusesToMixRuns";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code), message_(message) {}

ParseFailed::ParseFailed(const std::string& message, std::string raw_output)
    : Error(ErrorCode::ParseFailed, message), raw_output_(std::move(raw_output)) {}

}  // namespace fairlens
