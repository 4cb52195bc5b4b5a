#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fairlens {

enum class ErrorCode {
  InvalidInput,
  ConfigError,
  IoError,
  EmptyCorpus,
  MissingAction,
  RewriteFailed,
  EndpointError,
  LogprobsUnsupported,
  EmbeddingShapeError,
  EmptyDistribution,
  NoDataForCategory,
  NotEnoughSamples,
  UndefinedCorrelation,
  InvalidDimension,
  KeyMismatch,
  NotApplicable,
  ParseFailed,
  RefusesToMixRuns,
};

std::string_view to_string(ErrorCode code);

// Every failure raised by the library carries one of the codes above so
// callers (and the CLI exit-code mapping) can branch without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }
  // what() without the leading "<code>: ".
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorCode code_;
  std::string message_;
};

class ParseFailed : public Error {
 public:
  ParseFailed(const std::string& message, std::string raw_output);

  const std::string& raw_output() const noexcept { return raw_output_; }

 private:
  std::string raw_output_;
};

}  // namespace fairlens
