#pragma once

#include <stdexcept>
#include <string>

namespace comca {

enum class ErrorCode {
  // embedding-core
  ZeroVector,
  DimMismatch,
  ContainerFormat,
  DuplicateId,
  // vocabulary / config
  InvalidVocabulary,
  EmptyVocabulary,
  InvalidConfig,
  MissingPath,
  // compatibility
  CorpusFormat,
  ShapeMismatch,
  NegativeScore,
  LlmTransport,
  LlmParse,
  MissingScore,
  // cache-builder
  UnknownPlaceholder,
  PoolExhausted,
  MissingQueryEmbedding,
  // labeling
  DegenerateStatistics,
  AlphaOutOfRange,
  NotImplemented,
  // scoring
  EmptyCache,
  NotStochastic,
  DegenerateRow,
  // eval
  NoPositives,
  Misalignment,
  AllAttributesSkipped,
  InvalidAnnotations,
  Internal,
};

/// Coarse failure class; the CLI maps it to its exit code.
enum class ErrorCategory { config = 1, data = 2, network = 3, internal = 4 };

const char* to_string(ErrorCode code) noexcept;
ErrorCategory category_of(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  ErrorCategory category() const noexcept { return category_of(code_); }

 private:
  ErrorCode code_;
};

}  // namespace comca
