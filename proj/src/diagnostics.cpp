#include "comca/diagnostics.hpp"
#include "comca/error.hpp"

#include <cstdio>
#include <iostream>
#include <mutex>

namespace comca {

namespace {

std::mutex g_mutex;
bool g_verbose = false;

WarningHandler& handler() {
  static WarningHandler h = [](const std::string& m) { std::cerr << "warning: " << m << '\n'; };
  return h;
}

}  // namespace

void warn(const std::string& message) {
  std::lock_guard lock(g_mutex);
  if (handler()) handler()(message);
}

WarningHandler set_warning_handler(WarningHandler h) {
  std::lock_guard lock(g_mutex);
  auto prev = std::move(handler());
  handler() = std::move(h);
  return prev;
}

void set_verbose(bool v) { g_verbose = v; }
bool verbose() { return g_verbose; }

void info(const std::string& message) {
  if (g_verbose) std::cerr << message << '\n';
}

WarningCapture::WarningCapture() {
  previous_ = set_warning_handler([this](const std::string& m) {
    ++count_;
    last_ = m;
  });
}

WarningCapture::~WarningCapture() { set_warning_handler(std::move(previous_)); }

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::ContainerFormat: return "ContainerFormat";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::InvalidVocabulary: return "InvalidVocabulary";
    case ErrorCode::EmptyVocabulary: return "EmptyVocabulary";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::MissingPath: return "MissingPath";
    case ErrorCode::CorpusFormat: return "CorpusFormat";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NegativeScore: return "NegativeScore";
    case ErrorCode::LlmTransport: return "LlmTransport";
    case ErrorCode::LlmParse: return "LlmParse";
    case ErrorCode::MissingScore: return "MissingScore";
    case ErrorCode::UnknownPlaceholder: return "UnknownPlaceholder";
    case ErrorCode::PoolExhausted: return "PoolExhausted";
    case ErrorCode::MissingQueryEmbedding: return "MissingQueryEmbedding";
    case ErrorCode::DegenerateStatistics: return "DegenerateStatistics";
    case ErrorCode::AlphaOutOfRange: return "AlphaOutOfRange";
    case ErrorCode::NotImplemented: return "NotImplemented";
    case ErrorCode::EmptyCache: return "EmptyCache";
    case ErrorCode::NotStochastic: return "NotStochastic";
    case ErrorCode::DegenerateRow: return "DegenerateRow";
    case ErrorCode::NoPositives: return "NoPositives";
    case ErrorCode::Misalignment: return "Misalignment";
    case ErrorCode::AllAttributesSkipped: return "AllAttributesSkipped";
    case ErrorCode::InvalidAnnotations: return "InvalidAnnotations";
    case ErrorCode::Internal: return "Internal";
  }
  return "Unknown";
}

ErrorCategory category_of(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidConfig:
    case ErrorCode::UnknownPlaceholder:
    case ErrorCode::AlphaOutOfRange:
      return ErrorCategory::config;
    case ErrorCode::LlmTransport:
      return ErrorCategory::network;
    case ErrorCode::Internal:
    case ErrorCode::NotImplemented:
      return ErrorCategory::internal;
    default:
      return ErrorCategory::data;
  }
}

}  // namespace comca
