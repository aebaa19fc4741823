#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "comca/cache.hpp"
#include "comca/compatibility.hpp"
#include "comca/labeling.hpp"
#include "comca/llm.hpp"
#include "comca/scoring.hpp"

namespace comca {

nlohmann::ordered_json to_json(const HyperParams& p);
/// Fields absent from `j` keep their current value in `p`.
void merge_json(const nlohmann::json& j, HyperParams& p);

struct RunPaths {
  std::filesystem::path vocab;
  std::filesystem::path corpus;
  std::filesystem::path compat;
  std::filesystem::path pool;
  std::filesystem::path queries;
  std::filesystem::path images;
  std::filesystem::path prompts;
  std::filesystem::path attr_text;
  std::filesystem::path annotations;
  std::filesystem::path score_cache;
  std::filesystem::path run_dir;
};

struct RunConfig {
  RunPaths paths;
  HyperParams params;
  CacheStrategy strategy = CacheStrategy::comca;
  LabelVariant label_variant = LabelVariant::standardized_softmax;
  CombineMode combine_mode = CombineMode::multiply;
  MatchConfig match;
  LlmSettings llm;
  PromptConfig prompt;
  std::string retrieval_template = kRetrievalTemplate;
  std::uint64_t seed = 0;
  unsigned threads = 0;  // 0: hardware concurrency
  bool keep_partial = false;

  nlohmann::ordered_json to_json() const;
  /// Relative paths resolve against `base_dir`.
  static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  static RunConfig load(const std::filesystem::path& path);

  unsigned thread_count() const;
  /// Stable fingerprint of to_json().
  std::string hash() const;
};

/// Throws MissingPath naming the first listed path that is unset or absent.
void require_paths(const std::vector<std::pair<std::string, std::filesystem::path>>& named);

}  // namespace comca
