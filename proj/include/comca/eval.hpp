#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "comca/scoring.hpp"
#include "comca/vocabulary.hpp"

namespace comca {

struct AnnotatedAttribute {
  std::string name;
  PromptType prompt_type = PromptType::is;
  Bucket bucket = Bucket::unknown;
};

struct AnnotatedInstance {
  std::string id;
  std::vector<int> labels;  // +1 positive, -1 negative, 0 unknown
};

struct AnnotationSet {
  std::vector<AnnotatedAttribute> attributes;
  std::vector<AnnotatedInstance> instances;

  void validate() const;
  std::vector<std::string> attribute_names() const;
  static AnnotationSet from_json(const nlohmann::json& j);
  static AnnotationSet load(const std::filesystem::path& path);
};

/// Information-retrieval AP over labelled instances: unknowns (0) are dropped,
/// the rest ranked by score descending with ties broken by id ascending, and
/// the precision at each positive's rank averaged. Throws NoPositives.
double average_precision(std::span<const double> scores, std::span<const int> labels,
                         std::span<const std::string> ids);
/// Same, with instance index standing in for the id.
double average_precision(std::span<const double> scores, std::span<const int> labels);

struct AttributeResult {
  std::string name;
  Bucket bucket = Bucket::unknown;
  std::optional<double> ap;  // empty when skipped
  std::size_t num_pos = 0;
  std::size_t num_neg = 0;
  std::size_t num_unknown = 0;
};

struct EvalResult {
  double map = 0.0;
  std::map<Bucket, double> per_bucket;  // only buckets with at least one scored attribute
  std::vector<AttributeResult> per_attribute;
  std::vector<std::string> skipped_attributes;

  nlohmann::ordered_json to_json() const;
  void write_csv(const std::filesystem::path& path) const;
};

/// Aligns `scores` to the annotations by instance id and attribute order.
EvalResult evaluate(const ScoreMatrix& scores, const AnnotationSet& ann);

}  // namespace comca
