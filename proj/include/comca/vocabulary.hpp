#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace comca {

enum class PromptType { is, has };
enum class Bucket { head, medium, tail, unknown };

const char* to_string(PromptType t) noexcept;
const char* to_string(Bucket b) noexcept;
PromptType parse_prompt_type(const std::string& s);
Bucket parse_bucket(const std::string& s);

struct AttributeEntry {
  std::string name;
  PromptType prompt_type = PromptType::is;
  std::vector<std::string> synonyms;
  Bucket bucket = Bucket::unknown;
};

/// Target attributes A and objects O. Names are unique after lowercasing and
/// may not contain '|', which separates the two halves of a query id.
struct Vocabulary {
  std::vector<AttributeEntry> attributes;
  std::vector<std::string> objects;

  /// Throws InvalidVocabulary / EmptyVocabulary.
  void validate() const;

  std::vector<std::string> attribute_names() const;
  std::optional<std::size_t> attribute_index(const std::string& name) const;
  std::optional<std::size_t> object_index(const std::string& name) const;

  static Vocabulary from_json(const nlohmann::json& j);
  nlohmann::ordered_json to_json() const;
  static Vocabulary load(const std::filesystem::path& path);
};

/// Id of the precomputed retrieval-query embedding for (attribute, object).
std::string query_id(const std::string& attribute, const std::string& object);

}  // namespace comca
