#include "comca/vocabulary.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "comca/error.hpp"

namespace comca {

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

void check_name(const std::string& name, const char* what) {
  if (name.empty()) throw Error(ErrorCode::InvalidVocabulary, std::string("empty ") + what + " name");
  if (name.find('|') != std::string::npos) {
    throw Error(ErrorCode::InvalidVocabulary,
                std::string(what) + " name '" + name + "' contains the reserved '|'");
  }
}

}  // namespace

const char* to_string(PromptType t) noexcept { return t == PromptType::is ? "is" : "has"; }

const char* to_string(Bucket b) noexcept {
  switch (b) {
    case Bucket::head: return "head";
    case Bucket::medium: return "medium";
    case Bucket::tail: return "tail";
    case Bucket::unknown: return "unknown";
  }
  return "unknown";
}

PromptType parse_prompt_type(const std::string& s) {
  if (s == "is") return PromptType::is;
  if (s == "has") return PromptType::has;
  throw Error(ErrorCode::InvalidVocabulary, "prompt type must be 'is' or 'has', got '" + s + "'");
}

Bucket parse_bucket(const std::string& s) {
  if (s == "head") return Bucket::head;
  if (s == "medium") return Bucket::medium;
  if (s == "tail") return Bucket::tail;
  if (s == "unknown" || s.empty()) return Bucket::unknown;
  throw Error(ErrorCode::InvalidVocabulary, "unknown bucket '" + s + "'");
}

void Vocabulary::validate() const {
  if (attributes.empty() || objects.empty()) {
    throw Error(ErrorCode::EmptyVocabulary, "vocabulary needs at least one attribute and one object");
  }
  std::set<std::string> seen;
  for (const auto& a : attributes) {
    check_name(a.name, "attribute");
    if (!seen.insert(lower(a.name)).second) {
      throw Error(ErrorCode::InvalidVocabulary, "duplicate attribute '" + a.name + "'");
    }
  }
  seen.clear();
  for (const auto& o : objects) {
    check_name(o, "object");
    if (!seen.insert(lower(o)).second) {
      throw Error(ErrorCode::InvalidVocabulary, "duplicate object '" + o + "'");
    }
  }
}

std::vector<std::string> Vocabulary::attribute_names() const {
  std::vector<std::string> names;
  names.reserve(attributes.size());
  for (const auto& a : attributes) names.push_back(a.name);
  return names;
}

std::optional<std::size_t> Vocabulary::attribute_index(const std::string& name) const {
  for (std::size_t i = 0; i < attributes.size(); ++i)
    if (attributes[i].name == name) return i;
  return std::nullopt;
}

std::optional<std::size_t> Vocabulary::object_index(const std::string& name) const {
  for (std::size_t i = 0; i < objects.size(); ++i)
    if (objects[i] == name) return i;
  return std::nullopt;
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  Vocabulary v;
  try {
    for (const auto& a : j.at("attributes")) {
      AttributeEntry e;
      if (a.is_string()) {
        e.name = a.get<std::string>();
      } else {
        e.name = a.at("name").get<std::string>();
        if (a.contains("type")) e.prompt_type = parse_prompt_type(a["type"].get<std::string>());
        if (a.contains("synonyms")) e.synonyms = a["synonyms"].get<std::vector<std::string>>();
        if (a.contains("bucket")) e.bucket = parse_bucket(a["bucket"].get<std::string>());
      }
      v.attributes.push_back(std::move(e));
    }
    v.objects = j.at("objects").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidVocabulary, e.what());
  }
  v.validate();
  return v;
}

nlohmann::ordered_json Vocabulary::to_json() const {
  nlohmann::ordered_json j;
  j["attributes"] = nlohmann::ordered_json::array();
  for (const auto& a : attributes) {
    nlohmann::ordered_json e;
    e["name"] = a.name;
    e["type"] = to_string(a.prompt_type);
    e["synonyms"] = a.synonyms;
    e["bucket"] = to_string(a.bucket);
    j["attributes"].push_back(std::move(e));
  }
  j["objects"] = objects;
  return j;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingPath, "cannot open vocabulary " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidVocabulary, path.string() + ": " + e.what());
  }
  return from_json(j);
}

std::string query_id(const std::string& attribute, const std::string& object) {
  return attribute + "|" + object;
}

}  // namespace comca
