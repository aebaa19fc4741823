#include "comca/eval.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <set>
#include <unordered_map>

namespace comca {

void AnnotationSet::validate() const {
  if (attributes.empty()) throw Error(ErrorCode::InvalidAnnotations, "no attributes");
  std::set<std::string> ids;
  for (const auto& inst : instances) {
    if (!ids.insert(inst.id).second) {
      throw Error(ErrorCode::InvalidAnnotations, "duplicate instance id '" + inst.id + "'");
    }
    if (inst.labels.size() != attributes.size()) {
      throw Error(ErrorCode::InvalidAnnotations, "instance '" + inst.id + "' has " +
                                                     std::to_string(inst.labels.size()) + " labels for " +
                                                     std::to_string(attributes.size()) + " attributes");
    }
    for (int l : inst.labels) {
      if (l != 1 && l != -1 && l != 0) {
        throw Error(ErrorCode::InvalidAnnotations, "label values must be +1, -1 or 0");
      }
    }
  }
}

std::vector<std::string> AnnotationSet::attribute_names() const {
  std::vector<std::string> out;
  for (const auto& a : attributes) out.push_back(a.name);
  return out;
}

AnnotationSet AnnotationSet::from_json(const nlohmann::json& j) {
  AnnotationSet ann;
  try {
    for (const auto& a : j.at("attributes")) {
      AnnotatedAttribute attr;
      attr.name = a.at("name").get<std::string>();
      if (a.contains("type")) attr.prompt_type = parse_prompt_type(a["type"].get<std::string>());
      if (a.contains("bucket")) attr.bucket = parse_bucket(a["bucket"].get<std::string>());
      ann.attributes.push_back(std::move(attr));
    }
    for (const auto& i : j.at("instances")) {
      ann.instances.push_back({i.at("id").get<std::string>(), i.at("labels").get<std::vector<int>>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidAnnotations, e.what());
  }
  ann.validate();
  return ann;
}

AnnotationSet AnnotationSet::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingPath, "cannot open annotations " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::InvalidAnnotations, path.string() + ": " + e.what());
  }
}

double average_precision(std::span<const double> scores, std::span<const int> labels,
                         std::span<const std::string> ids) {
  if (scores.size() != labels.size() || scores.size() != ids.size()) {
    throw Error(ErrorCode::ShapeMismatch, "scores, labels and ids differ in length");
  }
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] != 0) order.push_back(i);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids[a] < ids[b];
  });
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (labels[order[rank]] > 0) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
    }
  }
  if (hits == 0) throw Error(ErrorCode::NoPositives, "no positive instances after masking");
  return sum / static_cast<double>(hits);
}

double average_precision(std::span<const double> scores, std::span<const int> labels) {
  // Zero-padded indices keep lexicographic order equal to numeric order.
  std::vector<std::string> ids(scores.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::ostringstream ss;
    ss << std::setw(20) << std::setfill('0') << i;
    ids[i] = ss.str();
  }
  return average_precision(scores, labels, ids);
}

EvalResult evaluate(const ScoreMatrix& scores, const AnnotationSet& ann) {
  ann.validate();
  if (scores.attribute_names != ann.attribute_names()) {
    throw Error(ErrorCode::Misalignment, "score attributes do not match the annotation attributes");
  }
  std::unordered_map<std::string, Eigen::Index> row_of;
  for (std::size_t i = 0; i < scores.instance_ids.size(); ++i) {
    row_of.emplace(scores.instance_ids[i], static_cast<Eigen::Index>(i));
  }
  std::vector<Eigen::Index> rows;
  std::vector<std::string> ids;
  for (const auto& inst : ann.instances) {
    auto it = row_of.find(inst.id);
    if (it == row_of.end()) {
      throw Error(ErrorCode::Misalignment, "no scores for annotated instance '" + inst.id + "'");
    }
    rows.push_back(it->second);
    ids.push_back(inst.id);
  }

  EvalResult result;
  std::map<Bucket, std::vector<double>> by_bucket;
  std::vector<double> aps;
  std::vector<double> col(rows.size());
  std::vector<int> lab(rows.size());
  for (std::size_t a = 0; a < ann.attributes.size(); ++a) {
    AttributeResult r{ann.attributes[a].name, ann.attributes[a].bucket, std::nullopt, 0, 0, 0};
    for (std::size_t i = 0; i < rows.size(); ++i) {
      col[i] = scores.values(rows[i], static_cast<Eigen::Index>(a));
      lab[i] = ann.instances[i].labels[a];
      (lab[i] > 0 ? r.num_pos : lab[i] < 0 ? r.num_neg : r.num_unknown) += 1;
    }
    if (r.num_pos == 0) {
      result.skipped_attributes.push_back(r.name);
    } else {
      r.ap = average_precision(col, lab, ids);
      aps.push_back(*r.ap);
      by_bucket[r.bucket].push_back(*r.ap);
    }
    result.per_attribute.push_back(std::move(r));
  }
  if (aps.empty()) throw Error(ErrorCode::AllAttributesSkipped, "no attribute has a positive instance");

  auto mean = [](const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  result.map = mean(aps);
  for (const auto& [bucket, v] : by_bucket) {
    if (bucket != Bucket::unknown) result.per_bucket[bucket] = mean(v);
  }
  return result;
}

nlohmann::ordered_json EvalResult::to_json() const {
  nlohmann::ordered_json j;
  j["map"] = map;
  j["per_bucket"] = nlohmann::ordered_json::object();
  for (const auto& [bucket, v] : per_bucket) j["per_bucket"][to_string(bucket)] = v;
  j["per_attribute"] = nlohmann::ordered_json::array();
  for (const auto& r : per_attribute) {
    nlohmann::ordered_json e;
    e["name"] = r.name;
    e["bucket"] = to_string(r.bucket);
    e["ap"] = r.ap ? nlohmann::ordered_json(*r.ap) : nlohmann::ordered_json(nullptr);
    e["num_pos"] = r.num_pos;
    e["num_neg"] = r.num_neg;
    e["num_unknown"] = r.num_unknown;
    j["per_attribute"].push_back(std::move(e));
  }
  j["skipped_attributes"] = skipped_attributes;
  return j;
}

void EvalResult::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::MissingPath, "cannot write " + path.string());
  out << "name,bucket,ap,num_pos,num_neg,num_unknown\n";
  out << std::setprecision(17);
  for (const auto& r : per_attribute) {
    out << '"' << r.name << "\"," << to_string(r.bucket) << ',';
    if (r.ap) out << *r.ap;
    out << ',' << r.num_pos << ',' << r.num_neg << ',' << r.num_unknown << '\n';
  }
}

}  // namespace comca
