#include "comca/config.hpp"

#include <fstream>
#include <thread>

#include "comca/diagnostics.hpp"

namespace comca {

nlohmann::ordered_json to_json(const HyperParams& p) {
  nlohmann::ordered_json j;
  j["lambda"] = p.lambda;
  j["beta"] = p.beta;
  j["alpha"] = p.alpha;
  j["k"] = p.k;
  j["norm_mode"] = to_string(p.norm_mode);
  j["eta_c"] = to_string(p.eta_form);
  j["eq10_form"] = to_string(p.eq10_form);
  return j;
}

void merge_json(const nlohmann::json& j, HyperParams& p) {
  try {
    if (j.contains("lambda")) p.lambda = j["lambda"].get<double>();
    if (j.contains("beta")) p.beta = j["beta"].get<double>();
    if (j.contains("alpha")) p.alpha = j["alpha"].get<double>();
    if (j.contains("k")) p.k = j["k"].get<std::size_t>();
    if (j.contains("norm_mode")) p.norm_mode = parse_norm_mode(j["norm_mode"].get<std::string>());
    if (j.contains("eta_c")) p.eta_form = parse_eta_form(j["eta_c"].get<std::string>());
    if (j.contains("eq10_form")) p.eq10_form = parse_eq10_form(j["eq10_form"].get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, e.what());
  }
  p.validate();
}

namespace {

struct PathField {
  const char* key;
  std::filesystem::path RunPaths::*member;
};

constexpr PathField kPathFields[] = {
    {"vocab", &RunPaths::vocab},         {"corpus", &RunPaths::corpus},
    {"compat", &RunPaths::compat},       {"pool", &RunPaths::pool},
    {"queries", &RunPaths::queries},     {"images", &RunPaths::images},
    {"prompts", &RunPaths::prompts},     {"attr_text", &RunPaths::attr_text},
    {"annotations", &RunPaths::annotations}, {"score_cache", &RunPaths::score_cache},
    {"run_dir", &RunPaths::run_dir},
};

}  // namespace

nlohmann::ordered_json RunConfig::to_json() const {
  nlohmann::ordered_json j = comca::to_json(params);
  j["strategy"] = to_string(strategy);
  j["label_variant"] = to_string(label_variant);
  j["combine_mode"] = to_string(combine_mode);
  j["plurals"] = match.plurals;
  j["smoothing"] = match.smoothing == Smoothing::add_one ? "add-one" : "none";
  j["retrieval_template"] = retrieval_template;
  j["seed"] = seed;
  nlohmann::ordered_json paths_json = nlohmann::ordered_json::object();
  for (const auto& f : kPathFields) {
    if (!(paths.*f.member).empty()) paths_json[f.key] = (paths.*f.member).string();
  }
  j["paths"] = paths_json;
  nlohmann::ordered_json llm_json;
  llm_json["endpoint"] = llm.endpoint;
  llm_json["model"] = llm.model;
  llm_json["temperature"] = llm.temperature;
  llm_json["retries"] = llm.retries;
  llm_json["batch_size"] = prompt.batch_size;
  llm_json["fallback_score"] = prompt.fallback_score;
  j["llm"] = llm_json;
  return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  RunConfig c;
  merge_json(j, c.params);
  try {
    if (j.contains("strategy")) c.strategy = parse_cache_strategy(j["strategy"].get<std::string>());
    if (j.contains("label_variant")) c.label_variant = parse_label_variant(j["label_variant"].get<std::string>());
    if (j.contains("combine_mode")) c.combine_mode = parse_combine_mode(j["combine_mode"].get<std::string>());
    if (j.contains("plurals")) c.match.plurals = j["plurals"].get<bool>();
    if (j.contains("smoothing")) {
      const auto s = j["smoothing"].get<std::string>();
      if (s == "add-one" || s == "add_one") {
        c.match.smoothing = Smoothing::add_one;
      } else if (s != "none") {
        throw Error(ErrorCode::InvalidConfig, "smoothing must be 'none' or 'add-one'");
      }
    }
    if (j.contains("retrieval_template")) c.retrieval_template = j["retrieval_template"].get<std::string>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("threads")) c.threads = j["threads"].get<unsigned>();
    if (j.contains("keep_partial")) c.keep_partial = j["keep_partial"].get<bool>();
    if (j.contains("paths")) {
      const auto& pj = j["paths"];
      for (const auto& f : kPathFields) {
        if (!pj.contains(f.key)) continue;
        std::filesystem::path p = pj[f.key].get<std::string>();
        if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
        c.paths.*f.member = p.lexically_normal();
      }
    }
    if (j.contains("llm")) {
      const auto& lj = j["llm"];
      c.llm.endpoint = lj.value("endpoint", c.llm.endpoint);
      c.llm.model = lj.value("model", c.llm.model);
      c.llm.temperature = lj.value("temperature", c.llm.temperature);
      c.llm.retries = lj.value("retries", c.llm.retries);
      c.prompt.batch_size = lj.value("batch_size", c.prompt.batch_size);
      c.prompt.fallback_score = lj.value("fallback_score", c.prompt.fallback_score);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, e.what());
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::InvalidConfig, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::InvalidConfig, path.string() + ": " + e.what());
  }
  return from_json(j, std::filesystem::absolute(path).parent_path());
}

unsigned RunConfig::thread_count() const {
  if (threads > 0) return threads;
  return std::max(1u, std::thread::hardware_concurrency());
}

std::string RunConfig::hash() const { return fnv1a_hex(to_json().dump()); }

void require_paths(const std::vector<std::pair<std::string, std::filesystem::path>>& named) {
  for (const auto& [name, path] : named) {
    if (path.empty()) throw Error(ErrorCode::InvalidConfig, "missing required path '" + name + "'");
    if (!std::filesystem::exists(path)) {
      throw Error(ErrorCode::MissingPath, name + " path does not exist: " + path.string());
    }
  }
}

}  // namespace comca
