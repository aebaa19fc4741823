#include "comca/llm.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "comca/diagnostics.hpp"

namespace comca {

const char* const kCompatibilityPromptTemplate =
    "Let's play a role game. You will play the role of a researcher who is both a statistician "
    "and linguist. I will interpret a silly student who has many questions regarding language "
    "and statistics of language.\n"
    "\n"
    "In particular, I will ask you to tell me which classes, or categories if you prefer, match "
    "or bind well with the attribute I will provide you. More precisely, you will have to tell "
    "me if each class/category that I will give you matches well the given attribute. You "
    "should also tell me how well they match on a scale 0 (the class cannot have the attribute) "
    "to 10 (the class can have the attribute and it is semantically fine to associate the "
    "attribute to the class).\n"
    "\n"
    "Your response should list all the {count_categories} classes, and provide for each one of "
    "them the score on the scale explained above. The output format should be 'class: score'. "
    "No explanation at all, just plain output.\n"
    "\n"
    "Additional rules:\n"
    "- do not provide any outputs but the list of chosen categories\n"
    "- the output must be in the form of \"x. category: score\", where 'x' is the index of the "
    "category\n"
    "- the output must be in the form of a list\n"
    "- make sure you provide a score for each category. There are {count_categories} "
    "categories, so the output list must have {count_categories} elements.\n"
    "\n"
    "There are {count_categories} classes (categories).\n"
    "The list of classes, or categories, is the following:\n"
    "{categories}\n"
    "\n"
    "The attribute is: {attribute}.";

namespace {

void replace_all(std::string& s, const std::string& from, const std::string& to) {
  for (std::size_t pos = 0; (pos = s.find(from, pos)) != std::string::npos; pos += to.size()) {
    s.replace(pos, from.size(), to);
  }
}

std::string normalize_name(std::string s) {
  auto not_junk = [](unsigned char c) { return !std::isspace(c) && c != '"' && c != '\'' && c != '*'; };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_junk));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_junk).base(), s.end());
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

}  // namespace

std::string render_compatibility_prompt(const std::string& prompt_template,
                                        const std::string& attribute,
                                        std::span<const std::string> categories) {
  std::string list;
  for (std::size_t i = 0; i < categories.size(); ++i) {
    if (i) list += '\n';
    list += std::to_string(i + 1) + ". " + categories[i];
  }
  std::string out = prompt_template;
  replace_all(out, "{count_categories}", std::to_string(categories.size()));
  replace_all(out, "{attribute}", attribute);
  replace_all(out, "{categories}", list);
  return out;
}

std::vector<ParsedScore> parse_score_lines(const std::string& response) {
  static const std::regex line_re(
      R"(^\s*(?:[-*]\s*)?(?:(\d+)\s*[.)]\s*)?(.*\S)\s*:\s*([0-9]+(?:\.[0-9]+)?)\s*\.?\s*$)");
  std::vector<ParsedScore> out;
  std::istringstream in(response);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::smatch m;
    if (!std::regex_match(line, m, line_re)) continue;
    const double score = std::stod(m[3].str());
    if (score < 0.0 || score > 10.0) continue;
    ParsedScore p;
    if (m[1].matched) p.index = std::stoul(m[1].str());
    p.category = m[2].str();
    p.score = score;
    out.push_back(std::move(p));
  }
  return out;
}

ChatCompletionsClient::ChatCompletionsClient(LlmSettings settings) : settings_(std::move(settings)) {
  static const std::regex url_re(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(settings_.endpoint, m, url_re)) {
    throw Error(ErrorCode::InvalidConfig, "bad LLM endpoint '" + settings_.endpoint + "'");
  }
  base_ = m[1].str();
  path_ = m[2].matched ? m[2].str() : "/v1/chat/completions";
  if (const char* key = std::getenv(settings_.api_key_env.c_str())) api_key_ = key;
}

std::string ChatCompletionsClient::complete(const std::string& prompt) {
  nlohmann::json body = {
      {"model", settings_.model},
      {"temperature", settings_.temperature},
      {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})},
  };
  const std::string payload = body.dump();

  httplib::Client cli(base_);
  cli.set_connection_timeout(settings_.timeout);
  cli.set_read_timeout(settings_.timeout);
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

  std::string last_error;
  auto backoff = settings_.initial_backoff;
  for (unsigned attempt = 0; attempt <= settings_.retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
    auto res = cli.Post(path_, headers, payload, "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      throw Error(ErrorCode::LlmTransport,
                  "HTTP " + std::to_string(res->status) + " from " + base_ + path_ + ": " + res->body);
    }
    try {
      auto j = nlohmann::json::parse(res->body);
      return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::LlmParse, std::string("malformed chat-completions response: ") + e.what());
    }
  }
  throw Error(ErrorCode::LlmTransport, "giving up after " + std::to_string(settings_.retries + 1) +
                                           " attempts: " + last_error);
}

ScoreCache::ScoreCache(std::filesystem::path path) : path_(std::move(path)) {
  std::ifstream in(*path_);
  if (!in) return;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      entries_[Key{j.at("attribute").get<std::string>(), j.at("object").get<std::string>(),
                   j.at("model").get<std::string>(), j.at("prompt_hash").get<std::string>()}] =
          j.at("score").get<double>();
    } catch (const nlohmann::json::exception&) {
      warn("score cache " + path_->string() + ": skipping bad line " + std::to_string(lineno));
    }
  }
}

std::optional<double> ScoreCache::lookup(const std::string& attribute, const std::string& object,
                                         const std::string& model,
                                         const std::string& prompt_hash) const {
  auto it = entries_.find(Key{attribute, object, model, prompt_hash});
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void ScoreCache::store(const std::string& attribute, const std::string& object,
                       const std::string& model, const std::string& prompt_hash, double score) {
  entries_[Key{attribute, object, model, prompt_hash}] = score;
  if (!path_) return;
  std::ofstream out(*path_, std::ios::app | std::ios::binary);
  if (!out) throw Error(ErrorCode::MissingPath, "cannot append to score cache " + path_->string());
  nlohmann::ordered_json j;
  j["attribute"] = attribute;
  j["object"] = object;
  j["model"] = model;
  j["prompt_hash"] = prompt_hash;
  j["score"] = score;
  out << j.dump() << '\n';
}

namespace {

// Matches parsed lines to the requested batch by name; the numbering is ignored.
// Returns the number of lines that matched nothing.
std::size_t assign_scores(const std::vector<ParsedScore>& parsed,
                          const std::vector<std::string>& batch,
                          std::map<std::string, double>& found) {
  std::size_t unmatched = 0;
  for (const auto& p : parsed) {
    const std::string name = normalize_name(p.category);
    auto it = std::find_if(batch.begin(), batch.end(),
                           [&](const std::string& c) { return normalize_name(c) == name; });
    if (it == batch.end()) {
      ++unmatched;
      continue;
    }
    found[*it] = p.score;
  }
  return unmatched;
}

}  // namespace

LlmScoring llm_score_pairs(const Vocabulary& vocab, LlmClient* client, ScoreCache& cache,
                           const PromptConfig& cfg, const std::string& model_id) {
  vocab.validate();
  if (cfg.batch_size == 0) throw Error(ErrorCode::InvalidConfig, "LLM batch size must be positive");
  const std::string prompt_hash = fnv1a_hex(cfg.prompt_template);
  const auto n = static_cast<Eigen::Index>(vocab.attributes.size());
  const auto m = static_cast<Eigen::Index>(vocab.objects.size());

  LlmScoring out;
  out.phi_llm.resize(n, m);
  for (Eigen::Index a = 0; a < n; ++a) {
    const std::string& attribute = vocab.attributes[static_cast<std::size_t>(a)].name;
    std::vector<std::string> missing;
    for (const auto& object : vocab.objects) {
      if (cache.lookup(attribute, object, model_id, prompt_hash)) {
        ++out.cache_hits;
      } else {
        missing.push_back(object);
      }
    }
    if (!missing.empty() && client == nullptr) {
      throw Error(ErrorCode::LlmTransport, "no LLM client and the score cache lacks " +
                                               std::to_string(missing.size()) +
                                               " pair(s) for '" + attribute + "'");
    }

    std::map<std::string, double> fallback;
    for (std::size_t start = 0; start < missing.size(); start += cfg.batch_size) {
      const std::vector<std::string> batch(
          missing.begin() + static_cast<std::ptrdiff_t>(start),
          missing.begin() + static_cast<std::ptrdiff_t>(std::min(missing.size(), start + cfg.batch_size)));
      std::map<std::string, double> found;
      const auto first = parse_score_lines(
          client->complete(render_compatibility_prompt(cfg.prompt_template, attribute, batch)));
      ++out.requests;
      std::size_t unmatched = assign_scores(first, batch, found);

      std::vector<std::string> still;
      for (const auto& c : batch)
        if (!found.count(c)) still.push_back(c);
      if (!still.empty() || unmatched > 0) {
        const auto& ask = still.empty() ? batch : still;
        const auto repair = parse_score_lines(
            client->complete(render_compatibility_prompt(cfg.prompt_template, attribute, ask)));
        ++out.requests;
        // lines repeating an already scored category are harmless; match against the whole batch
        std::map<std::string, double> repaired;
        unmatched = assign_scores(repair, batch, repaired);
        for (auto& [k, v] : repaired)
          if (!found.count(k) || still.empty()) found[k] = v;
        if (unmatched > 0) {
          if (!cfg.allow_fallback) {
            throw Error(ErrorCode::LlmParse, std::to_string(unmatched) + " response line(s) for '" +
                                                 attribute + "' match no requested category");
          }
          warn("LlmParse: ignoring " + std::to_string(unmatched) + " unmatched line(s) for '" +
               attribute + "'");
        }
      }

      for (const auto& c : batch) {
        if (auto it = found.find(c); it != found.end()) {
          cache.store(attribute, c, model_id, prompt_hash, it->second);
        } else if (cfg.allow_fallback) {
          warn("MissingScore: no LLM score for ('" + attribute + "', '" + c + "'); using " +
               std::to_string(cfg.fallback_score));
          fallback[c] = cfg.fallback_score;
          ++out.fallbacks;
        } else {
          throw Error(ErrorCode::MissingScore, "no LLM score for ('" + attribute + "', '" + c + "')");
        }
      }
    }

    for (Eigen::Index o = 0; o < m; ++o) {
      const std::string& object = vocab.objects[static_cast<std::size_t>(o)];
      if (auto s = cache.lookup(attribute, object, model_id, prompt_hash)) {
        out.phi_llm(a, o) = *s;
      } else {
        out.phi_llm(a, o) = fallback.at(object);
      }
    }
  }
  return out;
}

}  // namespace comca
