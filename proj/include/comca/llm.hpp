#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "comca/embedding.hpp"
#include "comca/vocabulary.hpp"

namespace comca {

/// Compatibility prompt with `{count_categories}`, `{categories}` and
/// `{attribute}` placeholders.
extern const char* const kCompatibilityPromptTemplate;

struct PromptConfig {
  std::string prompt_template = kCompatibilityPromptTemplate;
  std::size_t batch_size = 100;
  double fallback_score = 5.0;
  // When false, a pair still missing after the repair query raises MissingScore.
  bool allow_fallback = true;
};

/// Renders the prompt for one attribute and one batch of categories.
std::string render_compatibility_prompt(const std::string& prompt_template,
                                        const std::string& attribute,
                                        std::span<const std::string> categories);

struct ParsedScore {
  std::optional<std::size_t> index;  // the 1-based `x.` prefix, if present
  std::string category;
  double score = 0.0;
};

/// Parses lines shaped `x. category: score` (index optional). Lines that do
/// not match, or carry a score outside [0, 10], are dropped.
std::vector<ParsedScore> parse_score_lines(const std::string& response);

class LlmClient {
 public:
  virtual ~LlmClient() = default;
  /// Returns the assistant message text. Throws LlmTransport once retries are spent.
  virtual std::string complete(const std::string& prompt) = 0;
  virtual std::string model_id() const = 0;
};

struct LlmSettings {
  std::string endpoint = "https://api.openai.com/v1/chat/completions";
  std::string model = "gpt-3.5-turbo";
  double temperature = 0.0;
  unsigned retries = 3;
  std::chrono::milliseconds initial_backoff{500};
  std::chrono::seconds timeout{60};
  std::string api_key_env = "COMCA_LLM_API_KEY";
};

/// POSTs to a chat-completions compatible endpoint. Transport failures, 429
/// and 5xx responses are retried with exponential backoff.
class ChatCompletionsClient final : public LlmClient {
 public:
  explicit ChatCompletionsClient(LlmSettings settings);
  std::string complete(const std::string& prompt) override;
  std::string model_id() const override { return settings_.model; }

 private:
  LlmSettings settings_;
  std::string base_;  // scheme://host[:port]
  std::string path_;
  std::string api_key_;
};

/// Append-only JSON-lines store of per-pair LLM scores; later lines win.
class ScoreCache {
 public:
  ScoreCache() = default;
  explicit ScoreCache(std::filesystem::path path);

  std::optional<double> lookup(const std::string& attribute, const std::string& object,
                               const std::string& model, const std::string& prompt_hash) const;
  void store(const std::string& attribute, const std::string& object, const std::string& model,
             const std::string& prompt_hash, double score);
  std::size_t size() const { return entries_.size(); }

 private:
  using Key = std::tuple<std::string, std::string, std::string, std::string>;
  std::optional<std::filesystem::path> path_;
  std::map<Key, double> entries_;
};

struct LlmScoring {
  RowMatrixd phi_llm;
  std::size_t requests = 0;
  std::size_t cache_hits = 0;
  std::size_t fallbacks = 0;
};

/// Scores every (attribute, object) pair on the 0..10 scale. Cached pairs are
/// never re-requested; `client` may be null when the cache is complete.
LlmScoring llm_score_pairs(const Vocabulary& vocab, LlmClient* client, ScoreCache& cache,
                           const PromptConfig& cfg, const std::string& model_id);

}  // namespace comca
