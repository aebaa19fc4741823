#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "comca/cache.hpp"
#include "comca/compatibility.hpp"
#include "comca/config.hpp"
#include "comca/embedding.hpp"
#include "comca/eval.hpp"
#include "comca/labeling.hpp"
#include "comca/llm.hpp"
#include "comca/scoring.hpp"

namespace comca {

/// Rows of `m` reordered to follow `ids`; Misalignment if any id is absent.
EmbeddingMatrix align_rows(const EmbeddingMatrix& m, const std::vector<std::string>& ids,
                           const std::string& what);

/// Corpus counts fused with LLM scores. With `db_only`, phi_llm is all ones and
/// the table is returned in db_only mode; otherwise `client` may be null only
/// when the score cache already covers every pair.
CompatibilityTable estimate_compatibility(const RunConfig& cfg, bool db_only, LlmClient* client);

/// In-memory inputs of a scoring run.
struct RunInputs {
  Vocabulary vocab;
  std::optional<CompatibilityTable> compat;
  EmbeddingMatrix pool;
  std::optional<EmbeddingMatrix> queries;
  EmbeddingMatrix images;
  EmbeddingMatrix prompts;    // aligned to vocab attribute order
  EmbeddingMatrix attr_text;  // aligned to vocab attribute order
  std::optional<AnnotationSet> annotations;

  /// Loads every file the config's strategy needs.
  static RunInputs load(const RunConfig& cfg, bool need_annotations = true);
};

struct PipelineResult {
  Cache cache;
  std::optional<LabelMatrix> labels;
  ScoreMatrix zero_shot;
  std::optional<ScoreMatrix> cache_scores;
  ScoreMatrix fused;
  std::optional<EvalResult> zero_shot_eval;
  std::optional<EvalResult> fused_eval;
};

/// build-cache -> label -> score -> fuse -> eval.
PipelineResult run_pipeline(const RunConfig& cfg, const RunInputs& inputs);

/// Runs the pipeline and writes its artifacts and a manifest under
/// `cfg.paths.run_dir`. Artifacts of a failed run are removed unless
/// `cfg.keep_partial` is set.
PipelineResult run_pipeline_to_dir(const RunConfig& cfg);

/// Re-runs a manifest's recorded config after checking its hash.
PipelineResult replay_run(const std::filesystem::path& manifest);

enum class Baseline { zero_shot, tip, tip_iap, image_based };

Baseline parse_baseline(const std::string& s);
const char* to_string(Baseline b) noexcept;

ScoreMatrix run_baseline(Baseline baseline, const RunConfig& cfg, const RunInputs& inputs);

}  // namespace comca
