#include "comca/pipeline.hpp"

#include <fstream>
#include <map>

#include "comca/diagnostics.hpp"

namespace comca {

EmbeddingMatrix align_rows(const EmbeddingMatrix& m, const std::vector<std::string>& ids,
                           const std::string& what) {
  std::vector<Eigen::Index> rows;
  rows.reserve(ids.size());
  for (const auto& id : ids) {
    const auto r = m.find(id);
    if (!r) throw Error(ErrorCode::Misalignment, what + " has no row for '" + id + "'");
    rows.push_back(*r);
  }
  return m.select(rows);
}

CompatibilityTable estimate_compatibility(const RunConfig& cfg, bool db_only, LlmClient* client) {
  require_paths({{"vocab", cfg.paths.vocab}, {"corpus", cfg.paths.corpus}});
  const Vocabulary vocab = Vocabulary::load(cfg.paths.vocab);
  auto counts = count_cooccurrences_file(cfg.paths.corpus, vocab, cfg.match, cfg.thread_count());
  info("counted " + std::to_string(counts.records) + " caption records");
  if (db_only) {
    RowMatrixd ones = RowMatrixd::Ones(counts.counts.rows(), counts.counts.cols());
    return make_compatibility_table(vocab, std::move(counts.counts), std::move(ones), CombineMode::db_only);
  }
  ScoreCache cache = cfg.paths.score_cache.empty() ? ScoreCache() : ScoreCache(cfg.paths.score_cache);
  const std::string model = client ? client->model_id() : cfg.llm.model;
  auto scored = llm_score_pairs(vocab, client, cache, cfg.prompt, model);
  info("LLM scoring: " + std::to_string(scored.requests) + " request(s), " +
       std::to_string(scored.cache_hits) + " cached pair(s)");
  return make_compatibility_table(vocab, std::move(counts.counts), std::move(scored.phi_llm),
                                  cfg.combine_mode);
}

RunInputs RunInputs::load(const RunConfig& cfg, bool need_annotations) {
  std::vector<std::pair<std::string, std::filesystem::path>> required = {
      {"vocab", cfg.paths.vocab},     {"pool", cfg.paths.pool},
      {"images", cfg.paths.images},   {"prompts", cfg.paths.prompts},
      {"attr_text", cfg.paths.attr_text}};
  const bool text_driven = cfg.strategy != CacheStrategy::image_based;
  if (text_driven) required.emplace_back("queries", cfg.paths.queries);
  if (cfg.strategy == CacheStrategy::comca) required.emplace_back("compat", cfg.paths.compat);
  if (need_annotations) required.emplace_back("annotations", cfg.paths.annotations);
  require_paths(required);

  RunInputs in;
  in.vocab = Vocabulary::load(cfg.paths.vocab);
  if (!cfg.paths.compat.empty()) in.compat = CompatibilityTable::load(cfg.paths.compat);
  in.pool = EmbeddingMatrix::load(cfg.paths.pool);
  if (text_driven) in.queries = EmbeddingMatrix::load(cfg.paths.queries);
  in.images = EmbeddingMatrix::load(cfg.paths.images);
  const auto names = in.vocab.attribute_names();
  in.prompts = align_rows(EmbeddingMatrix::load(cfg.paths.prompts), names, "prompt embeddings");
  in.attr_text = align_rows(EmbeddingMatrix::load(cfg.paths.attr_text), names, "attribute text embeddings");
  if (need_annotations) in.annotations = AnnotationSet::load(cfg.paths.annotations);

  for (const auto* m : {&in.images, &in.prompts, &in.attr_text}) {
    if (m->dim() != in.pool.dim()) throw Error(ErrorCode::DimMismatch, "embedding dims differ across inputs");
  }
  return in;
}

PipelineResult run_pipeline(const RunConfig& cfg, const RunInputs& in) {
  cfg.params.validate();
  const auto names = in.vocab.attribute_names();
  PipelineResult r;
  r.zero_shot = zero_shot_scores(in.images, in.prompts);
  r.zero_shot.attribute_names = names;

  if (cfg.strategy == CacheStrategy::image_based) {
    r.cache = build_cache(in.vocab, nullptr, nullptr, in.pool, cfg.params.k, cfg.seed,
                          CacheStrategy::image_based, &in.images);
    r.fused = image_based_scores(in.images, r.zero_shot, in.pool, in.attr_text, cfg.params);
    r.fused.kind = ScoreKind::fused;
  } else {
    r.cache = build_cache(in.vocab, in.compat ? &*in.compat : nullptr, &*in.queries, in.pool,
                          cfg.params.k, cfg.seed, cfg.strategy, nullptr,
                          CacheOptions{cfg.retrieval_template});
    r.labels = label_cache(r.cache, in.attr_text, cfg.params.alpha, cfg.label_variant);
    r.cache_scores = comca_cache_scores(in.images, r.cache, *r.labels, names, cfg.params);
    r.fused = fuse_final(*r.cache_scores, r.zero_shot, cfg.params);
  }
  if (in.annotations) {
    r.zero_shot_eval = evaluate(r.zero_shot, *in.annotations);
    r.fused_eval = evaluate(r.fused, *in.annotations);
  }
  return r;
}

namespace {

void write_json(const std::filesystem::path& path, const nlohmann::ordered_json& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::MissingPath, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace

PipelineResult run_pipeline_to_dir(const RunConfig& cfg) {
  namespace fs = std::filesystem;
  if (cfg.paths.run_dir.empty()) throw Error(ErrorCode::InvalidConfig, "missing required path 'run_dir'");
  const fs::path dir = cfg.paths.run_dir;
  const bool created = !fs::exists(dir);
  std::vector<fs::path> written;
  auto track = [&](const fs::path& p) {
    written.push_back(p);
    return p;
  };

  try {
    const RunInputs inputs = RunInputs::load(cfg);
    PipelineResult r = run_pipeline(cfg, inputs);
    fs::create_directories(dir);
    r.cache.save_manifest(track(dir / "cache.json"), inputs.vocab);
    if (r.labels) {
      const auto labels = track(dir / "labels.emb");
      track(ids_manifest_path(labels));
      track(labels.string() + ".meta.json");
      r.labels->save(labels, r.cache, inputs.vocab.attribute_names());
    }
    auto save_scores = [&](const ScoreMatrix& s, const std::string& name) {
      const auto p = track(dir / name);
      track(p.string() + ".bin");
      s.save(p);
    };
    save_scores(r.zero_shot, "scores_zero_shot.json");
    if (r.cache_scores) save_scores(*r.cache_scores, "scores_cache.json");
    save_scores(r.fused, "scores_fused.json");
    write_json(track(dir / "eval_zero_shot.json"), r.zero_shot_eval->to_json());
    write_json(track(dir / "eval_fused.json"), r.fused_eval->to_json());

    nlohmann::ordered_json manifest;
    manifest["config_hash"] = cfg.hash();
    manifest["seed"] = cfg.seed;
    manifest["rng"] = "splitmix64";
    manifest["config"] = cfg.to_json();
    manifest["map_fused"] = r.fused_eval->map;
    manifest["map_zero_shot"] = r.zero_shot_eval->map;
    write_json(track(dir / "manifest.json"), manifest);
    return r;
  } catch (...) {
    if (!cfg.keep_partial) {
      std::error_code ec;
      if (created) {
        fs::remove_all(dir, ec);
      } else {
        for (const auto& p : written) fs::remove(p, ec);
      }
    }
    throw;
  }
}

PipelineResult replay_run(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw Error(ErrorCode::MissingPath, "cannot open run manifest " + manifest_path.string());
  const auto manifest = nlohmann::json::parse(in);
  RunConfig cfg = RunConfig::from_json(manifest.at("config"));
  const std::string recorded = manifest.at("config_hash").get<std::string>();
  if (cfg.hash() != recorded) {
    throw Error(ErrorCode::InvalidConfig, "config hash mismatch: manifest records " + recorded +
                                              ", config hashes to " + cfg.hash());
  }
  return run_pipeline(cfg, RunInputs::load(cfg));
}

Baseline parse_baseline(const std::string& s) {
  if (s == "zero-shot" || s == "zero_shot") return Baseline::zero_shot;
  if (s == "tip") return Baseline::tip;
  if (s == "tip-iap" || s == "tip_iap") return Baseline::tip_iap;
  if (s == "image-based" || s == "image_based") return Baseline::image_based;
  throw Error(ErrorCode::InvalidConfig, "unknown baseline '" + s + "'");
}

const char* to_string(Baseline b) noexcept {
  switch (b) {
    case Baseline::zero_shot: return "zero-shot";
    case Baseline::tip: return "tip";
    case Baseline::tip_iap: return "tip-iap";
    case Baseline::image_based: return "image-based";
  }
  return "unknown";
}

ScoreMatrix run_baseline(Baseline baseline, const RunConfig& cfg, const RunInputs& in) {
  cfg.params.validate();
  const auto names = in.vocab.attribute_names();
  ScoreMatrix zs = zero_shot_scores(in.images, in.prompts);
  zs.attribute_names = names;

  switch (baseline) {
    case Baseline::zero_shot:
      return zs;
    case Baseline::image_based:
      return image_based_scores(in.images, zs, in.pool, in.attr_text, cfg.params);
    case Baseline::tip: {
      if (!in.queries) throw Error(ErrorCode::InvalidConfig, "the tip baseline needs query embeddings");
      const Cache cache = build_cache(in.vocab, in.compat ? &*in.compat : nullptr, &*in.queries,
                                      in.pool, cfg.params.k, cfg.seed, cfg.strategy);
      ScoreMatrix out = fuse_final(tip_cache_scores(in.images, cache, names, cfg.params), zs, cfg.params);
      out.kind = ScoreKind::cache_tip;
      return out;
    }
    case Baseline::tip_iap: {
      if (!in.queries || !in.compat) {
        throw Error(ErrorCode::InvalidConfig, "the tip-iap baseline needs query embeddings and a compatibility table");
      }
      // Object classifier: the retrieved cache relabelled by sampled object.
      Cache objects = build_cache(in.vocab, &*in.compat, &*in.queries, in.pool, cfg.params.k,
                                  cfg.seed, cfg.strategy);
      for (auto& e : objects.entries) e.source_attribute = e.sampled_object;
      const RowMatrixd object_scores =
          tip_cache_scores(in.images.data(), objects, in.vocab.objects.size(), cfg.params.beta,
                           cfg.params.eta_form);
      RowMatrixd p_object(object_scores.rows(), object_scores.cols());
      for (Eigen::Index x = 0; x < object_scores.rows(); ++x) {
        p_object.row(x) = eta_a(object_scores.row(x).transpose(), NormMode::max_softmax).transpose();
      }
      return ScoreMatrix{in.images.ids(), names, iap_scores(p_object, attribute_given_object(*in.compat)),
                         ScoreKind::iap};
    }
  }
  throw Error(ErrorCode::Internal, "unhandled baseline");
}

}  // namespace comca
