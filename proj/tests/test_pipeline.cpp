#include <doctest.h>

#include "comca/diagnostics.hpp"
#include "comca/pipeline.hpp"
#include "test_util.hpp"

using namespace comca;

namespace {

const std::filesystem::path kFixture = COMCA_FIXTURE_DIR;

RunConfig fixture_config() { return RunConfig::load(kFixture / "config.json"); }

nlohmann::json golden() { return nlohmann::json::parse(test::read_file(kFixture / "golden.json")); }

}  // namespace

TEST_CASE("fixture reproduces the golden mAP") {
  const auto cfg = fixture_config();
  const auto inputs = RunInputs::load(cfg);
  const auto r = run_pipeline(cfg, inputs);
  const auto g = golden();
  CHECK(r.fused_eval->map == g["map_fused"].get<double>());
  CHECK(r.zero_shot_eval->map == g["map_zero_shot"].get<double>());
  std::vector<std::string> ids;
  for (const auto& e : r.cache.entries) ids.push_back(e.image_id);
  CHECK(ids == g["cache"].get<std::vector<std::string>>());
  for (Eigen::Index x = 0; x < r.fused.values.rows(); ++x) CHECK(std::abs(r.fused.values.row(x).sum() - 1.0) <= 1e-9);
}

TEST_CASE("prompts are aligned to vocabulary order") {
  const auto inputs = RunInputs::load(fixture_config());
  CHECK(inputs.prompts.ids() == inputs.vocab.attribute_names());
  CHECK(inputs.attr_text.ids() == inputs.vocab.attribute_names());
}

TEST_CASE("lambda = 0 reduces to the normalized zero-shot scores") {
  auto cfg = fixture_config();
  cfg.params.lambda = 0;
  const auto r = run_pipeline(cfg, RunInputs::load(cfg));
  for (Eigen::Index x = 0; x < r.fused.values.rows(); ++x)
    CHECK(r.fused.values.row(x) == eta_a(r.zero_shot.values.row(x).transpose(), NormMode::max_softmax).transpose());
  CHECK(r.fused_eval->map == golden()["map_fused_lambda0"].get<double>());
  // per-row normalization can reorder instances within a column, so only the
  // identity normalizer keeps the zero-shot mAP
  CHECK(r.fused_eval->map != r.zero_shot_eval->map);
  cfg.params.norm_mode = NormMode::none;
  const auto flat = run_pipeline(cfg, RunInputs::load(cfg));
  CHECK(flat.fused.values == flat.zero_shot.values);
  CHECK(flat.fused_eval->map == flat.zero_shot_eval->map);
}

TEST_CASE("fixed seed runs are identical") {
  for (auto strategy : {CacheStrategy::random, CacheStrategy::comca, CacheStrategy::brute_force,
                        CacheStrategy::image_based}) {
    auto cfg = fixture_config();
    cfg.strategy = strategy;
    cfg.seed = 7;
    if (strategy == CacheStrategy::brute_force || strategy == CacheStrategy::image_based) cfg.params.k = 1;
    const auto inputs = RunInputs::load(cfg);
    const auto a = run_pipeline(cfg, inputs);
    cfg.threads = 3;
    const auto b = run_pipeline(cfg, RunInputs::load(cfg));
    CHECK(a.fused_eval->to_json().dump() == b.fused_eval->to_json().dump());
    CHECK(a.fused.values == b.fused.values);
  }
}

TEST_CASE("run directory, manifest and replay") {
  test::TempDir dir;
  auto cfg = fixture_config();
  cfg.paths.run_dir = dir.path / "run";
  const auto r = run_pipeline_to_dir(cfg);
  for (const char* f : {"cache.json", "labels.emb", "labels.emb.ids.jsonl", "labels.emb.meta.json",
                        "scores_zero_shot.json", "scores_zero_shot.json.bin", "scores_cache.json",
                        "scores_fused.json", "scores_fused.json.bin", "eval_zero_shot.json", "eval_fused.json",
                        "manifest.json"})
    CHECK_MESSAGE(std::filesystem::exists(cfg.paths.run_dir / f), f);

  const auto manifest = nlohmann::json::parse(test::read_file(cfg.paths.run_dir / "manifest.json"));
  CHECK(manifest["config_hash"] == cfg.hash());
  CHECK(manifest["seed"] == cfg.seed);
  CHECK(manifest["rng"] == "splitmix64");
  CHECK(manifest["map_fused"].get<double>() == r.fused_eval->map);

  const auto replayed = replay_run(cfg.paths.run_dir / "manifest.json");
  CHECK(replayed.fused.values == r.fused.values);
  CHECK(replayed.fused_eval->map == r.fused_eval->map);

  // stored artifacts read back to the in-memory results
  const auto fused = ScoreMatrix::load(cfg.paths.run_dir / "scores_fused.json");
  CHECK(fused.values == r.fused.values);
  const auto cache = Cache::load_manifest(cfg.paths.run_dir / "cache.json", RunInputs::load(cfg).vocab,
                                          EmbeddingMatrix::load(cfg.paths.pool));
  CHECK(cache.size() == r.cache.size());

  auto tampered = manifest;
  tampered["config"]["lambda"] = 0.5;
  test::write_file(dir.path / "tampered.json", tampered.dump());
  try {
    replay_run(dir.path / "tampered.json");
    FAIL("expected a hash mismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidConfig);
  }
}

TEST_CASE("failed runs leave no partial artifacts") {
  test::TempDir dir;
  auto cfg = fixture_config();

  SUBCASE("fresh directory is removed") {
    cfg.paths.run_dir = dir.path / "fresh";
    cfg.paths.annotations = dir.path / "missing.json";
    CHECK_THROWS_AS(run_pipeline_to_dir(cfg), Error);
    CHECK(!std::filesystem::exists(cfg.paths.run_dir));
  }
  SUBCASE("existing directory keeps unrelated files") {
    cfg.paths.run_dir = dir.path / "existing";
    std::filesystem::create_directories(cfg.paths.run_dir / "eval_fused.json");  // blocks the write
    test::write_file(cfg.paths.run_dir / "notes.txt", "mine");
    CHECK_THROWS_AS(run_pipeline_to_dir(cfg), Error);
    CHECK(std::filesystem::exists(cfg.paths.run_dir / "notes.txt"));
    CHECK(!std::filesystem::exists(cfg.paths.run_dir / "cache.json"));
    CHECK(!std::filesystem::exists(cfg.paths.run_dir / "scores_fused.json"));
  }
  SUBCASE("keep_partial") {
    cfg.paths.run_dir = dir.path / "kept";
    cfg.keep_partial = true;
    std::filesystem::create_directories(cfg.paths.run_dir / "eval_fused.json");
    CHECK_THROWS_AS(run_pipeline_to_dir(cfg), Error);
    CHECK(std::filesystem::exists(cfg.paths.run_dir / "cache.json"));
  }
}

TEST_CASE("missing inputs") {
  auto cfg = fixture_config();
  cfg.paths.pool = "/nonexistent/pool.emb";
  try {
    RunInputs::load(cfg);
    FAIL("expected MissingPath");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingPath);
    CHECK(std::string(e.what()).find("/nonexistent/pool.emb") != std::string::npos);
  }
  cfg = fixture_config();
  cfg.paths.compat.clear();
  CHECK_THROWS_AS(RunInputs::load(cfg), Error);
}

TEST_CASE("baselines") {
  auto cfg = fixture_config();
  const auto inputs = RunInputs::load(cfg);
  const auto zs = run_baseline(Baseline::zero_shot, cfg, inputs);
  CHECK(zs.values == zero_shot_scores(inputs.images, inputs.prompts).values);
  CHECK(evaluate(zs, *inputs.annotations).map == golden()["map_zero_shot"].get<double>());

  const auto tip = run_baseline(Baseline::tip, cfg, inputs);
  const auto iap = run_baseline(Baseline::tip_iap, cfg, inputs);
  cfg.params.k = 3;
  const auto img = run_baseline(Baseline::image_based, cfg, inputs);
  for (const auto* s : {&tip, &iap, &img}) {
    CHECK(s->values.rows() == 4);
    CHECK(s->values.cols() == 3);
    CHECK(s->attribute_names == inputs.vocab.attribute_names());
    for (Eigen::Index x = 0; x < 4; ++x) CHECK(std::abs(s->values.row(x).sum() - 1.0) <= 1e-9);
  }
  CHECK(iap.kind == ScoreKind::iap);
  // at lambda = 0 the cache drops out and tip matches the comca run
  cfg.params.lambda = 0;
  const auto tip0 = run_baseline(Baseline::tip, cfg, inputs);
  CHECK(evaluate(tip0, *inputs.annotations).map == golden()["map_fused_lambda0"].get<double>());

  for (const char* name : {"zero-shot", "tip", "tip-iap", "image-based"}) CHECK(to_string(parse_baseline(name)) == std::string(name));
  CHECK_THROWS_AS(parse_baseline("clip"), Error);
}

TEST_CASE("estimate_compatibility") {
  RunConfig cfg;
  cfg.paths.vocab = std::filesystem::path(COMCA_TEST_DATA) / "toy_vocab.json";
  cfg.paths.corpus = std::filesystem::path(COMCA_TEST_DATA) / "toy_corpus.tsv";
  cfg.threads = 1;
  const auto one = estimate_compatibility(cfg, true, nullptr);
  CHECK(one.combine_mode == CombineMode::db_only);
  CHECK(one.phi == one.phi_db.cast<double>());
  cfg.threads = 4;
  CHECK(estimate_compatibility(cfg, true, nullptr).phi_db == one.phi_db);

  // without --db-only the score cache must cover every pair when no client is given
  CHECK_THROWS_AS(estimate_compatibility(cfg, false, nullptr), Error);

  cfg.paths.corpus = "/nonexistent/corpus.tsv";
  try {
    estimate_compatibility(cfg, true, nullptr);
    FAIL("expected MissingPath");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::data);
  }
}
