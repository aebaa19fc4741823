// comca: compositional-cache attribute scoring from precomputed embeddings.

#include <fstream>
#include <iostream>
#include <memory>
#include <numeric>
#include <set>

#include <CLI11.hpp>

#include "comca/diagnostics.hpp"
#include "comca/pipeline.hpp"

namespace {

using namespace comca;
namespace fs = std::filesystem;

void write_json(const fs::path& out, const nlohmann::ordered_json& j) {
  if (out.empty()) {
    std::cout << j.dump(2) << '\n';
    return;
  }
  std::ofstream f(out, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorCode::MissingPath, "cannot write " + out.string());
  f << j.dump(2) << '\n';
}

// Flags override config-file values, which override built-in defaults.
struct Overrides {
  std::string vocab, corpus, compat, pool, queries, images, prompts, attr_text, annotations,
      score_cache, run_dir, params;
  std::string strategy, label_variant, combine, norm_mode, eta_c, eq10_form, smoothing;
  double lambda = 0, beta = 0, alpha = 0;
  std::size_t k = 0;
  std::string llm_endpoint, llm_model;
  std::size_t batch_size = 0;
  unsigned retries = 0;
  bool keep_partial = false;
  bool no_plurals = false;
};

class Cli {
 public:
  Cli() : app_("Training-free compositional caching for open-vocabulary attribute detection") {
    app_.require_subcommand(1);
    app_.fallthrough();
    app_.add_option("--config", config_path_, "JSON run configuration");
    threads_opt_ = app_.add_option("--threads", threads_, "worker threads (default: hardware count)");
    seed_opt_ = app_.add_option("--seed", seed_, "RNG seed");
    app_.add_flag("--verbose", verbose_, "progress messages on stderr");

    auto* compat = app_.add_subcommand("compat", "estimate attribute-object compatibility");
    add_path(compat, "--vocab", o_.vocab);
    add_path(compat, "--corpus", o_.corpus, "caption TSV");
    compat->add_option("--out", out_, "compatibility table JSON")->required();
    compat->add_flag("--db-only", db_only_, "skip the LLM; phi = phi_db");
    add_string(compat, "--combine", o_.combine, "multiply|sum|llm_only|db_only|uniform");
    add_path(compat, "--score-cache", o_.score_cache, "LLM score cache (JSON lines)");
    add_string(compat, "--llm-endpoint", o_.llm_endpoint);
    add_string(compat, "--llm-model", o_.llm_model);
    opts_["--batch-size"].push_back(compat->add_option("--batch-size", o_.batch_size, "categories per LLM request"));
    opts_["--retries"].push_back(compat->add_option("--retries", o_.retries, "LLM retry count"));
    add_string(compat, "--smoothing", o_.smoothing, "none|add-one");
    compat->add_flag("--no-plurals", o_.no_plurals, "disable plural matching");
    compat->callback([this] { cmd_compat(); });

    auto* build = app_.add_subcommand("build-cache", "sample, retrieve and write a cache manifest");
    add_path(build, "--vocab", o_.vocab);
    add_path(build, "--compat", o_.compat);
    add_path(build, "--pool", o_.pool);
    add_path(build, "--queries", o_.queries);
    add_path(build, "--images", o_.images, "test images (image_based only)");
    add_hyper(build);
    add_string(build, "--strategy", o_.strategy, "comca|random|brute_force|image_based");
    build->add_option("--out", out_, "cache manifest JSON")->required();
    build->callback([this] { cmd_build_cache(); });

    auto* score = app_.add_subcommand("score", "score test images with a cache");
    add_path(score, "--images", o_.images);
    add_path(score, "--prompts", o_.prompts);
    add_path(score, "--cache", cache_manifest_, "cache manifest");
    add_path(score, "--pool", o_.pool);
    add_path(score, "--attr-text", o_.attr_text);
    add_path(score, "--vocab", o_.vocab);
    add_path(score, "--params", o_.params, "hyperparameter JSON");
    add_string(score, "--label-variant", o_.label_variant);
    add_hyper(score);
    score->add_option("--out", out_, "fused scores (JSON header + .bin)")->required();
    score->callback([this] { cmd_score(); });

    auto* eval = app_.add_subcommand("eval", "mAP of a score matrix");
    eval->add_option("--scores", scores_path_)->required();
    add_path(eval, "--annotations", o_.annotations);
    eval->add_option("--out", out_, "EvalResult JSON (default: stdout)");
    eval->add_option("--csv", csv_, "per-attribute CSV");
    eval->callback([this] { cmd_eval(); });

    auto* pipeline = app_.add_subcommand("pipeline", "cache -> labels -> scores -> fusion -> eval");
    add_run_options(pipeline);
    pipeline->add_option("--replay", replay_, "re-run a recorded manifest");
    pipeline->add_flag("--keep-partial", o_.keep_partial, "keep artifacts of a failed run");
    pipeline->callback([this] { cmd_pipeline(); });

    auto* baseline = app_.add_subcommand("baseline", "run a baseline scorer");
    baseline->add_option("name", baseline_name_, "zero-shot|tip|tip-iap|image-based")
        ->required()
        ->check(CLI::IsMember({"zero-shot", "tip", "tip-iap", "image-based"}));
    add_run_options(baseline);
    baseline->add_option("--out", out_, "scores (JSON header + .bin)");
    baseline->add_option("--eval-out", eval_out_, "EvalResult JSON (default: stdout)");
    baseline->callback([this] { cmd_baseline(); });
  }

  int run(int argc, char** argv) {
    try {
      app_.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
      const int code = app_.exit(e);
      return code == 0 ? 0 : static_cast<int>(ErrorCategory::config);
    } catch (const Error& e) {
      std::cerr << "comca: " << e.what() << '\n';
      return static_cast<int>(e.category());
    } catch (const std::exception& e) {
      std::cerr << "comca: internal error: " << e.what() << '\n';
      return static_cast<int>(ErrorCategory::internal);
    }
    return 0;
  }

 private:
  void add_path(CLI::App* app, const std::string& flag, std::string& target, const std::string& help = "") {
    opts_[flag].push_back(app->add_option(flag, target, help));
  }
  void add_string(CLI::App* app, const std::string& flag, std::string& target, const std::string& help = "") {
    opts_[flag].push_back(app->add_option(flag, target, help));
  }
  void add_hyper(CLI::App* app) {
    opts_["--lambda"].push_back(app->add_option("--lambda", o_.lambda));
    opts_["--beta"].push_back(app->add_option("--beta", o_.beta));
    opts_["--alpha"].push_back(app->add_option("--alpha", o_.alpha));
    opts_["--k"].push_back(app->add_option("--k", o_.k, "shots per attribute"));
    add_string(app, "--norm-mode", o_.norm_mode, "none|min_max|max_softmax");
    add_string(app, "--eta-c", o_.eta_c, "tip|paper");
    add_string(app, "--eq10-form", o_.eq10_form, "outside|inside");
  }
  void add_run_options(CLI::App* app) {
    for (const char* f : {"--vocab", "--compat", "--pool", "--queries", "--images", "--prompts"}) {
      std::string* target = f == std::string("--vocab")     ? &o_.vocab
                            : f == std::string("--compat")  ? &o_.compat
                            : f == std::string("--pool")    ? &o_.pool
                            : f == std::string("--queries") ? &o_.queries
                            : f == std::string("--images")  ? &o_.images
                                                            : &o_.prompts;
      add_path(app, f, *target);
    }
    add_path(app, "--attr-text", o_.attr_text);
    add_path(app, "--annotations", o_.annotations);
    add_path(app, "--run-dir", o_.run_dir);
    add_string(app, "--strategy", o_.strategy);
    add_string(app, "--label-variant", o_.label_variant);
    add_hyper(app);
  }

  bool given(const std::string& flag) const {
    auto it = opts_.find(flag);
    if (it == opts_.end()) return false;
    return std::any_of(it->second.begin(), it->second.end(), [](const CLI::Option* o) { return o->count() > 0; });
  }

  RunConfig config() const {
    RunConfig cfg = config_path_.empty() ? RunConfig{} : RunConfig::load(config_path_);
    auto set_path = [&](const char* flag, const std::string& v, fs::path& target) {
      if (given(flag)) target = v;
    };
    set_path("--vocab", o_.vocab, cfg.paths.vocab);
    set_path("--corpus", o_.corpus, cfg.paths.corpus);
    set_path("--compat", o_.compat, cfg.paths.compat);
    set_path("--pool", o_.pool, cfg.paths.pool);
    set_path("--queries", o_.queries, cfg.paths.queries);
    set_path("--images", o_.images, cfg.paths.images);
    set_path("--prompts", o_.prompts, cfg.paths.prompts);
    set_path("--attr-text", o_.attr_text, cfg.paths.attr_text);
    set_path("--annotations", o_.annotations, cfg.paths.annotations);
    set_path("--score-cache", o_.score_cache, cfg.paths.score_cache);
    set_path("--run-dir", o_.run_dir, cfg.paths.run_dir);

    if (given("--params")) {
      std::ifstream in(o_.params);
      if (!in) throw Error(ErrorCode::MissingPath, "params path does not exist: " + o_.params);
      try {
        merge_json(nlohmann::json::parse(in), cfg.params);
      } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorCode::InvalidConfig, o_.params + ": " + e.what());
      }
    }
    if (given("--lambda")) cfg.params.lambda = o_.lambda;
    if (given("--beta")) cfg.params.beta = o_.beta;
    if (given("--alpha")) cfg.params.alpha = o_.alpha;
    if (given("--k")) cfg.params.k = o_.k;
    if (given("--norm-mode")) cfg.params.norm_mode = parse_norm_mode(o_.norm_mode);
    if (given("--eta-c")) cfg.params.eta_form = parse_eta_form(o_.eta_c);
    if (given("--eq10-form")) cfg.params.eq10_form = parse_eq10_form(o_.eq10_form);
    if (given("--strategy")) cfg.strategy = parse_cache_strategy(o_.strategy);
    if (given("--label-variant")) cfg.label_variant = parse_label_variant(o_.label_variant);
    if (given("--combine")) cfg.combine_mode = parse_combine_mode(o_.combine);
    if (given("--smoothing")) {
      if (o_.smoothing == "add-one" || o_.smoothing == "add_one") {
        cfg.match.smoothing = Smoothing::add_one;
      } else if (o_.smoothing == "none") {
        cfg.match.smoothing = Smoothing::none;
      } else {
        throw Error(ErrorCode::InvalidConfig, "smoothing must be 'none' or 'add-one'");
      }
    }
    if (o_.no_plurals) cfg.match.plurals = false;
    if (given("--llm-endpoint")) cfg.llm.endpoint = o_.llm_endpoint;
    if (given("--llm-model")) cfg.llm.model = o_.llm_model;
    if (given("--batch-size")) cfg.prompt.batch_size = o_.batch_size;
    if (given("--retries")) cfg.llm.retries = o_.retries;
    if (o_.keep_partial) cfg.keep_partial = true;
    if (seed_opt_->count()) cfg.seed = seed_;
    if (threads_opt_->count()) cfg.threads = threads_;
    cfg.params.validate();
    return cfg;
  }

  void cmd_compat() {
    set_verbose(verbose_);
    const RunConfig cfg = config();
    std::unique_ptr<LlmClient> client;
    if (!db_only_) client = std::make_unique<ChatCompletionsClient>(cfg.llm);
    const CompatibilityTable table = estimate_compatibility(cfg, db_only_, client.get());
    table.save(out_);
    for (std::size_t a = 0; a < table.attributes.size(); ++a) {
      std::vector<std::size_t> order(table.objects.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      const auto row = table.phi.row(static_cast<Eigen::Index>(a));
      std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        return row(static_cast<Eigen::Index>(x)) > row(static_cast<Eigen::Index>(y));
      });
      std::cout << table.attributes[a] << ':';
      for (std::size_t i = 0; i < std::min<std::size_t>(5, order.size()); ++i) {
        std::cout << ' ' << table.objects[order[i]] << '(' << row(static_cast<Eigen::Index>(order[i])) << ')';
      }
      std::cout << '\n';
    }
  }

  void cmd_build_cache() {
    set_verbose(verbose_);
    const RunConfig cfg = config();
    std::vector<std::pair<std::string, fs::path>> required = {{"vocab", cfg.paths.vocab},
                                                               {"pool", cfg.paths.pool}};
    if (cfg.strategy == CacheStrategy::image_based) {
      required.emplace_back("images", cfg.paths.images);
    } else {
      required.emplace_back("queries", cfg.paths.queries);
    }
    if (cfg.strategy == CacheStrategy::comca) required.emplace_back("compat", cfg.paths.compat);
    require_paths(required);

    const Vocabulary vocab = Vocabulary::load(cfg.paths.vocab);
    const EmbeddingMatrix pool = EmbeddingMatrix::load(cfg.paths.pool);
    std::optional<CompatibilityTable> compat;
    if (!cfg.paths.compat.empty()) compat = CompatibilityTable::load(cfg.paths.compat);
    std::optional<EmbeddingMatrix> queries, images;
    if (cfg.strategy == CacheStrategy::image_based) {
      images = EmbeddingMatrix::load(cfg.paths.images);
    } else {
      queries = EmbeddingMatrix::load(cfg.paths.queries);
    }
    const Cache cache = build_cache(vocab, compat ? &*compat : nullptr, queries ? &*queries : nullptr,
                                    pool, cfg.params.k, cfg.seed, cfg.strategy,
                                    images ? &*images : nullptr, CacheOptions{cfg.retrieval_template});
    cache.save_manifest(out_, vocab);
    info("wrote " + std::to_string(cache.size()) + " cache entries to " + out_);
  }

  void cmd_score() {
    set_verbose(verbose_);
    const RunConfig cfg = config();
    require_paths({{"images", cfg.paths.images},
                   {"prompts", cfg.paths.prompts},
                   {"cache", cache_manifest_},
                   {"pool", cfg.paths.pool},
                   {"attr_text", cfg.paths.attr_text}});
    const EmbeddingMatrix prompts = EmbeddingMatrix::load(cfg.paths.prompts);
    Vocabulary vocab;
    if (!cfg.paths.vocab.empty()) {
      require_paths({{"vocab", cfg.paths.vocab}});
      vocab = Vocabulary::load(cfg.paths.vocab);
    } else {
      vocab = vocabulary_from_manifest(prompts.ids());
    }
    const auto names = vocab.attribute_names();
    const EmbeddingMatrix images = EmbeddingMatrix::load(cfg.paths.images);
    const EmbeddingMatrix pool = EmbeddingMatrix::load(cfg.paths.pool);
    const EmbeddingMatrix aligned_prompts = align_rows(prompts, names, "prompt embeddings");
    const EmbeddingMatrix attr_text =
        align_rows(EmbeddingMatrix::load(cfg.paths.attr_text), names, "attribute text embeddings");
    const Cache cache = Cache::load_manifest(cache_manifest_, vocab, pool);

    ScoreMatrix zs = zero_shot_scores(images, aligned_prompts);
    ScoreMatrix fused;
    if (cache.strategy == CacheStrategy::image_based) {
      fused = image_based_scores(images, zs, pool, attr_text, cfg.params);
      fused.kind = ScoreKind::fused;
    } else {
      const LabelMatrix labels = label_cache(cache, attr_text, cfg.params.alpha, cfg.label_variant);
      fused = fuse_final(comca_cache_scores(images, cache, labels, names, cfg.params), zs, cfg.params);
    }
    fused.save(out_);
  }

  // Attributes from the prompt ids, objects from the manifest entries.
  Vocabulary vocabulary_from_manifest(const std::vector<std::string>& attributes) const {
    std::ifstream in(cache_manifest_);
    const auto j = nlohmann::json::parse(in);
    Vocabulary v;
    for (const auto& a : attributes) v.attributes.push_back(AttributeEntry{a, PromptType::is, {}, Bucket::unknown});
    std::set<std::string> seen;
    for (const auto& e : j.at("entries")) {
      if (!e.at("object").is_null() && seen.insert(e["object"].get<std::string>()).second) {
        v.objects.push_back(e["object"].get<std::string>());
      }
    }
    if (v.objects.empty()) v.objects.push_back("object");
    v.validate();
    return v;
  }

  void cmd_eval() {
    const RunConfig cfg = config();
    require_paths({{"scores", scores_path_}, {"annotations", cfg.paths.annotations}});
    const EvalResult result =
        evaluate(ScoreMatrix::load(scores_path_), AnnotationSet::load(cfg.paths.annotations));
    write_json(out_, result.to_json());
    if (!csv_.empty()) result.write_csv(csv_);
  }

  void cmd_pipeline() {
    set_verbose(verbose_);
    if (!replay_.empty()) {
      const PipelineResult r = replay_run(replay_);
      write_json("", r.fused_eval->to_json());
      return;
    }
    const RunConfig cfg = config();
    const PipelineResult r = run_pipeline_to_dir(cfg);
    nlohmann::ordered_json j;
    j["fused"] = r.fused_eval->to_json();
    j["zero_shot_map"] = r.zero_shot_eval->map;
    j["run_dir"] = cfg.paths.run_dir.string();
    write_json("", j);
  }

  void cmd_baseline() {
    set_verbose(verbose_);
    const RunConfig cfg = config();
    const Baseline baseline = parse_baseline(baseline_name_);
    RunConfig load_cfg = cfg;
    if (baseline == Baseline::image_based || baseline == Baseline::zero_shot) {
      load_cfg.strategy = CacheStrategy::image_based;
    }
    const bool with_annotations = !cfg.paths.annotations.empty();
    const RunInputs inputs = RunInputs::load(load_cfg, with_annotations);
    const ScoreMatrix scores = run_baseline(baseline, cfg, inputs);
    if (!out_.empty()) scores.save(out_);
    if (inputs.annotations) write_json(eval_out_, evaluate(scores, *inputs.annotations).to_json());
  }

  CLI::App app_;
  std::map<std::string, std::vector<CLI::Option*>> opts_;
  CLI::Option* threads_opt_ = nullptr;
  CLI::Option* seed_opt_ = nullptr;
  Overrides o_;
  std::string config_path_, out_, csv_, scores_path_, cache_manifest_, replay_, baseline_name_, eval_out_;
  unsigned threads_ = 0;
  std::uint64_t seed_ = 0;
  bool verbose_ = false;
  bool db_only_ = false;
};

}  // namespace

int main(int argc, char** argv) {
  Cli cli;
  return cli.run(argc, argv);
}
