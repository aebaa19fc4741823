#include "comca/cache.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include "comca/diagnostics.hpp"
#include "comca/rng.hpp"

namespace comca {

std::vector<std::size_t> sample_objects(const AttributeDistribution& dist, std::size_t k,
                                        std::uint64_t seed, std::size_t attribute_index) {
  const auto m = static_cast<std::size_t>(dist.probs.size());
  if (m == 0) throw Error(ErrorCode::EmptyVocabulary, "cannot sample from an empty distribution");
  std::vector<double> cdf(m);
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t j = 0; j < m; ++j) {
    acc += dist.probs[static_cast<Eigen::Index>(j)];
    cdf[j] = acc;
    if (dist.probs[static_cast<Eigen::Index>(j)] > 0.0) last_positive = j;
  }

  SplitMix64 gen(substream_seed(seed, attribute_index));
  std::vector<std::size_t> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    const double u = gen.uniform();
    // The first index whose cdf exceeds u always has positive mass.
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    out.push_back(it == cdf.end() ? last_positive : static_cast<std::size_t>(it - cdf.begin()));
  }
  return out;
}

std::string build_query(const AttributeEntry& attribute, const std::string& object,
                        const std::string& retrieval_template) {
  std::string out;
  for (std::size_t i = 0; i < retrieval_template.size(); ++i) {
    const char c = retrieval_template[i];
    if (c == '}') throw Error(ErrorCode::UnknownPlaceholder, "stray '}' in '" + retrieval_template + "'");
    if (c != '{') {
      out.push_back(c);
      continue;
    }
    const auto close = retrieval_template.find('}', i);
    if (close == std::string::npos) {
      throw Error(ErrorCode::UnknownPlaceholder, "unclosed '{' in '" + retrieval_template + "'");
    }
    const std::string name = retrieval_template.substr(i + 1, close - i - 1);
    if (name == "noun") {
      out += object;
    } else if (name == "attribute") {
      out += attribute.name;
    } else {
      throw Error(ErrorCode::UnknownPlaceholder, "unknown placeholder '{" + name + "}'");
    }
    i = close;
  }
  return out;
}

namespace {

Eigen::Index best_row(const Vectord& scores, const EmbeddingMatrix& pool,
                      const std::set<std::string>& exclude) {
  Eigen::Index best = -1;
  for (Eigen::Index r = 0; r < scores.size(); ++r) {
    if (exclude.count(pool.id(r))) continue;
    if (best < 0 || scores[r] > scores[best] ||
        (scores[r] == scores[best] && pool.id(r) < pool.id(best))) {
      best = r;
    }
  }
  return best;
}

Vectord pool_scores(const Eigen::Ref<const Vectord>& query, const EmbeddingMatrix& pool) {
  if (query.size() != pool.dim()) {
    throw Error(ErrorCode::DimMismatch, "query dim " + std::to_string(query.size()) +
                                            " vs pool dim " + std::to_string(pool.dim()));
  }
  return (pool.data() * query).cwiseMax(-1.0).cwiseMin(1.0);
}

}  // namespace

std::string retrieve_for_query(const Eigen::Ref<const Vectord>& query, const EmbeddingMatrix& pool,
                               const std::set<std::string>& exclude) {
  const Eigen::Index r = best_row(pool_scores(query, pool), pool, exclude);
  if (r < 0) throw Error(ErrorCode::PoolExhausted, "every pool image is excluded");
  return pool.id(r);
}

const char* to_string(CacheStrategy s) noexcept {
  switch (s) {
    case CacheStrategy::comca: return "comca";
    case CacheStrategy::random: return "random";
    case CacheStrategy::brute_force: return "brute_force";
    case CacheStrategy::image_based: return "image_based";
  }
  return "unknown";
}

CacheStrategy parse_cache_strategy(const std::string& s) {
  for (auto v : {CacheStrategy::comca, CacheStrategy::random, CacheStrategy::brute_force,
                 CacheStrategy::image_based}) {
    if (s == to_string(v)) return v;
  }
  if (s == "brute-force") return CacheStrategy::brute_force;
  if (s == "image-based") return CacheStrategy::image_based;
  throw Error(ErrorCode::InvalidConfig, "unknown cache strategy '" + s + "'");
}

bool Cache::has_hard_labels() const {
  return !entries.empty() && std::all_of(entries.begin(), entries.end(), [](const CacheEntry& e) {
    return e.source_attribute.has_value();
  });
}

RowMatrixd Cache::embeddings() const {
  if (entries.empty()) return {};
  RowMatrixd out(static_cast<Eigen::Index>(entries.size()), entries.front().embedding.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = entries[i].embedding.transpose();
  }
  return out;
}

Cache Cache::for_instance(const std::string& instance_id) const {
  Cache out{{}, shots_per_attribute, seed, strategy};
  for (const auto& e : entries)
    if (e.instance_id == instance_id) out.entries.push_back(e);
  return out;
}

nlohmann::ordered_json Cache::manifest(const Vocabulary& vocab) const {
  nlohmann::ordered_json j;
  j["k"] = shots_per_attribute;
  j["seed"] = seed;
  j["strategy"] = to_string(strategy);
  j["entries"] = nlohmann::ordered_json::array();
  for (const auto& e : entries) {
    nlohmann::ordered_json je;
    je["image_id"] = e.image_id;
    je["attribute"] = e.source_attribute ? nlohmann::ordered_json(vocab.attributes.at(*e.source_attribute).name)
                                         : nlohmann::ordered_json(nullptr);
    je["object"] = e.sampled_object ? nlohmann::ordered_json(vocab.objects.at(*e.sampled_object))
                                    : nlohmann::ordered_json(nullptr);
    je["query"] = e.query_text;
    if (e.instance_id) je["instance"] = *e.instance_id;
    j["entries"].push_back(std::move(je));
  }
  return j;
}

void Cache::save_manifest(const std::filesystem::path& path, const Vocabulary& vocab) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::MissingPath, "cannot write " + path.string());
  out << manifest(vocab).dump(2) << '\n';
}

Cache Cache::load_manifest(const std::filesystem::path& path, const Vocabulary& vocab,
                           const EmbeddingMatrix& pool) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingPath, "cannot open cache manifest " + path.string());
  Cache cache;
  try {
    const auto j = nlohmann::json::parse(in);
    cache.shots_per_attribute = j.at("k").get<std::size_t>();
    cache.seed = j.at("seed").get<std::uint64_t>();
    cache.strategy = parse_cache_strategy(j.at("strategy").get<std::string>());
    for (const auto& je : j.at("entries")) {
      CacheEntry e;
      e.image_id = je.at("image_id").get<std::string>();
      const auto row = pool.find(e.image_id);
      if (!row) {
        throw Error(ErrorCode::Misalignment, "cache image '" + e.image_id + "' is not in the pool");
      }
      e.embedding = pool.row(*row).transpose();
      if (!je.at("attribute").is_null()) {
        const auto name = je["attribute"].get<std::string>();
        e.source_attribute = vocab.attribute_index(name);
        if (!e.source_attribute) throw Error(ErrorCode::Misalignment, "unknown attribute '" + name + "'");
      }
      if (!je.at("object").is_null()) {
        const auto name = je["object"].get<std::string>();
        e.sampled_object = vocab.object_index(name);
        if (!e.sampled_object) throw Error(ErrorCode::Misalignment, "unknown object '" + name + "'");
      }
      e.query_text = je.value("query", "");
      if (je.contains("instance")) e.instance_id = je["instance"].get<std::string>();
      cache.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ContainerFormat, path.string() + ": " + e.what());
  }
  return cache;
}

std::vector<CacheEntry> nearest_pool_entries(const Eigen::Ref<const Vectord>& image,
                                             const EmbeddingMatrix& pool, std::size_t k) {
  if (k > static_cast<std::size_t>(pool.rows())) {
    throw Error(ErrorCode::PoolExhausted, "requested " + std::to_string(k) + " neighbours from a pool of " +
                                              std::to_string(pool.rows()));
  }
  const Vectord scores = pool_scores(image, pool);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(pool.rows()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](Eigen::Index a, Eigen::Index b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return pool.id(a) < pool.id(b);
                    });
  std::vector<CacheEntry> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    CacheEntry e;
    e.image_id = pool.id(order[i]);
    e.embedding = pool.row(order[i]).transpose();
    out.push_back(std::move(e));
  }
  return out;
}

namespace {

void check_alignment(const Vocabulary& vocab, const CompatibilityTable& compat) {
  if (compat.attributes != vocab.attribute_names() || compat.objects != vocab.objects) {
    throw Error(ErrorCode::Misalignment, "compatibility table does not match the vocabulary order");
  }
}

}  // namespace

Cache build_cache(const Vocabulary& vocab, const CompatibilityTable* compat,
                  const EmbeddingMatrix* queries, const EmbeddingMatrix& pool, std::size_t k,
                  std::uint64_t seed, CacheStrategy strategy, const EmbeddingMatrix* test_images,
                  const CacheOptions& options) {
  vocab.validate();
  if (k == 0) throw Error(ErrorCode::InvalidConfig, "shots per attribute must be positive");
  if (pool.empty()) throw Error(ErrorCode::PoolExhausted, "retrieval pool is empty");
  Cache cache{{}, k, seed, strategy};

  if (strategy == CacheStrategy::image_based) {
    if (!test_images) throw Error(ErrorCode::InvalidConfig, "image_based caches need the test images");
    for (Eigen::Index x = 0; x < test_images->rows(); ++x) {
      for (auto& e : nearest_pool_entries(test_images->row(x).transpose(), pool, k)) {
        e.instance_id = test_images->id(x);
        cache.entries.push_back(std::move(e));
      }
    }
    return cache;
  }

  if (!queries) throw Error(ErrorCode::InvalidConfig, "text-driven caches need query embeddings");
  if (queries->dim() != pool.dim()) throw Error(ErrorCode::DimMismatch, "query and pool dims differ");
  if (strategy == CacheStrategy::comca) {
    if (!compat) throw Error(ErrorCode::InvalidConfig, "the comca strategy needs a compatibility table");
    check_alignment(vocab, *compat);
  }

  const std::size_t m = vocab.objects.size();
  for (std::size_t a = 0; a < vocab.attributes.size(); ++a) {
    const AttributeEntry& attr = vocab.attributes[a];
    std::vector<std::size_t> objects;
    switch (strategy) {
      case CacheStrategy::comca:
        objects = sample_objects(
            normalize_distribution(compat->phi.row(static_cast<Eigen::Index>(a)).transpose(), attr.name),
            k, seed, a);
        break;
      case CacheStrategy::random: {
        AttributeDistribution uniform{attr.name, Vectord::Constant(static_cast<Eigen::Index>(m), 1.0 / static_cast<double>(m))};
        objects = sample_objects(uniform, k, seed, a);
        break;
      }
      case CacheStrategy::brute_force:
        for (std::size_t o = 0; o < m; ++o) objects.insert(objects.end(), k, o);
        break;
      case CacheStrategy::image_based:
        break;
    }

    std::set<std::string> used;
    for (std::size_t o : objects) {
      const std::string& object = vocab.objects[o];
      const auto qrow = queries->find(query_id(attr.name, object));
      if (!qrow) {
        throw Error(ErrorCode::MissingQueryEmbedding,
                    "no query embedding for '" + query_id(attr.name, object) + "'");
      }
      const Eigen::Index r = best_row(pool_scores(queries->row(*qrow).transpose(), pool), pool, used);
      if (r < 0) {
        throw Error(ErrorCode::PoolExhausted, "pool exhausted while filling '" + attr.name + "'");
      }
      used.insert(pool.id(r));
      CacheEntry e;
      e.image_id = pool.id(r);
      e.embedding = pool.row(r).transpose();
      e.source_attribute = a;
      e.sampled_object = o;
      e.query_text = build_query(attr, object, options.retrieval_template);
      cache.entries.push_back(std::move(e));
    }
  }
  return cache;
}

}  // namespace comca
