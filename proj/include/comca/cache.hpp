#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "comca/compatibility.hpp"
#include "comca/embedding.hpp"
#include "comca/vocabulary.hpp"

namespace comca {

inline constexpr const char* kRetrievalTemplate = "A photo of {noun} that is {attribute}";

/// k categorical draws from `dist` on the substream (seed ^ attribute_index).
std::vector<std::size_t> sample_objects(const AttributeDistribution& dist, std::size_t k,
                                        std::uint64_t seed, std::size_t attribute_index = 0);

/// Substitutes `{noun}` and `{attribute}`. Any other placeholder, or an
/// unbalanced brace, raises UnknownPlaceholder.
std::string build_query(const AttributeEntry& attribute, const std::string& object,
                        const std::string& retrieval_template = kRetrievalTemplate);

/// Pool id with the highest cosine to `query` among ids not in `exclude`;
/// ties go to the lexicographically smallest id.
std::string retrieve_for_query(const Eigen::Ref<const Vectord>& query, const EmbeddingMatrix& pool,
                               const std::set<std::string>& exclude = {});

enum class CacheStrategy { comca, random, brute_force, image_based };

const char* to_string(CacheStrategy s) noexcept;
CacheStrategy parse_cache_strategy(const std::string& s);

struct CacheEntry {
  std::string image_id;
  Vectord embedding;  // a copy of the pool row
  std::optional<std::size_t> source_attribute;
  std::optional<std::size_t> sampled_object;
  std::string query_text;
  // Set only for image_based caches: the test instance the entry belongs to.
  std::optional<std::string> instance_id;
};

struct Cache {
  std::vector<CacheEntry> entries;
  std::size_t shots_per_attribute = 0;
  std::uint64_t seed = 0;
  CacheStrategy strategy = CacheStrategy::comca;

  std::size_t size() const { return entries.size(); }
  bool has_hard_labels() const;
  /// |cache| x d, one row per entry.
  RowMatrixd embeddings() const;
  /// Entries belonging to one test instance (image_based caches).
  Cache for_instance(const std::string& instance_id) const;

  nlohmann::ordered_json manifest(const Vocabulary& vocab) const;
  void save_manifest(const std::filesystem::path& path, const Vocabulary& vocab) const;
  /// Rebuilds a cache from its manifest; embeddings are looked up in `pool`.
  static Cache load_manifest(const std::filesystem::path& path, const Vocabulary& vocab,
                             const EmbeddingMatrix& pool);
};

struct CacheOptions {
  std::string retrieval_template = kRetrievalTemplate;
};

/// Populates a cache. `compat` is required for the comca strategy; `queries`
/// must hold a row with id `attribute|object` for every pair the strategy can
/// emit; `test_images` is required for image_based only.
Cache build_cache(const Vocabulary& vocab, const CompatibilityTable* compat,
                  const EmbeddingMatrix* queries, const EmbeddingMatrix& pool, std::size_t k,
                  std::uint64_t seed, CacheStrategy strategy,
                  const EmbeddingMatrix* test_images = nullptr, const CacheOptions& options = {});

/// The k pool rows nearest to `image`, as unlabeled cache entries.
std::vector<CacheEntry> nearest_pool_entries(const Eigen::Ref<const Vectord>& image,
                                             const EmbeddingMatrix& pool, std::size_t k);

}  // namespace comca
