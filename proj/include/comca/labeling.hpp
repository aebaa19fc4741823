#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "comca/cache.hpp"
#include "comca/embedding.hpp"

namespace comca {

enum class LabelVariant { one_hot, raw_soft, softmax_only, standardized_softmax, blended, paws };

const char* to_string(LabelVariant v) noexcept;
LabelVariant parse_label_variant(const std::string& s);

/// Cache-wide similarity statistics. sigma is the population deviation.
struct CacheStatistics {
  double mu = 0.0;
  double sigma = 0.0;
};

struct LabelMatrix {
  RowMatrixd values;  // |cache| x |A|
  LabelVariant variant = LabelVariant::raw_soft;
  double alpha = 0.0;
  double mu = 0.0;
  double sigma = 0.0;

  /// Writes a `labels` container (ids `<row>:<image_id>`) plus a `.meta.json` sidecar.
  void save(const std::filesystem::path& path, const Cache& cache,
            const std::vector<std::string>& attribute_names) const;
  static LabelMatrix load(const std::filesystem::path& path);
};

/// Row-wise softmax with max subtraction.
template <typename Derived>
RowMatrix<typename Derived::Scalar> row_softmax(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  RowMatrix<Scalar> out = logits;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    row.array() = (row.array() - row.maxCoeff()).exp();
    row /= row.sum();
  }
  return out;
}

/// Cosine of every cache image with every attribute text embedding.
RowMatrixd raw_soft_labels(const Cache& cache, const EmbeddingMatrix& attr_text);
RowMatrixd raw_soft_labels(const RowMatrixd& cache_embeddings, const RowMatrixd& attr_text);

/// Throws DegenerateStatistics when sigma < 1e-9.
CacheStatistics cache_statistics(const RowMatrixd& raw);

/// raw_soft: unchanged; softmax_only: row softmax of raw; standardized_softmax:
/// row softmax of (raw - mu) / sigma, with the statistics taken from `raw`
/// unless supplied.
LabelMatrix normalize_soft_labels(const RowMatrixd& raw, LabelVariant variant,
                                  std::optional<CacheStatistics> stats = std::nullopt);

LabelMatrix one_hot_labels(const Cache& cache, std::size_t n_attributes);

/// (1 - alpha) * one_hot + alpha * soft.
LabelMatrix blend_labels(const RowMatrixd& one_hot, const LabelMatrix& soft, double alpha);

/// Full labeling path for a cache. `variant` selects the soft label used in the
/// blend (one_hot means hard labels only). Caches without hard labels force
/// alpha to 1 with a warning.
LabelMatrix label_cache(const Cache& cache, const EmbeddingMatrix& attr_text, double alpha,
                        LabelVariant variant = LabelVariant::standardized_softmax);

}  // namespace comca
