#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "comca/cache.hpp"
#include "comca/embedding.hpp"
#include "comca/labeling.hpp"

namespace comca {

enum class ScoreKind { zero_shot, cache_tip, cache_comca, fused, iap, image_based };
enum class NormMode { none, min_max, max_softmax };
/// tip: exp(-beta (1 - z)); paper: exp(1 + beta z), the form as typeset.
enum class EtaForm { tip, paper };
/// outside: eta(s * cos) summed over the cache; inside: s * eta(cos).
enum class Eq10Form { outside, inside };

const char* to_string(ScoreKind k) noexcept;
const char* to_string(NormMode m) noexcept;
const char* to_string(EtaForm f) noexcept;
const char* to_string(Eq10Form f) noexcept;
ScoreKind parse_score_kind(const std::string& s);
NormMode parse_norm_mode(const std::string& s);
EtaForm parse_eta_form(const std::string& s);
Eq10Form parse_eq10_form(const std::string& s);

struct HyperParams {
  double lambda = 1.17;
  double beta = 1.0;
  double alpha = 0.6;
  std::size_t k = 16;
  NormMode norm_mode = NormMode::max_softmax;
  EtaForm eta_form = EtaForm::tip;
  Eq10Form eq10_form = Eq10Form::outside;

  void validate() const;
};

struct ScoreMatrix {
  std::vector<std::string> instance_ids;
  std::vector<std::string> attribute_names;
  RowMatrixd values;
  ScoreKind kind = ScoreKind::zero_shot;

  /// Writes `<path>` (JSON header) and `<path>.bin` (float64 LE, row-major).
  void save(const std::filesystem::path& path) const;
  static ScoreMatrix load(const std::filesystem::path& path);
};

/// Cache affinity weighting.
inline double eta_c(double z, double beta, EtaForm form = EtaForm::tip) {
  return form == EtaForm::tip ? std::exp(-beta * (1.0 - z)) : std::exp(1.0 + beta * z);
}

// Matrix kernels. `images` and cache rows are unit-norm, one per row.

RowMatrixd zero_shot_scores(const RowMatrixd& images, const RowMatrixd& attr_prompts);

/// Sum over entries with hard label a of eta_c(cos(x, x_c)).
RowMatrixd tip_cache_scores(const RowMatrixd& images, const Cache& cache,
                            std::size_t n_attributes, double beta, EtaForm form = EtaForm::tip);

/// Sum over all entries of eta_c(label(c, a) * cos(x, x_c)) (outside form), or
/// of label(c, a) * eta_c(cos(x, x_c)) (inside form).
RowMatrixd comca_cache_scores(const RowMatrixd& images, const RowMatrixd& cache_embeddings,
                              const RowMatrixd& labels, double beta, EtaForm form = EtaForm::tip,
                              Eq10Form eq10 = Eq10Form::outside);

/// Attribute normalization of one fused row; see NormMode.
Vectord eta_a(const Eigen::Ref<const Vectord>& z, NormMode mode);

/// eta_A(lambda * cache + clip), row by row.
RowMatrixd fuse_final(const RowMatrixd& cache_scores, const RowMatrixd& clip_scores, double lambda,
                      NormMode mode);

/// p(a | x) = sum_i p(a | y_i) p(y_i | x). Both inputs must be row-stochastic.
RowMatrixd iap_scores(const RowMatrixd& object_scores, const RowMatrixd& attr_given_object);

/// Builds a k-nearest cache for one test image, labels it softly (alpha = 1),
/// and returns its fused score row.
Vectord image_based_scores(const Eigen::Ref<const Vectord>& test_image,
                           const Eigen::Ref<const Vectord>& clip_row, const EmbeddingMatrix& pool,
                           std::size_t k, const EmbeddingMatrix& attr_text, const HyperParams& params);

// ScoreMatrix wrappers.

ScoreMatrix zero_shot_scores(const EmbeddingMatrix& images, const EmbeddingMatrix& attr_prompts);
ScoreMatrix tip_cache_scores(const EmbeddingMatrix& images, const Cache& cache,
                             const std::vector<std::string>& attribute_names, const HyperParams& params);
ScoreMatrix comca_cache_scores(const EmbeddingMatrix& images, const Cache& cache,
                               const LabelMatrix& labels,
                               const std::vector<std::string>& attribute_names,
                               const HyperParams& params);
ScoreMatrix fuse_final(const ScoreMatrix& cache_scores, const ScoreMatrix& clip_scores,
                       const HyperParams& params);
ScoreMatrix image_based_scores(const EmbeddingMatrix& images, const ScoreMatrix& clip_scores,
                               const EmbeddingMatrix& pool, const EmbeddingMatrix& attr_text,
                               const HyperParams& params);

}  // namespace comca
