#include "comca/scoring.hpp"

#include <bit>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "comca/diagnostics.hpp"

namespace comca {

const char* to_string(ScoreKind k) noexcept {
  switch (k) {
    case ScoreKind::zero_shot: return "zero_shot";
    case ScoreKind::cache_tip: return "cache_tip";
    case ScoreKind::cache_comca: return "cache_comca";
    case ScoreKind::fused: return "fused";
    case ScoreKind::iap: return "iap";
    case ScoreKind::image_based: return "image_based";
  }
  return "unknown";
}

const char* to_string(NormMode m) noexcept {
  switch (m) {
    case NormMode::none: return "none";
    case NormMode::min_max: return "min_max";
    case NormMode::max_softmax: return "max_softmax";
  }
  return "unknown";
}

const char* to_string(EtaForm f) noexcept { return f == EtaForm::tip ? "tip" : "paper"; }
const char* to_string(Eq10Form f) noexcept { return f == Eq10Form::outside ? "outside" : "inside"; }

ScoreKind parse_score_kind(const std::string& s) {
  for (auto k : {ScoreKind::zero_shot, ScoreKind::cache_tip, ScoreKind::cache_comca,
                 ScoreKind::fused, ScoreKind::iap, ScoreKind::image_based}) {
    if (s == to_string(k)) return k;
  }
  throw Error(ErrorCode::InvalidConfig, "unknown score kind '" + s + "'");
}

NormMode parse_norm_mode(const std::string& s) {
  if (s == "none") return NormMode::none;
  if (s == "min_max" || s == "min-max") return NormMode::min_max;
  if (s == "max_softmax" || s == "max-softmax") return NormMode::max_softmax;
  throw Error(ErrorCode::InvalidConfig, "unknown norm mode '" + s + "'");
}

EtaForm parse_eta_form(const std::string& s) {
  if (s == "tip") return EtaForm::tip;
  if (s == "paper") return EtaForm::paper;
  throw Error(ErrorCode::InvalidConfig, "eta-c must be 'tip' or 'paper', got '" + s + "'");
}

Eq10Form parse_eq10_form(const std::string& s) {
  if (s == "outside") return Eq10Form::outside;
  if (s == "inside") return Eq10Form::inside;
  throw Error(ErrorCode::InvalidConfig, "eq10-form must be 'outside' or 'inside', got '" + s + "'");
}

void HyperParams::validate() const {
  if (!(lambda >= 0.0)) throw Error(ErrorCode::InvalidConfig, "lambda must be >= 0");
  if (!(beta > 0.0)) throw Error(ErrorCode::InvalidConfig, "beta must be > 0");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorCode::AlphaOutOfRange, "alpha must lie in [0, 1]");
  if (k == 0) throw Error(ErrorCode::InvalidConfig, "k must be positive");
}

RowMatrixd zero_shot_scores(const RowMatrixd& images, const RowMatrixd& attr_prompts) {
  return similarity_matrix(images, attr_prompts);
}

RowMatrixd tip_cache_scores(const RowMatrixd& images, const Cache& cache, std::size_t n_attributes,
                            double beta, EtaForm form) {
  if (cache.entries.empty()) throw Error(ErrorCode::EmptyCache, "TIP scoring needs a non-empty cache");
  const RowMatrixd affinity = similarity_matrix(images, cache.embeddings());
  RowMatrixd out = RowMatrixd::Zero(images.rows(), static_cast<Eigen::Index>(n_attributes));
  for (std::size_t c = 0; c < cache.size(); ++c) {
    const auto& src = cache.entries[c].source_attribute;
    if (!src) throw Error(ErrorCode::InvalidConfig, "TIP scoring needs hard labels");
    if (*src >= n_attributes) throw Error(ErrorCode::ShapeMismatch, "hard label out of range");
    for (Eigen::Index x = 0; x < images.rows(); ++x) {
      out(x, static_cast<Eigen::Index>(*src)) += eta_c(affinity(x, static_cast<Eigen::Index>(c)), beta, form);
    }
  }
  return out;
}

RowMatrixd comca_cache_scores(const RowMatrixd& images, const RowMatrixd& cache_embeddings,
                              const RowMatrixd& labels, double beta, EtaForm form, Eq10Form eq10) {
  if (cache_embeddings.rows() == 0) throw Error(ErrorCode::EmptyCache, "cache is empty");
  if (labels.rows() != cache_embeddings.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "label rows (" + std::to_string(labels.rows()) +
                                              ") do not match cache entries (" +
                                              std::to_string(cache_embeddings.rows()) + ")");
  }
  const RowMatrixd affinity = similarity_matrix(images, cache_embeddings);
  auto eta = [&](const auto& z) {
    return form == EtaForm::tip ? (-beta * (1.0 - z)).exp().eval() : (1.0 + beta * z).exp().eval();
  };
  if (eq10 == Eq10Form::inside) {
    const RowMatrixd weights = eta(affinity.array()).matrix();
    return weights * labels;
  }
  RowMatrixd out(images.rows(), labels.cols());
  for (Eigen::Index x = 0; x < images.rows(); ++x) {
    const Eigen::ArrayXXd z = labels.array().colwise() * affinity.row(x).transpose().array();
    out.row(x) = eta(z).colwise().sum().matrix();
  }
  return out;
}

Vectord eta_a(const Eigen::Ref<const Vectord>& z, NormMode mode) {
  switch (mode) {
    case NormMode::none:
      return z;
    case NormMode::min_max: {
      const double lo = z.minCoeff(), hi = z.maxCoeff();
      if (hi - lo < 1e-12) return Vectord::Zero(z.size());
      return (z.array() - lo) / (hi - lo);
    }
    case NormMode::max_softmax: {
      Vectord shifted = z;
      double top = z.maxCoeff();
      if (top <= 1e-12) {
        shifted.array() += 1e-6 - top;
        top = 1e-6;
      }
      const Eigen::ArrayXd e = (shifted.array() / top - 1.0).exp();
      return e / e.sum();
    }
  }
  throw Error(ErrorCode::Internal, "unhandled norm mode");
}

RowMatrixd fuse_final(const RowMatrixd& cache_scores, const RowMatrixd& clip_scores, double lambda,
                      NormMode mode) {
  if (cache_scores.rows() != clip_scores.rows() || cache_scores.cols() != clip_scores.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "cache and zero-shot score matrices differ in shape");
  }
  if (lambda == 0.0 && mode == NormMode::none) return clip_scores;
  const RowMatrixd z = lambda * cache_scores + clip_scores;
  RowMatrixd out(z.rows(), z.cols());
  for (Eigen::Index r = 0; r < z.rows(); ++r) out.row(r) = eta_a(z.row(r).transpose(), mode).transpose();
  return out;
}

RowMatrixd iap_scores(const RowMatrixd& object_scores, const RowMatrixd& attr_given_object) {
  if (object_scores.cols() != attr_given_object.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "object score columns must match p(a|y) rows");
  }
  auto check = [](const RowMatrixd& m, const char* what) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      if (std::abs(m.row(r).sum() - 1.0) > 1e-6 || (m.row(r).array() < 0.0).any()) {
        throw Error(ErrorCode::NotStochastic, std::string(what) + " row " + std::to_string(r) +
                                                  " is not a distribution");
      }
    }
  };
  check(object_scores, "p(y|x)");
  check(attr_given_object, "p(a|y)");
  return object_scores * attr_given_object;
}

Vectord image_based_scores(const Eigen::Ref<const Vectord>& test_image,
                           const Eigen::Ref<const Vectord>& clip_row, const EmbeddingMatrix& pool,
                           std::size_t k, const EmbeddingMatrix& attr_text, const HyperParams& params) {
  if (pool.empty()) throw Error(ErrorCode::PoolExhausted, "retrieval pool is empty");
  if (clip_row.size() != attr_text.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "zero-shot row does not match the attribute count");
  }
  Cache cache;
  cache.entries = nearest_pool_entries(test_image, pool, k);
  cache.shots_per_attribute = k;
  cache.strategy = CacheStrategy::image_based;
  const RowMatrixd embeddings = cache.embeddings();
  const RowMatrixd raw = raw_soft_labels(embeddings, attr_text.data());
  LabelMatrix soft;
  try {
    soft = normalize_soft_labels(raw, LabelVariant::standardized_softmax);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::DegenerateStatistics) throw;
    warn("image-based cache has constant similarities; using plain softmax labels");
    soft = normalize_soft_labels(raw, LabelVariant::softmax_only);
  }
  const RowMatrixd image = test_image.transpose();
  const RowMatrixd cache_row =
      comca_cache_scores(image, embeddings, soft.values, params.beta, params.eta_form, params.eq10_form);
  return fuse_final(cache_row, clip_row.transpose(), params.lambda, params.norm_mode).row(0).transpose();
}

ScoreMatrix zero_shot_scores(const EmbeddingMatrix& images, const EmbeddingMatrix& attr_prompts) {
  return ScoreMatrix{images.ids(), attr_prompts.ids(),
                     zero_shot_scores(images.data(), attr_prompts.data()), ScoreKind::zero_shot};
}

ScoreMatrix tip_cache_scores(const EmbeddingMatrix& images, const Cache& cache,
                             const std::vector<std::string>& attribute_names, const HyperParams& params) {
  return ScoreMatrix{images.ids(), attribute_names,
                     tip_cache_scores(images.data(), cache, attribute_names.size(), params.beta,
                                      params.eta_form),
                     ScoreKind::cache_tip};
}

ScoreMatrix comca_cache_scores(const EmbeddingMatrix& images, const Cache& cache,
                               const LabelMatrix& labels,
                               const std::vector<std::string>& attribute_names,
                               const HyperParams& params) {
  if (labels.values.cols() != static_cast<Eigen::Index>(attribute_names.size())) {
    throw Error(ErrorCode::ShapeMismatch, "label columns do not match the attribute count");
  }
  if (labels.variant != LabelVariant::blended && labels.variant != LabelVariant::one_hot) {
    warn(std::string("scoring with '") + to_string(labels.variant) + "' labels instead of blended ones");
  }
  return ScoreMatrix{images.ids(), attribute_names,
                     comca_cache_scores(images.data(), cache.embeddings(), labels.values, params.beta,
                                        params.eta_form, params.eq10_form),
                     ScoreKind::cache_comca};
}

ScoreMatrix fuse_final(const ScoreMatrix& cache_scores, const ScoreMatrix& clip_scores,
                       const HyperParams& params) {
  if (cache_scores.instance_ids != clip_scores.instance_ids) {
    throw Error(ErrorCode::Misalignment, "cache and zero-shot scores list different instances");
  }
  return ScoreMatrix{clip_scores.instance_ids, clip_scores.attribute_names,
                     fuse_final(cache_scores.values, clip_scores.values, params.lambda, params.norm_mode),
                     ScoreKind::fused};
}

ScoreMatrix image_based_scores(const EmbeddingMatrix& images, const ScoreMatrix& clip_scores,
                               const EmbeddingMatrix& pool, const EmbeddingMatrix& attr_text,
                               const HyperParams& params) {
  if (clip_scores.instance_ids != images.ids()) {
    throw Error(ErrorCode::Misalignment, "zero-shot scores do not follow the image order");
  }
  ScoreMatrix out{images.ids(), clip_scores.attribute_names,
                  RowMatrixd(images.rows(), clip_scores.values.cols()), ScoreKind::image_based};
  for (Eigen::Index x = 0; x < images.rows(); ++x) {
    out.values.row(x) = image_based_scores(images.row(x).transpose(), clip_scores.values.row(x).transpose(),
                                           pool, params.k, attr_text, params)
                            .transpose();
  }
  return out;
}

void ScoreMatrix::save(const std::filesystem::path& path) const {
  if (values.rows() != static_cast<Eigen::Index>(instance_ids.size()) ||
      values.cols() != static_cast<Eigen::Index>(attribute_names.size())) {
    throw Error(ErrorCode::ShapeMismatch, "score matrix shape does not match its labels");
  }
  if (!values.allFinite()) throw Error(ErrorCode::Internal, "refusing to write non-finite scores");
  nlohmann::ordered_json header;
  header["instances"] = instance_ids;
  header["attributes"] = attribute_names;
  header["kind"] = to_string(kind);
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::MissingPath, "cannot write " + path.string());
    out << header.dump(2) << '\n';
  }
  std::string bytes;
  bytes.reserve(static_cast<std::size_t>(values.size()) * 8);
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(values.data()[i]);
    for (int b = 0; b < 8; ++b) bytes.push_back(static_cast<char>((bits >> (8 * b)) & 0xFFu));
  }
  std::ofstream bin(path.string() + ".bin", std::ios::binary | std::ios::trunc);
  if (!bin) throw Error(ErrorCode::MissingPath, "cannot write " + path.string() + ".bin");
  bin.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

ScoreMatrix ScoreMatrix::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingPath, "cannot open scores " + path.string());
  ScoreMatrix s;
  try {
    const auto header = nlohmann::json::parse(in);
    s.instance_ids = header.at("instances").get<std::vector<std::string>>();
    s.attribute_names = header.at("attributes").get<std::vector<std::string>>();
    s.kind = parse_score_kind(header.at("kind").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ContainerFormat, path.string() + ": " + e.what());
  }
  std::ifstream bin(path.string() + ".bin", std::ios::binary);
  if (!bin) throw Error(ErrorCode::MissingPath, "cannot open " + path.string() + ".bin");
  std::ostringstream ss;
  ss << bin.rdbuf();
  const std::string bytes = ss.str();
  const auto n = static_cast<Eigen::Index>(s.instance_ids.size());
  const auto a = static_cast<Eigen::Index>(s.attribute_names.size());
  if (bytes.size() != static_cast<std::size_t>(n * a) * 8) {
    throw Error(ErrorCode::ContainerFormat, path.string() + ".bin has the wrong size");
  }
  s.values.resize(n, a);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  for (Eigen::Index i = 0; i < n * a; ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[8 * i + b]) << (8 * b);
    s.values.data()[i] = std::bit_cast<double>(bits);
  }
  return s;
}

}  // namespace comca
