#include "comca/labeling.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "comca/diagnostics.hpp"

namespace comca {

const char* to_string(LabelVariant v) noexcept {
  switch (v) {
    case LabelVariant::one_hot: return "one_hot";
    case LabelVariant::raw_soft: return "raw_soft";
    case LabelVariant::softmax_only: return "softmax_only";
    case LabelVariant::standardized_softmax: return "standardized_softmax";
    case LabelVariant::blended: return "blended";
    case LabelVariant::paws: return "paws";
  }
  return "unknown";
}

LabelVariant parse_label_variant(const std::string& s) {
  for (auto v : {LabelVariant::one_hot, LabelVariant::raw_soft, LabelVariant::softmax_only,
                 LabelVariant::standardized_softmax, LabelVariant::blended, LabelVariant::paws}) {
    if (s == to_string(v)) return v;
  }
  throw Error(ErrorCode::InvalidConfig, "unknown label variant '" + s + "'");
}

RowMatrixd raw_soft_labels(const RowMatrixd& cache_embeddings, const RowMatrixd& attr_text) {
  return similarity_matrix(cache_embeddings, attr_text);
}

RowMatrixd raw_soft_labels(const Cache& cache, const EmbeddingMatrix& attr_text) {
  if (cache.entries.empty()) throw Error(ErrorCode::EmptyCache, "cannot label an empty cache");
  return raw_soft_labels(cache.embeddings(), attr_text.data());
}

CacheStatistics cache_statistics(const RowMatrixd& raw) {
  if (raw.size() == 0) throw Error(ErrorCode::EmptyCache, "no similarities to summarize");
  CacheStatistics s;
  s.mu = raw.mean();
  s.sigma = std::sqrt((raw.array() - s.mu).square().mean());
  if (s.sigma < 1e-9) {
    throw Error(ErrorCode::DegenerateStatistics, "all cache similarities are identical");
  }
  return s;
}

LabelMatrix normalize_soft_labels(const RowMatrixd& raw, LabelVariant variant,
                                  std::optional<CacheStatistics> stats) {
  LabelMatrix out;
  out.variant = variant;
  switch (variant) {
    case LabelVariant::raw_soft:
      out.values = raw;
      break;
    case LabelVariant::softmax_only:
      out.values = row_softmax(raw);
      break;
    case LabelVariant::standardized_softmax: {
      const CacheStatistics s = stats ? *stats : cache_statistics(raw);
      if (s.sigma < 1e-9) throw Error(ErrorCode::DegenerateStatistics, "sigma below 1e-9");
      out.mu = s.mu;
      out.sigma = s.sigma;
      out.values = row_softmax(((raw.array() - s.mu) / s.sigma).matrix());
      break;
    }
    case LabelVariant::paws:
      throw Error(ErrorCode::NotImplemented, "PAWS sharpening is not implemented");
    case LabelVariant::one_hot:
    case LabelVariant::blended:
      throw Error(ErrorCode::InvalidConfig,
                  std::string("'") + to_string(variant) + "' is not a soft-label normalization");
  }
  return out;
}

LabelMatrix one_hot_labels(const Cache& cache, std::size_t n_attributes) {
  LabelMatrix out;
  out.variant = LabelVariant::one_hot;
  out.values = RowMatrixd::Zero(static_cast<Eigen::Index>(cache.size()),
                                static_cast<Eigen::Index>(n_attributes));
  for (std::size_t c = 0; c < cache.size(); ++c) {
    const auto& src = cache.entries[c].source_attribute;
    if (!src) throw Error(ErrorCode::InvalidConfig, "cache entry " + std::to_string(c) + " has no hard label");
    if (*src >= n_attributes) throw Error(ErrorCode::ShapeMismatch, "hard label out of range");
    out.values(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(*src)) = 1.0;
  }
  return out;
}

LabelMatrix blend_labels(const RowMatrixd& one_hot, const LabelMatrix& soft, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw Error(ErrorCode::AlphaOutOfRange, "alpha must lie in [0, 1], got " + std::to_string(alpha));
  }
  if (one_hot.rows() != soft.values.rows() || one_hot.cols() != soft.values.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "hard and soft label matrices differ in shape");
  }
  LabelMatrix out;
  out.variant = LabelVariant::blended;
  out.alpha = alpha;
  out.mu = soft.mu;
  out.sigma = soft.sigma;
  if (alpha == 0.0) {
    out.values = one_hot;
  } else if (alpha == 1.0) {
    out.values = soft.values;
  } else {
    out.values = (1.0 - alpha) * one_hot + alpha * soft.values;
  }
  return out;
}

LabelMatrix label_cache(const Cache& cache, const EmbeddingMatrix& attr_text, double alpha,
                        LabelVariant variant) {
  const auto n_attr = static_cast<std::size_t>(attr_text.rows());
  if (variant == LabelVariant::one_hot) return one_hot_labels(cache, n_attr);

  const RowMatrixd raw = raw_soft_labels(cache, attr_text);
  const LabelMatrix soft = normalize_soft_labels(raw, variant);
  if (!cache.has_hard_labels()) {
    if (alpha != 1.0) warn("cache has no hard labels; forcing alpha = 1");
    return blend_labels(RowMatrixd::Zero(raw.rows(), raw.cols()), soft, 1.0);
  }
  return blend_labels(one_hot_labels(cache, n_attr).values, soft, alpha);
}

void LabelMatrix::save(const std::filesystem::path& path, const Cache& cache,
                       const std::vector<std::string>& attribute_names) const {
  if (static_cast<std::size_t>(values.rows()) != cache.size()) {
    throw Error(ErrorCode::ShapeMismatch, "label rows do not match cache entries");
  }
  Container c;
  c.kind = EmbeddingKind::labels;
  c.data = values;
  for (std::size_t i = 0; i < cache.size(); ++i) {
    c.ids.push_back(std::to_string(i) + ":" + cache.entries[i].image_id);
  }
  write_container(path, c);

  nlohmann::ordered_json meta;
  meta["variant"] = to_string(variant);
  meta["alpha"] = alpha;
  meta["mu"] = mu;
  meta["sigma"] = sigma;
  meta["attributes"] = attribute_names;
  std::ofstream out(path.string() + ".meta.json", std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::MissingPath, "cannot write label sidecar for " + path.string());
  out << meta.dump(2) << '\n';
}

LabelMatrix LabelMatrix::load(const std::filesystem::path& path) {
  Container c = read_container(path);
  if (c.kind != EmbeddingKind::labels) {
    throw Error(ErrorCode::ContainerFormat, path.string() + " is not a label container");
  }
  std::ifstream in(path.string() + ".meta.json");
  if (!in) throw Error(ErrorCode::MissingPath, "missing label sidecar for " + path.string());
  const auto meta = nlohmann::json::parse(in);
  LabelMatrix out;
  out.values = std::move(c.data);
  out.variant = parse_label_variant(meta.at("variant").get<std::string>());
  out.alpha = meta.at("alpha").get<double>();
  out.mu = meta.at("mu").get<double>();
  out.sigma = meta.at("sigma").get<double>();
  return out;
}

}  // namespace comca
