#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "comca/error.hpp"

namespace comca {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using RowMatrixd = RowMatrix<double>;
using Vectord = Vector<double>;

inline constexpr double kUnitNormTolerance = 1e-5;
inline constexpr double kZeroNorm = 1e-12;

/// Returns v / ||v||. Throws ZeroVector when ||v|| <= 1e-12.
template <typename Derived>
auto l2_normalize(const Eigen::MatrixBase<Derived>& v) -> typename Derived::PlainObject {
  const auto norm = v.norm();
  if (!(norm > kZeroNorm)) throw Error(ErrorCode::ZeroVector, "cannot normalize a zero vector");
  return v / norm;
}

/// Cosine of two unit vectors: their dot product clamped to [-1, 1].
template <typename A, typename B>
typename A::Scalar cosine(const Eigen::MatrixBase<A>& u, const Eigen::MatrixBase<B>& v) {
  using Scalar = typename A::Scalar;
  if (u.size() != v.size()) {
    throw Error(ErrorCode::DimMismatch,
                "cosine of vectors with lengths " + std::to_string(u.size()) + " and " +
                    std::to_string(v.size()));
  }
  Scalar dot = 0;
  for (Eigen::Index i = 0; i < u.size(); ++i) dot += u.derived().coeff(i) * v.derived().coeff(i);
  return std::clamp(dot, Scalar(-1), Scalar(1));
}

/// Pairwise cosines between the rows of two unit-row matrices, clamped.
template <typename A, typename B>
RowMatrix<typename A::Scalar> similarity_matrix(const Eigen::MatrixBase<A>& rows,
                                                const Eigen::MatrixBase<B>& cols) {
  using Scalar = typename A::Scalar;
  if (rows.cols() != cols.cols()) {
    throw Error(ErrorCode::DimMismatch, "similarity of dims " + std::to_string(rows.cols()) +
                                            " and " + std::to_string(cols.cols()));
  }
  RowMatrix<Scalar> out = rows * cols.transpose();
  return out.cwiseMax(Scalar(-1)).cwiseMin(Scalar(1));
}

enum class EmbeddingKind : std::uint32_t { image = 0, text = 1, labels = 2 };

const char* to_string(EmbeddingKind kind) noexcept;

/// Raw contents of a COMCAEMB container and its `.ids.jsonl` manifest. No norm
/// validation happens at this level.
struct Container {
  EmbeddingKind kind = EmbeddingKind::image;
  std::vector<std::string> ids;
  RowMatrixd data;
};

Container read_container(const std::filesystem::path& path);
/// Values are narrowed to IEEE-754 binary32 on write.
void write_container(const std::filesystem::path& path, const Container& container);
std::filesystem::path ids_manifest_path(const std::filesystem::path& path);

/// n unit-norm rows of dimension d with unique string ids. Immutable.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;

  /// Validates ids and row norms. Rows off unit norm by more than 1e-5 are
  /// re-normalized with a warning; rows with norm < 1e-12 are rejected.
  EmbeddingMatrix(EmbeddingKind kind, std::vector<std::string> ids, RowMatrixd data);

  static EmbeddingMatrix load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  EmbeddingKind kind() const noexcept { return kind_; }
  Eigen::Index rows() const noexcept { return data_.rows(); }
  Eigen::Index dim() const noexcept { return data_.cols(); }
  bool empty() const noexcept { return data_.rows() == 0; }

  const std::vector<std::string>& ids() const noexcept { return ids_; }
  const std::string& id(Eigen::Index row) const { return ids_.at(static_cast<std::size_t>(row)); }
  const RowMatrixd& data() const noexcept { return data_; }
  auto row(Eigen::Index r) const { return data_.row(r); }

  std::optional<Eigen::Index> find(const std::string& id) const;
  Eigen::Index index_of(const std::string& id) const;

  /// Rows in the given order, ids carried along.
  EmbeddingMatrix select(const std::vector<Eigen::Index>& rows) const;

 private:
  EmbeddingKind kind_ = EmbeddingKind::image;
  std::vector<std::string> ids_;
  RowMatrixd data_;
  std::unordered_map<std::string, Eigen::Index> index_;
};

RowMatrixd similarity_matrix(const EmbeddingMatrix& rows, const EmbeddingMatrix& cols);

}  // namespace comca
