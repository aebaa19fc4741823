#include "comca/embedding.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "comca/diagnostics.hpp"

namespace comca {

namespace {

constexpr std::array<char, 8> kMagic = {'C', 'O', 'M', 'C', 'A', 'E', 'M', 'B'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingPath, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

const char* to_string(EmbeddingKind kind) noexcept {
  switch (kind) {
    case EmbeddingKind::image: return "image";
    case EmbeddingKind::text: return "text";
    case EmbeddingKind::labels: return "labels";
  }
  return "unknown";
}

std::filesystem::path ids_manifest_path(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".ids.jsonl");
}

Container read_container(const std::filesystem::path& path) {
  const std::string bytes = slurp(path);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  constexpr std::size_t header = 8 + 4 * 4;
  if (bytes.size() < header || std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0) {
    throw Error(ErrorCode::ContainerFormat, path.string() + ": bad magic");
  }
  const std::uint32_t version = get_u32(p + 8);
  const std::uint32_t kind = get_u32(p + 12);
  const std::uint32_t n = get_u32(p + 16);
  const std::uint32_t d = get_u32(p + 20);
  if (version != kVersion) {
    throw Error(ErrorCode::ContainerFormat,
                path.string() + ": unsupported version " + std::to_string(version));
  }
  if (kind > 2) throw Error(ErrorCode::ContainerFormat, path.string() + ": unknown kind");
  const std::size_t expected = header + std::size_t{n} * d * 4;
  if (bytes.size() != expected) {
    throw Error(ErrorCode::ContainerFormat,
                path.string() + ": expected " + std::to_string(expected) + " bytes, found " +
                    std::to_string(bytes.size()));
  }

  Container c;
  c.kind = static_cast<EmbeddingKind>(kind);
  c.data.resize(n, d);
  const unsigned char* values = p + header;
  for (std::size_t i = 0; i < std::size_t{n} * d; ++i) {
    const std::uint32_t bits = get_u32(values + 4 * i);
    c.data.data()[i] = static_cast<double>(std::bit_cast<float>(bits));
  }

  std::ifstream ids(ids_manifest_path(path));
  if (!ids) throw Error(ErrorCode::MissingPath, "cannot open " + ids_manifest_path(path).string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ids, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::ContainerFormat,
                  ids_manifest_path(path).string() + ": " + e.what());
    }
    if (!j.contains("row") || !j.contains("id") || j["row"].get<std::size_t>() != lineno) {
      throw Error(ErrorCode::ContainerFormat, ids_manifest_path(path).string() +
                                                  ": line " + std::to_string(lineno + 1) +
                                                  " out of row order");
    }
    c.ids.push_back(j["id"].get<std::string>());
    ++lineno;
  }
  if (c.ids.size() != n) {
    throw Error(ErrorCode::ContainerFormat, ids_manifest_path(path).string() + ": " +
                                                std::to_string(c.ids.size()) + " ids for " +
                                                std::to_string(n) + " rows");
  }
  return c;
}

void write_container(const std::filesystem::path& path, const Container& c) {
  if (c.ids.size() != static_cast<std::size_t>(c.data.rows())) {
    throw Error(ErrorCode::ContainerFormat, "id count does not match row count");
  }
  std::string out(kMagic.begin(), kMagic.end());
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(c.kind));
  put_u32(out, static_cast<std::uint32_t>(c.data.rows()));
  put_u32(out, static_cast<std::uint32_t>(c.data.cols()));
  out.reserve(out.size() + c.data.size() * 4);
  for (Eigen::Index r = 0; r < c.data.rows(); ++r) {
    for (Eigen::Index k = 0; k < c.data.cols(); ++k) {
      put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(c.data(r, k))));
    }
  }
  {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error(ErrorCode::MissingPath, "cannot write " + path.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
  }
  std::ofstream ids(ids_manifest_path(path), std::ios::binary | std::ios::trunc);
  if (!ids) throw Error(ErrorCode::MissingPath, "cannot write " + ids_manifest_path(path).string());
  for (std::size_t i = 0; i < c.ids.size(); ++i) {
    nlohmann::ordered_json j;
    j["row"] = i;
    j["id"] = c.ids[i];
    ids << j.dump() << '\n';
  }
}

EmbeddingMatrix::EmbeddingMatrix(EmbeddingKind kind, std::vector<std::string> ids, RowMatrixd data)
    : kind_(kind), ids_(std::move(ids)), data_(std::move(data)) {
  if (ids_.size() != static_cast<std::size_t>(data_.rows())) {
    throw Error(ErrorCode::ContainerFormat, std::to_string(ids_.size()) + " ids for " +
                                                std::to_string(data_.rows()) + " rows");
  }
  if (data_.rows() > 0 && data_.cols() == 0) {
    throw Error(ErrorCode::ContainerFormat, "embedding dimension must be positive");
  }
  index_.reserve(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (ids_[i].empty()) throw Error(ErrorCode::ContainerFormat, "empty id at row " + std::to_string(i));
    if (!index_.emplace(ids_[i], static_cast<Eigen::Index>(i)).second) {
      throw Error(ErrorCode::DuplicateId, "duplicate id '" + ids_[i] + "'");
    }
  }
  if (kind_ == EmbeddingKind::labels) return;
  for (Eigen::Index r = 0; r < data_.rows(); ++r) {
    const double norm = data_.row(r).norm();
    if (!std::isfinite(norm) || norm < kZeroNorm) {
      throw Error(ErrorCode::ZeroVector, "row '" + ids_[static_cast<std::size_t>(r)] +
                                             "' has zero or non-finite norm");
    }
    if (std::abs(norm - 1.0) > kUnitNormTolerance) {
      warn("re-normalizing row '" + ids_[static_cast<std::size_t>(r)] + "' (norm " +
           std::to_string(norm) + ")");
      data_.row(r) /= norm;
    }
  }
}

EmbeddingMatrix EmbeddingMatrix::load(const std::filesystem::path& path) {
  Container c = read_container(path);
  if (c.kind == EmbeddingKind::labels) {
    throw Error(ErrorCode::ContainerFormat, path.string() + " holds labels, not embeddings");
  }
  return EmbeddingMatrix(c.kind, std::move(c.ids), std::move(c.data));
}

void EmbeddingMatrix::save(const std::filesystem::path& path) const {
  write_container(path, Container{kind_, ids_, data_});
}

std::optional<Eigen::Index> EmbeddingMatrix::find(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

Eigen::Index EmbeddingMatrix::index_of(const std::string& id) const {
  if (auto r = find(id)) return *r;
  throw Error(ErrorCode::Misalignment, "unknown id '" + id + "'");
}

EmbeddingMatrix EmbeddingMatrix::select(const std::vector<Eigen::Index>& rows) const {
  RowMatrixd out(static_cast<Eigen::Index>(rows.size()), dim());
  std::vector<std::string> ids;
  ids.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = data_.row(rows[i]);
    ids.push_back(ids_.at(static_cast<std::size_t>(rows[i])));
  }
  return EmbeddingMatrix(kind_, std::move(ids), std::move(out));
}

RowMatrixd similarity_matrix(const EmbeddingMatrix& rows, const EmbeddingMatrix& cols) {
  return similarity_matrix(rows.data(), cols.data());
}

}  // namespace comca
