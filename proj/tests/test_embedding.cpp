#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "comca/diagnostics.hpp"
#include "comca/embedding.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace comca;

TEST_CASE("l2_normalize") {
  Eigen::Vector2d v(3, 4);
  const Eigen::Vector2d u = l2_normalize(v);
  CHECK(u[0] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(u[1] == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(std::abs(u.norm() - 1.0) <= 1e-7);

  const Eigen::Vector2d e = l2_normalize(Eigen::Vector2d(1, 0));
  CHECK(e == Eigen::Vector2d(1, 0));

  CHECK_THROWS_AS(l2_normalize(Eigen::Vector2d(0, 0)), Error);
  try {
    l2_normalize(Eigen::Vector2d(0, 0));
  } catch (const Error& err) {
    CHECK(err.code() == ErrorCode::ZeroVector);
  }
}

TEST_CASE("cosine") {
  CHECK(cosine(Eigen::Vector2d(1, 0), Eigen::Vector2d(1, 0)) == 1.0);
  CHECK(cosine(Eigen::Vector2d(1, 0), Eigen::Vector2d(0, 1)) == 0.0);
  const double s = 1.0 / std::sqrt(2.0);
  CHECK(std::abs(cosine(Eigen::Vector2d(s, s), Eigen::Vector2d(1, 0)) - 0.70710678) <= 1e-7);
  // clamped even when rounding pushes the dot product past 1
  CHECK(cosine(Eigen::Vector2d(1.0 + 1e-12, 0), Eigen::Vector2d(1, 0)) == 1.0);
  REQUIRE_THROWS_WITH_AS(cosine(Eigen::Vector2d(1, 0), Eigen::Vector3d(1, 0, 0)),
                         doctest::Contains("DimMismatch"), Error);
}

TEST_CASE("similarity_matrix") {
  SUBCASE("identity basis") {
    const RowMatrixd id = RowMatrixd::Identity(3, 3);
    CHECK(similarity_matrix(id, id) == RowMatrixd::Identity(3, 3));
  }
  SUBCASE("single vector") {
    RowMatrixd v(1, 2);
    v << 0.6, 0.8;
    CHECK(similarity_matrix(v, v)(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
  }
  SUBCASE("seeded 4x3 against scalar loop, and transpose symmetry") {
    std::mt19937_64 rng(11);
    const auto a = oracle::random_units(rng, 4, 5);
    const auto b = oracle::random_units(rng, 3, 5);
    const RowMatrixd A = test::to_eigen(a), B = test::to_eigen(b);
    const RowMatrixd S = similarity_matrix(A, B);
    const auto ref = oracle::similarity(a, b);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 3; ++j) CHECK(std::abs(S(i, j) - ref[i][j]) <= 1e-6);
    CHECK((similarity_matrix(B, A) - S.transpose()).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK(S.maxCoeff() <= 1.0);
    CHECK(S.minCoeff() >= -1.0);
  }
  SUBCASE("dim mismatch") {
    CHECK_THROWS_AS(similarity_matrix(RowMatrixd::Identity(2, 2), RowMatrixd::Identity(3, 3)), Error);
  }
}

TEST_CASE("EmbeddingMatrix validation") {
  RowMatrixd data(2, 2);
  data << 1, 0, 0, 1;
  SUBCASE("duplicate ids") {
    CHECK_THROWS_WITH(EmbeddingMatrix(EmbeddingKind::image, {"a", "a"}, data), doctest::Contains("DuplicateId"));
  }
  SUBCASE("empty id") { CHECK_THROWS_AS(EmbeddingMatrix(EmbeddingKind::image, {"a", ""}, data), Error); }
  SUBCASE("id count") { CHECK_THROWS_AS(EmbeddingMatrix(EmbeddingKind::image, {"a"}, data), Error); }
  SUBCASE("off-norm rows are re-normalized with a warning") {
    data << 2, 0, 0, 1;
    WarningCapture cap;
    const EmbeddingMatrix m(EmbeddingKind::image, {"a", "b"}, data);
    CHECK(cap.count() == 1);
    CHECK(m.row(0).norm() == doctest::Approx(1.0));
  }
  SUBCASE("float32 rounding within tolerance is left alone") {
    data << 1.0 + 5e-6, 0, 0, 1;
    WarningCapture cap;
    const EmbeddingMatrix m(EmbeddingKind::image, {"a", "b"}, data);
    CHECK(cap.count() == 0);
    CHECK(m.data()(0, 0) == 1.0 + 5e-6);
  }
  SUBCASE("zero rows are rejected") {
    data << 0, 0, 0, 1;
    CHECK_THROWS_WITH(EmbeddingMatrix(EmbeddingKind::image, {"a", "b"}, data), doctest::Contains("ZeroVector"));
  }
  SUBCASE("ids match exactly, no case folding") {
    const EmbeddingMatrix m(EmbeddingKind::text, {"Red", "red"}, data);
    CHECK(m.index_of("Red") == 0);
    CHECK(m.index_of("red") == 1);
    CHECK_FALSE(m.find("RED"));
  }
}

TEST_CASE("container round trip is byte-identical") {
  test::TempDir tmp;
  std::mt19937_64 rng(3);
  const auto rows = oracle::random_units(rng, 5, 7);
  RowMatrixd data = test::to_eigen(rows).cast<float>().cast<double>();
  const EmbeddingMatrix m(EmbeddingKind::text, {"q0", "q|1", "q2", "\xc3\xa9t\xc3\xa9", "q4"}, data);
  const auto p1 = tmp.path / "a.emb", p2 = tmp.path / "b.emb";
  m.save(p1);
  const auto loaded = EmbeddingMatrix::load(p1);
  CHECK(loaded.kind() == EmbeddingKind::text);
  CHECK(loaded.ids() == m.ids());
  CHECK(loaded.data() == m.data());
  loaded.save(p2);
  CHECK(test::read_file(p1) == test::read_file(p2));
  CHECK(test::read_file(ids_manifest_path(p1)) == test::read_file(ids_manifest_path(p2)));
  CHECK(test::read_file(ids_manifest_path(p1)).starts_with("{\"row\":0,\"id\":\"q0\"}\n"));

  // header layout
  const std::string bytes = test::read_file(p1);
  REQUIRE(bytes.size() == 24 + 5 * 7 * 4);
  CHECK(bytes.substr(0, 8) == "COMCAEMB");
  CHECK(bytes[8] == 1);   // version
  CHECK(bytes[12] == 1);  // kind = text
  CHECK(bytes[16] == 5);  // n
  CHECK(bytes[20] == 7);  // d
}

TEST_CASE("container errors") {
  test::TempDir tmp;
  const auto p = tmp.path / "bad.emb";
  test::write_file(p, "NOTMAGIC................");
  CHECK_THROWS_WITH(read_container(p), doctest::Contains("ContainerFormat"));
  CHECK_THROWS_WITH(read_container(tmp.path / "missing.emb"), doctest::Contains("MissingPath"));

  // truncated payload
  Container c{EmbeddingKind::image, {"a"}, RowMatrixd::Identity(1, 3)};
  write_container(p, c);
  std::string bytes = test::read_file(p);
  test::write_file(p, bytes.substr(0, bytes.size() - 2));
  CHECK_THROWS_WITH(read_container(p), doctest::Contains("bytes"));

  // label containers skip the norm check but cannot be loaded as embeddings
  Container labels{EmbeddingKind::labels, {"0:a"}, RowMatrixd::Constant(1, 3, 0.2)};
  write_container(p, labels);
  CHECK(read_container(p).kind == EmbeddingKind::labels);
  CHECK_THROWS_AS(EmbeddingMatrix::load(p), Error);
}
