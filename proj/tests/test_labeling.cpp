#include <doctest.h>

#include "comca/diagnostics.hpp"
#include "comca/labeling.hpp"
#include "test_util.hpp"

using namespace comca;

namespace {

RowMatrixd mat(std::initializer_list<std::initializer_list<double>> rows) {
  oracle::Mat m;
  for (auto r : rows) m.emplace_back(r);
  return test::to_eigen(m);
}

double max_abs(const RowMatrixd& a, const RowMatrixd& b) { return (a - b).cwiseAbs().maxCoeff(); }

Cache hard_cache(const oracle::Mat& embeddings, const std::vector<std::size_t>& labels) {
  Cache c;
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    CacheEntry e;
    e.image_id = "p" + std::to_string(i);
    e.embedding = test::to_eigen({embeddings[i]}).row(0).transpose();
    e.source_attribute = labels[i];
    e.sampled_object = 0;
    c.entries.push_back(e);
  }
  c.shots_per_attribute = 1;
  return c;
}

}  // namespace

TEST_CASE("raw_soft_labels") {
  const auto text = mat({{1, 0}, {0, 1}});
  CHECK(raw_soft_labels(mat({{1, 0}}), text) == mat({{1, 0}}));

  std::mt19937_64 rng(8);
  const auto c = oracle::random_units(rng, 2, 5);
  const auto t = oracle::random_units(rng, 2, 5);
  CHECK(max_abs(raw_soft_labels(test::to_eigen(c), test::to_eigen(t)), test::to_eigen(oracle::similarity(c, t))) <= 1e-6);
  CHECK_THROWS_AS(raw_soft_labels(mat({{1, 0, 0}}), text), Error);

  const auto cache = hard_cache(c, {0, 1});
  const auto attr = test::make_matrix(EmbeddingKind::text, "a", t);
  CHECK(max_abs(raw_soft_labels(cache, attr), test::to_eigen(oracle::similarity(c, t))) <= 1e-6);
}

TEST_CASE("cache_statistics") {
  auto s = cache_statistics(mat({{0, 1}}));
  CHECK(s.mu == 0.5);
  CHECK(s.sigma == 0.5);
  s = cache_statistics(mat({{0.2, 0.4, 0.6}}));
  CHECK(s.mu == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(s.sigma == doctest::Approx(std::sqrt(2.0 / 75.0)).epsilon(1e-12));
  try {
    cache_statistics(mat({{1, 1}, {1, 1}}));
    FAIL("expected DegenerateStatistics");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DegenerateStatistics);
  }
}

TEST_CASE("normalize_soft_labels") {
  // a single attribute always gets the full mass
  const auto one = normalize_soft_labels(mat({{0.3}, {-0.2}, {0.9}}), LabelVariant::standardized_softmax);
  CHECK(one.values == RowMatrixd::Ones(3, 1));

  const auto eq = normalize_soft_labels(mat({{0.4, 0.4, 0.4, 0.4}}), LabelVariant::softmax_only);
  for (Eigen::Index a = 0; a < 4; ++a) CHECK(eq.values(0, a) == doctest::Approx(0.25).epsilon(1e-15));

  const double sigma = 0.5;
  const auto gap = normalize_soft_labels(mat({{0.0, sigma * std::log(2.0)}}), LabelVariant::standardized_softmax,
                                         CacheStatistics{0.0, sigma});
  CHECK(std::abs(gap.values(0, 0) - 1.0 / 3.0) <= 1e-9);
  CHECK(std::abs(gap.values(0, 1) - 2.0 / 3.0) <= 1e-9);

  const auto raw = mat({{0.1, 0.7}, {0.3, -0.2}});
  CHECK(normalize_soft_labels(raw, LabelVariant::raw_soft).values == raw);
  const auto st = normalize_soft_labels(raw, LabelVariant::standardized_softmax);
  CHECK(st.mu == doctest::Approx(0.225));
  CHECK(st.sigma > 0);

  CHECK_THROWS_AS(normalize_soft_labels(mat({{0.5, 0.5}}), LabelVariant::standardized_softmax), Error);
  try {
    normalize_soft_labels(raw, LabelVariant::paws);
    FAIL("expected NotImplemented");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NotImplemented);
  }
}

TEST_CASE("soft label properties") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    RowMatrixd raw(1 + trial % 7, 1 + trial % 5);
    for (Eigen::Index i = 0; i < raw.size(); ++i) raw.data()[i] = u(rng);
    if (raw.size() < 2) continue;
    for (auto v : {LabelVariant::softmax_only, LabelVariant::standardized_softmax}) {
      const auto l = normalize_soft_labels(raw, v).values;
      for (Eigen::Index r = 0; r < l.rows(); ++r) {
        CHECK(std::abs(l.row(r).sum() - 1.0) <= 1e-9);
        CHECK(l.row(r).minCoeff() > 0.0);
        CHECK(l.row(r).maxCoeff() <= 1.0);
      }
    }
    const double shift = 10.0 * u(rng);
    const RowMatrixd shifted = (raw.array() + shift).matrix();
    CHECK(max_abs(normalize_soft_labels(raw, LabelVariant::standardized_softmax).values,
                  normalize_soft_labels(shifted, LabelVariant::standardized_softmax).values) <= 1e-9);

    // reversing rows reverses label rows
    const RowMatrixd rev = raw.colwise().reverse();
    CHECK(max_abs(normalize_soft_labels(rev, LabelVariant::standardized_softmax).values,
                  normalize_soft_labels(raw, LabelVariant::standardized_softmax).values.colwise().reverse()) <= 1e-12);
  }
}

TEST_CASE("blend_labels") {
  LabelMatrix soft;
  soft.values = mat({{0.7, 0.3}});
  const auto hard = mat({{1, 0}});
  const auto b = blend_labels(hard, soft, 0.6);
  CHECK(std::abs(b.values(0, 0) - 0.82) <= 1e-12);
  CHECK(std::abs(b.values(0, 1) - 0.18) <= 1e-12);
  CHECK(b.variant == LabelVariant::blended);
  CHECK(blend_labels(hard, soft, 0.0).values == hard);
  CHECK(blend_labels(hard, soft, 1.0).values == soft.values);

  for (double bad : {-0.1, 1.5, std::nan("")}) {
    try {
      blend_labels(hard, soft, bad);
      FAIL("expected AlphaOutOfRange");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::AlphaOutOfRange);
    }
  }
  CHECK_THROWS_AS(blend_labels(mat({{1, 0, 0}}), soft, 0.5), Error);
}

TEST_CASE("label_cache") {
  std::mt19937_64 rng(3);
  const auto emb = oracle::random_units(rng, 6, 8);
  const auto attr = test::make_matrix(EmbeddingKind::text, "a", oracle::random_units(rng, 3, 8));
  const auto cache = hard_cache(emb, {0, 0, 1, 1, 2, 2});

  const auto labels = label_cache(cache, attr, 0.6);
  CHECK(labels.values.rows() == 6);
  CHECK(labels.values.cols() == 3);
  for (Eigen::Index r = 0; r < 6; ++r) CHECK(std::abs(labels.values.row(r).sum() - 1.0) <= 1e-9);
  CHECK(label_cache(cache, attr, 0.0).values == one_hot_labels(cache, 3).values);
  CHECK(label_cache(cache, attr, 0.6, LabelVariant::one_hot).values == one_hot_labels(cache, 3).values);

  Cache unlabeled = cache;
  for (auto& e : unlabeled.entries) e.source_attribute.reset();
  WarningCapture warnings;
  const auto forced = label_cache(unlabeled, attr, 0.6);
  CHECK(forced.alpha == 1.0);
  CHECK(warnings.count() == 1);
}

TEST_CASE("label matrix save and load") {
  std::mt19937_64 rng(4);
  const auto cache = hard_cache(oracle::random_units(rng, 3, 4), {0, 1, 0});
  LabelMatrix l;
  l.values = mat({{0.75, 0.25}, {0.5, 0.5}, {0.125, 0.875}});
  l.variant = LabelVariant::blended;
  l.alpha = 0.6;
  l.mu = 0.1;
  l.sigma = 0.2;
  test::TempDir dir;
  l.save(dir.path / "labels.emb", cache, {"red", "wet"});
  const auto back = LabelMatrix::load(dir.path / "labels.emb");
  CHECK(back.values == l.values);  // exactly representable in binary32
  CHECK(back.variant == LabelVariant::blended);
  CHECK(back.alpha == 0.6);
  CHECK(back.sigma == 0.2);
  const auto c = read_container(dir.path / "labels.emb");
  CHECK(c.kind == EmbeddingKind::labels);
  CHECK(c.ids == std::vector<std::string>{"0:p0", "1:p1", "2:p2"});
}
