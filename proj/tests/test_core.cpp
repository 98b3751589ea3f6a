#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "fixtures.hpp"
#include "metaobj/core.hpp"
#include "metaobj/ingest.hpp"
#include "oracles.hpp"

using namespace metaobj;

TEST_CASE("l2_normalize scales to unit length") {
  Vector v(2);
  v << 3.0, 4.0;
  const Vector out = l2_normalize(v);
  CHECK(out(0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(out(1) == doctest::Approx(0.8).epsilon(1e-15));
}

TEST_CASE("l2_normalize leaves the zero vector alone") {
  const Vector out = l2_normalize(Vector::Zero(2));
  CHECK(out.isZero(0.0));
}

TEST_CASE("l2_normalize of a random 4096-d vector has unit norm") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    const Vector v = oracle::random_matrix(rng, 1, 4096, 10.0).row(0).transpose();
    CHECK(std::abs(l2_normalize(v).norm() - 1.0) < 1e-9);
  }
}

TEST_CASE("l2_normalize is idempotent") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Vector v = oracle::random_matrix(rng, 1, 1 + trial, 5.0).row(0).transpose();
    const Vector once = l2_normalize(v);
    CHECK((l2_normalize(once) - once).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("l2_normalize rejects non-finite input") {
  Vector v(3);
  v << 1.0, std::numeric_limits<double>::quiet_NaN(), 0.0;
  CHECK_THROWS_AS(l2_normalize(v), ValidationError);
  v(1) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(l2_normalize(v), ValidationError);
}

TEST_CASE("validate_dataset accepts a well-formed dataset") {
  const auto report = validate_dataset(fixtures::tiny_dataset());
  CHECK(report.ok());
  CHECK(report.violations.empty());
}

TEST_CASE("validate_dataset reports a patch pointing at a missing image") {
  auto ds = fixtures::tiny_dataset();
  ds.patches[3].image_id = 7;
  const auto report = validate_dataset(ds);
  CHECK(report.count("dangling image_id") == 1);
  CHECK(report.count("back-reference mismatch") == 1);  // image 1 still lists the patch
  CHECK(report.violations.size() == 2);
}

TEST_CASE("validate_dataset reports a dimension mismatch") {
  auto ds = fixtures::tiny_dataset(16);
  ds.patches[1].feature = Vector::Unit(10, 0);
  const auto report = validate_dataset(ds);
  CHECK(report.count("dimension mismatch") == 1);
  CHECK(report.violations.size() == 1);
}

TEST_CASE("validate_dataset reports every problem instead of throwing") {
  auto ds = fixtures::tiny_dataset();
  ds.patches[0].bbox.cx = 1.5;
  ds.patches[1].feature(0) = std::numeric_limits<double>::quiet_NaN();
  ds.images[1].scene_label = 5;
  ds.images[0].patches.push_back(99);
  const auto report = validate_dataset(ds);
  CHECK(report.count("bbox out of range") == 1);
  CHECK(report.count("non-finite feature") == 1);
  CHECK(report.count("label out of range") == 1);
  CHECK(report.count("dangling patch_id") == 1);
  CHECK_FALSE(report.summary().empty());
}

TEST_CASE("validate_dataset reports label gaps and shared patches") {
  auto ds = fixtures::tiny_dataset();
  ds.num_classes = 3;
  CHECK(validate_dataset(ds).count("label gap") == 1);

  ds = fixtures::tiny_dataset();
  ds.images[1].patches.push_back(0);
  const auto report = validate_dataset(ds);
  CHECK(report.count("shared patch") == 1);
}

TEST_CASE("validate_dataset reports bad box sizes and empty images") {
  auto ds = fixtures::tiny_dataset();
  ds.patches[2].bbox.w = 0.0;
  ds.images[0].patches.clear();
  const auto report = validate_dataset(ds);
  CHECK(report.count("bbox out of range") == 1);
  CHECK(report.count("image without patches") == 1);
  CHECK(report.count("orphan patch") == 2);
}

TEST_CASE("validate_dataset accepts generator output") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    SynthSpec spec;
    spec.seed = seed;
    spec.num_classes = 3;
    spec.images_per_class = 4;
    spec.patches_per_image = 5;
    const auto report = validate_dataset(generate_synthetic(spec).dataset);
    CHECK_MESSAGE(report.ok(), report.summary());
  }
}

TEST_CASE("argmax breaks ties toward the smaller index") {
  Vector v(4);
  v << 1.0, 3.0, 3.0, 2.0;
  CHECK(argmax(v) == 1);
  CHECK(argmax(Vector::Zero(3)) == 0);
}

TEST_CASE("softmax rows sum to one even for large logits") {
  std::mt19937_64 rng(5);
  const Matrix Z = oracle::random_matrix(rng, 20, 7, 300.0);
  const Matrix P = softmax_rows(Z);
  for (Eigen::Index r = 0; r < P.rows(); ++r) CHECK(std::abs(P.row(r).sum() - 1.0) <= 1e-12);
  CHECK(P.allFinite());
}

TEST_CASE("fraction_count floors without representation error") {
  CHECK(fraction_count(0.15, 100) == 15);
  CHECK(fraction_count(0.15, 85) == 12);
  CHECK(fraction_count(0.15, 73) == 10);
  CHECK(fraction_count(0.29, 100) == 29);
  CHECK(fraction_count(0.15, 6) == 0);
  CHECK(fraction_count(0.0, 1000) == 0);
}

TEST_CASE("squared_distance overloads agree") {
  std::mt19937_64 rng(8);
  const RowMatrix X = oracle::random_matrix(rng, 2, 33);
  const double a = squared_distance(X.row(0).data(), X.row(1).data(), 33);
  const double b = squared_distance(X.row(0), X.row(1));
  CHECK(a == b);
  CHECK(a == doctest::Approx((X.row(0) - X.row(1)).squaredNorm()).epsilon(1e-12));
}

TEST_CASE("dataset helpers select by split and level") {
  auto ds = fixtures::tiny_dataset();
  ds.images[1].split = Split::test;
  ds.patches[1].level = Level::top;
  CHECK(ds.patch_ids(Split::train, Level::bottom) == std::vector<Index>{0});
  CHECK(ds.patch_ids(Split::train, Level::top) == std::vector<Index>{1});
  CHECK(ds.patch_ids(Split::test, Level::bottom) == std::vector<Index>{2, 3});
  CHECK(ds.image_ids(Split::test) == std::vector<Index>{1});
  CHECK(ds.label_of_patch(3) == 1);
  const RowMatrix F = ds.features({2, 0});
  CHECK(F.row(0).transpose() == ds.patches[2].feature);
  CHECK(F.row(1).transpose() == ds.patches[0].feature);
}
