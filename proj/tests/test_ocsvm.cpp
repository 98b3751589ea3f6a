#include <doctest.h>

#include <numeric>
#include <random>
#include <set>

#include "metaobj/ocsvm.hpp"
#include "oracles.hpp"

using namespace metaobj;

namespace {

void check_feasible(const OcsvmModel& m) {
  const double C = m.upper_bound();
  double sum = 0.0;
  for (Eigen::Index i = 0; i < m.alphas.size(); ++i) {
    CHECK(m.alphas(i) >= 0.0);
    CHECK(m.alphas(i) <= C);
    sum += m.alphas(i);
  }
  CHECK(std::abs(sum - 1.0) <= 1e-12);
}

std::vector<Index> iota_ids(std::size_t n, Index start = 0) {
  std::vector<Index> ids(n);
  std::iota(ids.begin(), ids.end(), start);
  return ids;
}

}  // namespace

TEST_CASE("two identical points share the mass equally") {
  RowMatrix X(2, 3);
  X << 1, 0, 0, 1, 0, 0;
  const OcsvmModel m = train_ocsvm(X, 0.5, KernelSpec::linear());
  REQUIRE(m.alphas.size() == 2);
  CHECK(m.alphas(0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(m.alphas(1) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(std::abs(decision_value(m, X.row(0).transpose())) <= 1e-9);
}

TEST_CASE("symmetric 1-D pair with nu = 1") {
  RowMatrix X(2, 1);
  X << -1, 1;
  const OcsvmModel m = train_ocsvm(X, 1.0, KernelSpec::linear());
  CHECK(m.alphas(0) == doctest::Approx(0.5));
  CHECK(m.alphas(1) == doctest::Approx(0.5));
  for (double x : {0.1, 0.7, 2.0, 13.0}) {
    Vector a(1), b(1);
    a << x;
    b << -x;
    const double fa = decision_value(m, a), fb = decision_value(m, b);
    CHECK(std::abs(fa - fb) <= 1e-9);
  }
}

TEST_CASE("rbf dual objective matches the reference QP") {
  std::mt19937_64 rng(2024);
  const RowMatrix X = oracle::random_matrix(rng, 50, 2);
  const KernelSpec k = KernelSpec::rbf(1.0);
  const OcsvmModel m = train_ocsvm(X, 0.2, k);
  const Matrix Q = kernel_matrix(k, X, X);
  const Vector ref = oracle::reference_qp(Q, 1.0 / (0.2 * 50));
  const double f_ref = oracle::qp_objective(Q, ref);
  CHECK(std::abs(m.dual_objective - f_ref) <= 1e-4 * std::abs(f_ref));
  CHECK(m.dual_objective <= f_ref + 1e-12);
  check_feasible(m);
}

TEST_CASE("dual feasibility holds on random problems") {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> size(2, 200);
  std::uniform_real_distribution<double> nu_dist(0.05, 1.0);
  for (int trial = 0; trial < 40; ++trial) {
    const int l = size(rng);
    const double nu = std::max(nu_dist(rng), 1.0 / l);
    const int d = 1 + trial % 9;
    const RowMatrix X = oracle::random_matrix(rng, l, d);
    const KernelSpec k = trial % 2 == 0 ? KernelSpec::linear() : KernelSpec::rbf(0.5);
    const OcsvmModel m = train_ocsvm(X, nu, k);
    CHECK(m.converged);
    check_feasible(m);
    // Free support vectors sit on the margin.
    for (Eigen::Index i = 0; i < m.alphas.size(); ++i) {
      const double a = m.alphas(i);
      if (a > 1e-12 && a < m.upper_bound() - 1e-12)
        CHECK(std::abs(decision_value(m, m.support_vectors.row(i).transpose())) <= 1e-6);
    }
  }
}

TEST_CASE("nu bounds the outlier and support-vector fractions") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    const int l = 50 + 10 * trial;
    const double nu = 0.1 + 0.04 * trial;
    const RowMatrix X = oracle::random_matrix(rng, l, 2 + trial % 6);
    const KernelSpec k = trial % 2 == 0 ? KernelSpec::linear() : KernelSpec::rbf(1.0);
    const OcsvmModel m = train_ocsvm(X, nu, k);
    const Vector f = decision_values(m, X);
    const double outliers = static_cast<double>((f.array() < -1e-6).count()) / l;
    const double svs = static_cast<double>((m.alphas.array() > 0.0).count()) / l;
    CHECK(outliers <= nu + 1.0 / l);
    CHECK(svs >= nu - 1.0 / l);
  }
}

TEST_CASE("decision value is positive at the center of a single cluster") {
  std::mt19937_64 rng(4);
  RowMatrix X = oracle::random_matrix(rng, 60, 3, 0.1);
  X.rowwise() += Eigen::RowVector3d(1.0, 2.0, -1.0);
  for (const KernelSpec& k : {KernelSpec::linear(), KernelSpec::rbf(1.0)}) {
    const OcsvmModel m = train_ocsvm(X, 0.2, k);
    CHECK(decision_value(m, X.colwise().mean().transpose()) > 0.0);
  }
}

TEST_CASE("far from the data an rbf model scores minus rho") {
  std::mt19937_64 rng(6);
  const RowMatrix X = oracle::random_matrix(rng, 40, 2);
  const OcsvmModel m = train_ocsvm(X, 0.3, KernelSpec::rbf(1.0));
  const double radius = X.rowwise().norm().maxCoeff();
  Vector far(2);
  far << 100.0 * radius, -100.0 * radius;
  CHECK(std::abs(decision_value(m, far) + m.rho) <= 1e-6);
}

TEST_CASE("training rejects infeasible or malformed input") {
  std::mt19937_64 rng(1);
  const RowMatrix X = oracle::random_matrix(rng, 10, 2);
  CHECK_THROWS_AS(train_ocsvm(X, 0.05, KernelSpec::linear()), ConfigError);  // nu * l < 1
  CHECK_THROWS_AS(train_ocsvm(X, 0.0, KernelSpec::linear()), ConfigError);
  CHECK_THROWS_AS(train_ocsvm(X, 1.5, KernelSpec::linear()), ConfigError);
  CHECK_THROWS_AS(train_ocsvm(X.topRows(1), 1.0, KernelSpec::linear()), ConfigError);
  CHECK_THROWS_AS(train_ocsvm(X, 0.5, KernelSpec::rbf(-1.0)), ConfigError);
  const OcsvmModel m = train_ocsvm(X, 0.5, KernelSpec::linear());
  CHECK_THROWS_AS(decision_value(m, Vector::Zero(3)), ValidationError);
}

TEST_CASE("solver handles a rank-deficient Gram matrix") {
  // All points on a line through the origin: Q has rank one.
  RowMatrix X(30, 3);
  for (int i = 0; i < 30; ++i) X.row(i) = (0.1 * (i - 15)) * Eigen::RowVector3d(1.0, -2.0, 0.5);
  const OcsvmModel m = train_ocsvm(X, 0.3, KernelSpec::linear());
  check_feasible(m);
  const Matrix Q = kernel_matrix(KernelSpec::linear(), X, X);
  const double f_ref = oracle::qp_objective(Q, oracle::reference_qp(Q, m.upper_bound()));
  CHECK(m.dual_objective <= f_ref + 1e-8);
}

TEST_CASE("median heuristic is the inverse median squared distance") {
  RowMatrix X(3, 1);
  X << 0, 1, 3;  // squared distances 1, 9, 4
  CHECK(median_heuristic_gamma(X) == doctest::Approx(0.25));
}

TEST_CASE("model payload round-trip preserves scores") {
  std::mt19937_64 rng(12);
  const RowMatrix X = oracle::random_matrix(rng, 30, 4);
  const OcsvmModel m = train_ocsvm(X, 0.25, KernelSpec::rbf(0.7));
  CachePayload p;
  m.to_payload(p, "m.");
  // Support vectors are restored by the caller from support_ids.
  OcsvmModel back = OcsvmModel::from_payload(p, "m.");
  CHECK(back.support_ids == m.support_ids);
  back.support_vectors.resize(static_cast<Eigen::Index>(back.support_ids.size()), X.cols());
  for (std::size_t s = 0; s < back.support_ids.size(); ++s)
    back.support_vectors.row(static_cast<Eigen::Index>(s)) = X.row(static_cast<Eigen::Index>(back.support_ids[s]));
  CHECK((decision_values(back, X) - decision_values(m, X)).cwiseAbs().maxCoeff() <= 1e-12);
}

// ---------------------------------------------------------------------------
// Cascade

TEST_CASE("cascade removes 15, 12 and 10 of 100 patches") {
  std::mt19937_64 rng(31);
  const RowMatrix X = oracle::random_unit_rows(rng, 100, 8);
  const auto ids = iota_ids(100, 1000);
  const CascadeResult r = cascade_screen(ids, X, CascadeOptions{});
  REQUIRE(r.removed_per_stage.size() == 3);
  CHECK(r.removed_per_stage[0].size() == 15);
  CHECK(r.removed_per_stage[1].size() == 12);
  CHECK(r.removed_per_stage[2].size() == 10);
  CHECK(r.kept.size() == 63);
  CHECK(std::is_sorted(r.kept.begin(), r.kept.end()));
  CHECK(r.models.size() == 3);
  CHECK_FALSE(r.stopped_early);
}

TEST_CASE("cascade partitions its input and nests the kept sets") {
  std::mt19937_64 rng(32);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 20 + 17 * trial;
    const RowMatrix X = oracle::random_unit_rows(rng, n, 5);
    std::vector<Index> ids = iota_ids(static_cast<std::size_t>(n));
    std::shuffle(ids.begin(), ids.end(), rng);
    CascadeOptions opt;
    opt.stages = 4;
    opt.per_stage_fraction = 0.2;
    const CascadeResult r = cascade_screen(ids, X, opt);
    std::multiset<Index> all(r.kept.begin(), r.kept.end());
    std::set<Index> alive(ids.begin(), ids.end());
    for (const auto& stage : r.removed_per_stage) {
      CHECK_FALSE(stage.empty());
      for (Index id : stage) {
        CHECK(alive.count(id) == 1);  // removed ids come from the previous kept set
        alive.erase(id);
        all.insert(id);
      }
    }
    CHECK(all == std::multiset<Index>(ids.begin(), ids.end()));
    CHECK(alive == std::set<Index>(r.kept.begin(), r.kept.end()));
  }
}

TEST_CASE("cascade stage with nothing to remove is flagged") {
  std::mt19937_64 rng(5);
  const RowMatrix X = oracle::random_unit_rows(rng, 6, 3);
  CascadeOptions opt;
  opt.per_stage_fraction = 0.1;  // floor(0.6) = 0
  const CascadeResult r = cascade_screen(iota_ids(6), X, opt);
  CHECK(r.noop_stages == std::vector<int>{0, 1, 2});
  CHECK(r.kept.size() == 6);
}

TEST_CASE("cascade stops early when fewer than two patches remain") {
  RowMatrix X(3, 2);
  X << 1, 0, 0, 1, 0.6, 0.8;
  CascadeOptions opt;
  opt.per_stage_fraction = 0.5;
  opt.stages = 5;
  const CascadeResult r = cascade_screen(iota_ids(3), X, opt);
  CHECK(r.stopped_early);
  CHECK(r.kept.size() == 1);
}

TEST_CASE("cascade breaks score ties toward the smaller patch id") {
  // Four copies of one point plus two copies of a distant one: duplicate rows
  // score identically, so the removal order is decided by patch id alone.
  RowMatrix X(6, 2);
  X << 1, 0, 1, 0, 1, 0, 1, 0, 0, 1, 0, 1;
  CascadeOptions opt;
  opt.stages = 1;
  opt.per_stage_fraction = 0.2;  // removes 1
  opt.nu = 0.5;
  const std::vector<Index> ids = {50, 40, 30, 20, 11, 10};
  const CascadeResult r = cascade_screen(ids, X, opt);
  REQUIRE(r.removed_per_stage[0].size() == 1);
  const Index removed = r.removed_per_stage[0][0];
  CHECK((removed == 10 || removed == 20));
}

TEST_CASE("cascade removes most planted outliers") {
  std::mt19937_64 rng(77);
  const int n = 200, d = 16;
  const RowMatrix blob_center = oracle::random_unit_rows(rng, 1, d);
  RowMatrix X(n, d);
  std::vector<bool> outlier(n, false);
  std::normal_distribution<double> normal(0.0, 0.05);
  for (int i = 0; i < n; ++i) {
    if (i % 10 == 0) {
      X.row(i) = oracle::random_unit_rows(rng, 1, d);
      outlier[static_cast<std::size_t>(i)] = true;
    } else {
      for (int k = 0; k < d; ++k) X(i, k) = blob_center(0, k) + normal(rng);
      X.row(i).normalize();
    }
  }
  const CascadeResult r = cascade_screen(iota_ids(n), X, CascadeOptions{});
  int removed_outliers = 0;
  for (const auto& stage : r.removed_per_stage)
    for (Index id : stage) removed_outliers += outlier[id] ? 1 : 0;
  CHECK(removed_outliers >= 16);  // 80% of 20
}
