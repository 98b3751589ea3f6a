#pragma once

// Independent reference implementations used as test oracles. They favour
// the most direct reading of each definition over speed.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <tuple>
#include <vector>

#include "metaobj/core.hpp"
#include "metaobj/pooling.hpp"
#include "metaobj/rim.hpp"
#include "metaobj/screening.hpp"

namespace oracle {

using metaobj::Matrix;
using metaobj::RowMatrix;
using metaobj::Vector;

inline RowMatrix random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  RowMatrix X(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) X(i, j) = normal(rng);
  return X;
}

inline RowMatrix random_unit_rows(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  RowMatrix X = random_matrix(rng, rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) X.row(i).normalize();
  return X;
}

// ---------------------------------------------------------------------------
// Quadratic program min 0.5 a'Qa on {0 <= a_i <= C, sum a = 1}.

// Euclidean projection onto the capped simplex by bisection on the shift.
inline Vector project_capped_simplex(const Vector& v, double C) {
  double lo = v.minCoeff() - C - 1.0, hi = v.maxCoeff() + 1.0;
  auto mass = [&](double tau) { return (v.array() - tau).max(0.0).min(C).sum(); };
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mass(mid) > 1.0)
      lo = mid;
    else
      hi = mid;
  }
  return (v.array() - 0.5 * (lo + hi)).max(0.0).min(C).matrix();
}

// Accelerated projected gradient; returns the minimizer.
inline Vector reference_qp(const Matrix& Q, double C, int iterations = 20000) {
  const auto l = Q.rows();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(Q, Eigen::EigenvaluesOnly);
  const double L = std::max(eig.eigenvalues().maxCoeff(), 1e-12);
  Vector x = project_capped_simplex(Vector::Constant(l, 1.0 / static_cast<double>(l)), C);
  Vector y = x;
  double t = 1.0;
  for (int it = 0; it < iterations; ++it) {
    const Vector next = project_capped_simplex(y - Q * y / L, C);
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    y = next + ((t - 1.0) / t_next) * (next - x);
    x = next;
    t = t_next;
  }
  return x;
}

inline double qp_objective(const Matrix& Q, const Vector& a) { return 0.5 * a.dot(Q * a); }

// ---------------------------------------------------------------------------
// Exhaustive neighbour counting: full sort of every cross-image candidate.

inline std::vector<int> brute_force_same_label_counts(const metaobj::ScreeningInput& in, int K) {
  const std::size_t n = in.size();
  const auto d = static_cast<std::size_t>(in.features.cols());
  std::vector<int> counts(n, 0);
  for (std::size_t q = 0; q < n; ++q) {
    std::vector<std::tuple<double, metaobj::Index, int>> cand;
    for (std::size_t r = 0; r < n; ++r) {
      if (in.image_ids[r] == in.image_ids[q]) continue;
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = in.features(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(k)) -
                            in.features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k));
        s += diff * diff;
      }
      cand.emplace_back(s, in.patch_ids[r], in.labels[r]);
    }
    std::sort(cand.begin(), cand.end());
    for (int k = 0; k < K && k < static_cast<int>(cand.size()); ++k)
      if (std::get<2>(cand[static_cast<std::size_t>(k)]) == in.labels[q]) ++counts[q];
  }
  return counts;
}

// ---------------------------------------------------------------------------
// Adaptive three-level pyramid, computed region by region: each region's
// cell path is determined by the split points of the cells it falls in.

inline Vector reference_spm_counts(const std::vector<metaobj::SpmRegion>& regions, int N) {
  Vector out = Vector::Zero(21 * N);
  std::vector<const metaobj::SpmRegion*> live;
  for (const auto& r : regions)
    if (r.label != 0) live.push_back(&r);
  if (live.empty()) return out;
  auto mean_of = [](const std::vector<const metaobj::SpmRegion*>& rs) {
    double x = 0.0, y = 0.0;
    for (auto* r : rs) {
      x += r->cx;
      y += r->cy;
    }
    return std::pair<double, double>(x / static_cast<double>(rs.size()), y / static_cast<double>(rs.size()));
  };
  auto quadrant = [](const metaobj::SpmRegion* r, std::pair<double, double> s) {
    int q = 0;
    if (r->cx > s.first) q += 1;
    if (r->cy > s.second) q += 2;
    return q;
  };
  const auto s0 = mean_of(live);
  std::map<int, std::vector<const metaobj::SpmRegion*>> level1;
  for (auto* r : live) level1[quadrant(r, s0)].push_back(r);
  for (auto* r : live) {
    const int q1 = quadrant(r, s0);
    const int q2 = quadrant(r, mean_of(level1[q1]));
    out(0 * N + r->label - 1) += 1.0;
    out((1 + q1) * N + r->label - 1) += 1.0;
    out((5 + 4 * q1 + q2) * N + r->label - 1) += 1.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// VLAD with element-wise loops.

inline Vector reference_vlad(const RowMatrix& regions, const metaobj::VladCodebook& book,
                             const metaobj::PcaModel& pca) {
  const int N = book.size();
  const int d = book.dim();
  std::vector<std::vector<double>> sums(static_cast<std::size_t>(N), std::vector<double>(static_cast<std::size_t>(d), 0.0));
  for (Eigen::Index r = 0; r < regions.rows(); ++r) {
    int best = -1;
    double best_dist = 0.0;
    for (int c = 0; c < N; ++c) {
      if (!book.active[static_cast<std::size_t>(c)]) continue;
      double dist = 0.0;
      for (int k = 0; k < d; ++k) {
        const double diff = regions(r, k) - book.centers(c, k);
        dist += diff * diff;
      }
      if (best < 0 || dist < best_dist) {
        best = c;
        best_dist = dist;
      }
    }
    if (best < 0) continue;
    for (int k = 0; k < d; ++k) sums[static_cast<std::size_t>(best)][static_cast<std::size_t>(k)] += regions(r, k) - book.centers(best, k);
  }
  std::vector<double> out;
  for (int c = 0; c < N; ++c) {
    const Matrix& P = pca.clusters[static_cast<std::size_t>(c)].projection;
    for (Eigen::Index j = 0; j < P.rows(); ++j) {
      double v = 0.0;
      for (int k = 0; k < d; ++k) v += P(j, k) * sums[static_cast<std::size_t>(c)][static_cast<std::size_t>(k)];
      out.push_back(v);
    }
  }
  double norm2 = 0.0;
  for (double& v : out) {
    v = v < 0.0 ? -std::sqrt(-v) : std::sqrt(v);
    norm2 += v * v;
  }
  Vector result(static_cast<Eigen::Index>(out.size()));
  for (std::size_t i = 0; i < out.size(); ++i) result(static_cast<Eigen::Index>(i)) = norm2 > 0.0 ? out[i] / std::sqrt(norm2) : 0.0;
  return result;
}

// ---------------------------------------------------------------------------
// Information-maximization objective straight from its definition.

inline double reference_rim_objective(const Matrix& W, const Vector& b, double lambda, const RowMatrix& X) {
  const auto n = X.rows();
  const auto N = W.rows();
  std::vector<double> pbar(static_cast<std::size_t>(N), 0.0);
  double cond = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<double> z(static_cast<std::size_t>(N));
    double zmax = -1e300;
    for (Eigen::Index c = 0; c < N; ++c) {
      double s = b(c);
      for (Eigen::Index k = 0; k < X.cols(); ++k) s += W(c, k) * X(i, k);
      z[static_cast<std::size_t>(c)] = s;
      zmax = std::max(zmax, s);
    }
    double total = 0.0;
    for (double& v : z) {
      v = std::exp(v - zmax);
      total += v;
    }
    for (Eigen::Index c = 0; c < N; ++c) {
      const double p = z[static_cast<std::size_t>(c)] / total;
      pbar[static_cast<std::size_t>(c)] += p / static_cast<double>(n);
      if (p > 0.0) cond -= p * std::log(p) / static_cast<double>(n);
    }
  }
  double marginal = 0.0;
  for (double p : pbar)
    if (p > 0.0) marginal -= p * std::log(p);
  double reg = 0.0;
  for (Eigen::Index c = 0; c < N; ++c)
    for (Eigen::Index k = 0; k < W.cols(); ++k) reg += W(c, k) * W(c, k);
  return marginal - cond - lambda * reg;
}

// ---------------------------------------------------------------------------

inline Vector central_differences(const std::function<double(const Vector&)>& f, const Vector& x, double h = 1e-5) {
  Vector g(x.size());
  Vector probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe(i) = x(i) + h;
    const double up = f(probe);
    probe(i) = x(i) - h;
    const double down = f(probe);
    probe(i) = x(i);
    g(i) = (up - down) / (2.0 * h);
  }
  return g;
}

// Largest per-coordinate relative error, with an absolute floor for tiny entries.
inline double max_relative_error(const Vector& analytic, const Vector& numeric, double floor = 1e-6) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < analytic.size(); ++i) {
    const double scale = std::max({std::abs(analytic(i)), std::abs(numeric(i)), floor});
    worst = std::max(worst, std::abs(analytic(i) - numeric(i)) / scale);
  }
  return worst;
}

// Fraction of points whose cluster's majority truth label matches their own.
inline double purity(const std::vector<int>& clusters, const std::vector<int>& truth) {
  std::map<int, std::map<int, int>> table;
  for (std::size_t i = 0; i < clusters.size(); ++i) ++table[clusters[i]][truth[i]];
  int hit = 0;
  for (const auto& [c, row] : table) {
    int best = 0;
    for (const auto& [t, count] : row) best = std::max(best, count);
    hit += best;
  }
  return clusters.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(clusters.size());
}

// Planted isotropic blobs around random unit centers; rows are unit-normalized.
struct Blobs {
  RowMatrix X;
  std::vector<int> truth;
  RowMatrix centers;
};

inline Blobs planted_blobs(std::uint64_t seed, int clusters, int per_cluster, int d, double sigma) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Blobs b;
  b.centers = random_unit_rows(rng, clusters, d);
  b.X.resize(clusters * per_cluster, d);
  for (int i = 0; i < per_cluster; ++i)
    for (int c = 0; c < clusters; ++c) {
      const Eigen::Index r = static_cast<Eigen::Index>(b.truth.size());
      for (int k = 0; k < d; ++k) b.X(r, k) = b.centers(c, k) + sigma * normal(rng);
      b.X.row(r).normalize();
      b.truth.push_back(c);
    }
  return b;
}

}  // namespace oracle
