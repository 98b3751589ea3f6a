#include "metaobj/ocsvm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace metaobj {

void KernelSpec::validate() const {
  if (kind == Kind::rbf && !(std::isfinite(gamma) && gamma > 0.0))
    throw ConfigError("rbf kernel requires a finite gamma > 0");
}

double KernelSpec::operator()(const double* a, const double* b, std::size_t d) const {
  if (kind == Kind::linear) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += a[k] * b[k];
    return s;
  }
  return std::exp(-gamma * squared_distance(a, b, d));
}

double median_heuristic_gamma(const RowMatrix& X) {
  std::vector<double> dists;
  const auto n = X.rows();
  dists.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) dists.push_back(squared_distance(X.row(i), X.row(j)));
  if (dists.empty()) throw ConfigError("median heuristic needs at least 2 points");
  const auto mid = dists.begin() + static_cast<std::ptrdiff_t>(dists.size() / 2);
  std::nth_element(dists.begin(), mid, dists.end());
  if (!(*mid > 0.0)) throw ConfigError("median heuristic: median pairwise distance is zero");
  return 1.0 / *mid;
}

RowMatrix kernel_matrix(const KernelSpec& kernel, const RowMatrix& A, const RowMatrix& B) {
  if (kernel.kind == KernelSpec::Kind::linear) return A * B.transpose();
  RowMatrix K(A.rows(), B.rows());
  const auto d = static_cast<std::size_t>(A.cols());
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = 0; j < B.rows(); ++j) K(i, j) = kernel(A.row(i).data(), B.row(j).data(), d);
  return K;
}

namespace {

struct NonPsdCurvature {};

DualSolution run_smo(const Matrix& Q, double nu, const OcsvmOptions& options) {
  const auto l = Q.rows();
  const double C = 1.0 / (nu * static_cast<double>(l));
  DualSolution sol;
  // Uniform start: feasible because 1/l <= C, and symmetric for duplicate rows.
  sol.alpha = Vector::Constant(l, 1.0 / static_cast<double>(l));
  sol.gradient = Q * sol.alpha;

  const double max_diag = std::max(1.0, Q.diagonal().cwiseAbs().maxCoeff());
  constexpr double kTau = 1e-12;
  Vector& alpha = sol.alpha;
  Vector& G = sol.gradient;

  for (sol.iterations = 0; sol.iterations < options.max_iterations; ++sol.iterations) {
    Eigen::Index i = -1;
    double g_min = std::numeric_limits<double>::infinity();
    double g_max = -std::numeric_limits<double>::infinity();
    for (Eigen::Index t = 0; t < l; ++t) {
      if (alpha(t) < C && G(t) < g_min) {
        g_min = G(t);
        i = t;
      }
      if (alpha(t) > 0.0) g_max = std::max(g_max, G(t));
    }
    sol.kkt_violation = i < 0 ? 0.0 : std::max(0.0, g_max - g_min);
    if (i < 0 || g_max - g_min < options.tolerance) {
      sol.converged = true;
      break;
    }

    Eigen::Index j = -1;
    double best_gain = -1.0;
    for (Eigen::Index t = 0; t < l; ++t) {
      if (!(alpha(t) > 0.0) || !(G(t) > g_min)) continue;
      const double b = G(t) - g_min;
      double a = Q(i, i) + Q(t, t) - 2.0 * Q(i, t);
      if (a < -1e-8 * max_diag) throw NonPsdCurvature{};
      if (a <= 0.0) a = kTau;
      const double gain = b * b / a;
      if (gain > best_gain) {
        best_gain = gain;
        j = t;
      }
    }
    if (j < 0) {
      sol.converged = true;
      break;
    }

    double a = Q(i, i) + Q(j, j) - 2.0 * Q(i, j);
    if (a <= 0.0) a = kTau;
    const double room_i = C - alpha(i);
    const double room_j = alpha(j);
    double delta = (G(j) - G(i)) / a;
    if (delta >= room_i || delta >= room_j) {
      if (room_i <= room_j) {
        delta = room_i;
        alpha(i) = C;
        alpha(j) -= delta;
        if (room_i == room_j) alpha(j) = 0.0;
      } else {
        delta = room_j;
        alpha(j) = 0.0;
        alpha(i) += delta;
      }
    } else {
      alpha(i) += delta;
      alpha(j) -= delta;
    }
    G.noalias() += delta * (Q.col(i) - Q.col(j));
  }

  G = Q * alpha;
  sol.objective = 0.5 * alpha.dot(G);

  // rho: mean gradient over free variables; midpoint of the feasible
  // interval when every variable sits at a bound.
  double free_sum = 0.0;
  int free_count = 0;
  double lower = -std::numeric_limits<double>::infinity();
  double upper = std::numeric_limits<double>::infinity();
  for (Eigen::Index t = 0; t < l; ++t) {
    if (alpha(t) > 0.0 && alpha(t) < C) {
      free_sum += G(t);
      ++free_count;
    } else if (alpha(t) >= C) {
      lower = std::max(lower, G(t));
    } else {
      upper = std::min(upper, G(t));
    }
  }
  if (free_count > 0)
    sol.rho = free_sum / free_count;
  else if (std::isfinite(lower) && std::isfinite(upper))
    sol.rho = 0.5 * (lower + upper);
  else
    sol.rho = std::isfinite(lower) ? lower : upper;
  return sol;
}

}  // namespace

DualSolution solve_ocsvm_dual(const Matrix& Q, double nu, const OcsvmOptions& options) {
  const auto l = Q.rows();
  if (Q.cols() != l) throw ValidationError("solve_ocsvm_dual: Gram matrix must be square");
  if (l < 2) throw ConfigError("one-class SVM needs at least 2 training points");
  if (!(nu > 0.0 && nu <= 1.0)) throw ConfigError("nu must lie in (0, 1]");
  if (nu * static_cast<double>(l) < 1.0 - 1e-12)
    throw ConfigError("nu * l < 1: box constraint cannot reach sum(alpha) = 1");
  try {
    return run_smo(Q, nu, options);
  } catch (const NonPsdCurvature&) {
  }
  Matrix jittered = Q;
  jittered.diagonal().array() += 1e-10;
  try {
    auto sol = run_smo(jittered, nu, options);
    sol.jittered = true;
    return sol;
  } catch (const NonPsdCurvature&) {
    throw NumericalError("one-class SVM: kernel matrix is not positive semi-definite beyond jitter tolerance");
  }
}

OcsvmModel train_ocsvm(const RowMatrix& features, double nu, const KernelSpec& kernel, const OcsvmOptions& options) {
  kernel.validate();
  if (!features.allFinite()) throw ValidationError("train_ocsvm: non-finite features");
  const Matrix Q = kernel_matrix(kernel, features, features);
  const DualSolution sol = solve_ocsvm_dual(Q, nu, options);

  OcsvmModel model;
  model.kernel = kernel;
  model.nu = nu;
  model.training_size = static_cast<Index>(features.rows());
  model.rho = sol.rho;
  model.dual_objective = sol.objective;
  model.kkt_violation = sol.kkt_violation;
  model.iterations = sol.iterations;
  model.converged = sol.converged;
  for (Eigen::Index t = 0; t < sol.alpha.size(); ++t)
    if (sol.alpha(t) > 0.0) model.support_ids.push_back(static_cast<Index>(t));
  const auto ns = static_cast<Eigen::Index>(model.support_ids.size());
  model.support_vectors.resize(ns, features.cols());
  model.alphas.resize(ns);
  for (Eigen::Index s = 0; s < ns; ++s) {
    const auto t = static_cast<Eigen::Index>(model.support_ids[static_cast<std::size_t>(s)]);
    model.support_vectors.row(s) = features.row(t);
    model.alphas(s) = sol.alpha(t);
  }
  return model;
}

double decision_value(const OcsvmModel& model, const Vector& x) {
  if (x.size() != model.support_vectors.cols())
    throw ValidationError("decision_value: dimension mismatch (" + std::to_string(x.size()) + " vs " +
                          std::to_string(model.support_vectors.cols()) + ")");
  const auto d = static_cast<std::size_t>(x.size());
  double s = 0.0;
  for (Eigen::Index t = 0; t < model.alphas.size(); ++t)
    s += model.alphas(t) * model.kernel(model.support_vectors.row(t).data(), x.data(), d);
  return s - model.rho;
}

Vector decision_values(const OcsvmModel& model, const RowMatrix& X) {
  if (X.cols() != model.support_vectors.cols()) throw ValidationError("decision_values: dimension mismatch");
  return kernel_matrix(model.kernel, X, model.support_vectors) * model.alphas - Vector::Constant(X.rows(), model.rho);
}

void OcsvmModel::to_payload(CachePayload& payload, const std::string& prefix) const {
  payload.reals[prefix + "alphas"] = alphas;
  payload.set_indices(prefix + "support_ids", support_ids);
  Matrix meta(1, 5);
  meta << rho, static_cast<double>(kernel.kind), kernel.gamma, nu, static_cast<double>(training_size);
  payload.reals[prefix + "meta"] = meta;
}

OcsvmModel OcsvmModel::from_payload(const CachePayload& payload, const std::string& prefix) {
  OcsvmModel m;
  m.alphas = payload.real(prefix + "alphas");
  m.support_ids = payload.indices(prefix + "support_ids");
  const Matrix& meta = payload.real(prefix + "meta");
  m.rho = meta(0, 0);
  m.kernel.kind = static_cast<KernelSpec::Kind>(static_cast<int>(meta(0, 1)));
  m.kernel.gamma = meta(0, 2);
  m.nu = meta(0, 3);
  m.training_size = static_cast<Index>(meta(0, 4));
  return m;
}

CascadeResult cascade_screen(const std::vector<Index>& ids, const RowMatrix& features, const CascadeOptions& options) {
  if (options.stages < 1) throw ConfigError("cascade: stages must be >= 1");
  if (!(options.per_stage_fraction > 0.0 && options.per_stage_fraction < 1.0))
    throw ConfigError("cascade: per_stage_fraction must lie in (0, 1)");
  if (static_cast<Eigen::Index>(ids.size()) != features.rows())
    throw ValidationError("cascade: ids and feature rows disagree");

  CascadeResult result;
  // Positions into `features` of the current survivors, ordered by patch id.
  std::vector<std::size_t> alive(ids.size());
  std::iota(alive.begin(), alive.end(), std::size_t{0});
  std::sort(alive.begin(), alive.end(), [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });

  for (int stage = 0; stage < options.stages; ++stage) {
    if (alive.size() < 2) {
      result.stopped_early = true;
      break;
    }
    const std::size_t remove = fraction_count(options.per_stage_fraction, alive.size());
    if (remove == 0) {
      result.noop_stages.push_back(stage);
      result.removed_per_stage.emplace_back();
      continue;
    }
    RowMatrix X(static_cast<Eigen::Index>(alive.size()), features.cols());
    for (std::size_t r = 0; r < alive.size(); ++r)
      X.row(static_cast<Eigen::Index>(r)) = features.row(static_cast<Eigen::Index>(alive[r]));
    // Small categories cannot honour nu * l >= 1; raise nu to the feasible minimum.
    const double nu = std::max(options.nu, 1.0 / static_cast<double>(alive.size()));
    OcsvmModel model = train_ocsvm(X, nu, options.kernel, options.solver);
    const Vector scores = decision_values(model, X);
    for (auto& sid : model.support_ids) sid = ids[alive[sid]];

    std::vector<std::size_t> order(alive.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const double sa = scores(static_cast<Eigen::Index>(a));
      const double sb = scores(static_cast<Eigen::Index>(b));
      if (sa != sb) return sa < sb;
      return ids[alive[a]] < ids[alive[b]];
    });
    std::vector<bool> drop(alive.size(), false);
    std::vector<Index> removed;
    for (std::size_t r = 0; r < remove; ++r) {
      drop[order[r]] = true;
      removed.push_back(ids[alive[order[r]]]);
    }
    std::sort(removed.begin(), removed.end());
    std::vector<std::size_t> next;
    for (std::size_t r = 0; r < alive.size(); ++r)
      if (!drop[r]) next.push_back(alive[r]);
    alive = std::move(next);
    result.removed_per_stage.push_back(std::move(removed));
    result.models.push_back(std::move(model));
  }
  for (auto pos : alive) result.kept.push_back(ids[pos]);
  std::sort(result.kept.begin(), result.kept.end());
  return result;
}

}  // namespace metaobj
