#include "metaobj/rim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace metaobj {

namespace {

// Log-softmax of the model logits, one row per sample.
Matrix log_probabilities(const RimModel& model, const RowMatrix& X) {
  Matrix Z = X * model.weights.transpose();
  Z.rowwise() += model.biases.transpose();
  for (Eigen::Index r = 0; r < Z.rows(); ++r) {
    const double m = Z.row(r).maxCoeff();
    const double lse = m + std::log((Z.row(r).array() - m).exp().sum());
    Z.row(r).array() -= lse;
  }
  return Z;
}

void check_dims(const RimModel& model, const RowMatrix& X) {
  if (X.rows() == 0) throw ValidationError("rim: empty feature matrix");
  if (X.cols() != model.weights.cols())
    throw ValidationError("rim: feature dimension " + std::to_string(X.cols()) + " does not match model dimension " +
                          std::to_string(model.weights.cols()));
}

}  // namespace

Matrix RimModel::predict_probabilities(const RowMatrix& X) const {
  check_dims(*this, X);
  return log_probabilities(*this, X).array().exp().matrix();
}

double rim_objective(const RimModel& model, const RowMatrix& X) {
  check_dims(model, X);
  const Matrix L = log_probabilities(model, X);
  const Matrix P = L.array().exp().matrix();
  const double n = static_cast<double>(X.rows());
  const Vector mean_p = P.colwise().sum().transpose() / n;
  double marginal_entropy = 0.0;
  for (Eigen::Index c = 0; c < mean_p.size(); ++c)
    if (mean_p(c) > 0.0) marginal_entropy -= mean_p(c) * std::log(mean_p(c));
  const double mean_conditional_entropy = -(P.array() * L.array()).sum() / n;
  return marginal_entropy - mean_conditional_entropy - model.lambda * model.weights.squaredNorm();
}

RimGradient rim_gradient(const RimModel& model, const RowMatrix& X) {
  check_dims(model, X);
  const Matrix L = log_probabilities(model, X);
  const Matrix P = L.array().exp().matrix();
  const double n = static_cast<double>(X.rows());
  const Vector log_mean_p = (P.colwise().sum().transpose() / n).array().log().matrix();

  // dF/dp_ic = (ln p_ic - ln pbar_c) / n, pushed through the softmax.
  Matrix G = L;
  G.rowwise() -= log_mean_p.transpose();
  G /= n;
  const Vector inner = (P.array() * G.array()).rowwise().sum().matrix();
  Matrix delta = G;
  delta.colwise() -= inner;
  delta.array() *= P.array();

  RimGradient grad;
  grad.weights = delta.transpose() * X - 2.0 * model.lambda * model.weights;
  grad.biases = delta.colwise().sum().transpose();
  return grad;
}

std::vector<int> kmeans_plus_plus_labels(const RowMatrix& X, int clusters, std::uint64_t seed, int iterations) {
  const auto n = X.rows();
  const auto d = static_cast<std::size_t>(X.cols());
  if (clusters < 1 || clusters > n) throw ConfigError("k-means++: need 1 <= clusters <= n");
  std::mt19937_64 rng(seed);

  RowMatrix centers(clusters, X.cols());
  std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
  centers.row(0) = X.row(first(rng));
  Vector nearest(n);
  for (Eigen::Index i = 0; i < n; ++i) nearest(i) = squared_distance(X.row(i).data(), centers.row(0).data(), d);
  for (int c = 1; c < clusters; ++c) {
    const double total = nearest.sum();
    Eigen::Index pick = 0;
    if (total > 0.0) {
      std::uniform_real_distribution<double> unif(0.0, total);
      double target = unif(rng);
      for (pick = 0; pick < n - 1; ++pick) {
        target -= nearest(pick);
        if (target < 0.0) break;
      }
    } else {
      pick = first(rng);
    }
    centers.row(c) = X.row(pick);
    for (Eigen::Index i = 0; i < n; ++i)
      nearest(i) = std::min(nearest(i), squared_distance(X.row(i).data(), centers.row(c).data(), d));
  }

  std::vector<int> labels(static_cast<std::size_t>(n), 0);
  for (int it = 0; it <= iterations; ++it) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int c = 0; c < clusters; ++c) {
        const double dist = squared_distance(X.row(i).data(), centers.row(c).data(), d);
        if (dist < best_d) {
          best_d = dist;
          best = c;
        }
      }
      auto& label = labels[static_cast<std::size_t>(i)];
      changed = changed || label != best;
      label = best;
    }
    if (it > 0 && !changed) break;
    if (it == iterations) break;
    RowMatrix sums = RowMatrix::Zero(clusters, X.cols());
    std::vector<int> counts(static_cast<std::size_t>(clusters), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(labels[static_cast<std::size_t>(i)]) += X.row(i);
      ++counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
    }
    for (int c = 0; c < clusters; ++c)
      if (counts[static_cast<std::size_t>(c)] > 0) centers.row(c) = sums.row(c) / counts[static_cast<std::size_t>(c)];
  }
  return labels;
}

RimModel fit_logits_to_labels(const RowMatrix& X, const std::vector<int>& labels, int clusters, double lambda) {
  const auto n = X.rows();
  const Vector mu = X.colwise().mean().transpose();
  Matrix Xc = X;
  Xc.rowwise() -= mu.transpose();
  Matrix Y = Matrix::Zero(n, clusters);
  for (Eigen::Index i = 0; i < n; ++i) Y(i, labels[static_cast<std::size_t>(i)]) = 1.0;
  const Vector y_mean = Y.colwise().mean().transpose();
  Y.rowwise() -= y_mean.transpose();

  Matrix A = Xc.transpose() * Xc / static_cast<double>(n);
  A.diagonal().array() += std::max(lambda, 1e-8);
  const Matrix Wt = A.ldlt().solve(Xc.transpose() * Y / static_cast<double>(n));

  RimModel model;
  model.lambda = lambda;
  model.weights = Wt.transpose();
  model.biases = y_mean - model.weights * mu;
  return model;
}

namespace {

RimModel scaled(const RimModel& m, double s) {
  RimModel out = m;
  out.weights *= s;
  out.biases *= s;
  return out;
}

RimModel step_along(const RimModel& m, const RimGradient& g, double t) {
  RimModel out = m;
  out.weights += t * g.weights;
  out.biases += t * g.biases;
  return out;
}

}  // namespace

RimTrainResult train_rim_detailed(const RowMatrix& X, const RimOptions& options) {
  const int N = options.clusters;
  if (N < 2) throw ConfigError("rim: need at least 2 clusters");
  if (N > X.rows()) throw ConfigError("rim: more clusters (" + std::to_string(N) + ") than points (" +
                                      std::to_string(X.rows()) + ")");
  if (options.restarts < 1) throw ConfigError("rim: restarts must be >= 1");
  if (!(options.lambda >= 0.0)) throw ConfigError("rim: lambda must be >= 0");

  RimTrainResult result;
  double best = -std::numeric_limits<double>::infinity();
  std::mt19937_64 seeder(options.seed);
  for (int r = 0; r < options.restarts; ++r) {
    const std::uint64_t run_seed = seeder();
    const auto labels = kmeans_plus_plus_labels(X, N, run_seed, options.kmeans_iterations);
    RimModel model = fit_logits_to_labels(X, labels, N, options.lambda);
    // The ridge fit targets 0/1 logits; pick the best power-of-two scale of it.
    double f = rim_objective(model, X);
    const RimModel base = model;
    for (double s = 2.0; s <= 64.0; s *= 2.0) {
      RimModel cand = scaled(base, s);
      const double fc = rim_objective(cand, X);
      if (fc > f) {
        f = fc;
        model = std::move(cand);
      }
    }

    RimRun run;
    run.trace.push_back(f);
    double t = 1.0;
    constexpr double kArmijo = 1e-4;
    for (run.iterations = 0; run.iterations < options.max_iterations; ++run.iterations) {
      const RimGradient g = rim_gradient(model, X);
      const double g2 = g.weights.squaredNorm() + g.biases.squaredNorm();
      if (g2 == 0.0) break;
      bool accepted = false;
      double f_new = f;
      RimModel cand;
      while (t > 1e-12) {
        cand = step_along(model, g, t);
        f_new = rim_objective(cand, X);
        if (std::isfinite(f_new) && f_new >= f + kArmijo * t * g2) {
          accepted = true;
          break;
        }
        t *= 0.5;
      }
      if (!accepted) break;
      const double gain = f_new - f;
      model = std::move(cand);
      f = f_new;
      run.trace.push_back(f);
      t *= 2.0;
      if (std::abs(gain) < options.tolerance) break;
    }
    if (f > best) {
      best = f;
      result.model = model;
      result.best_run = r;
    }
    result.runs.push_back(std::move(run));
  }
  return result;
}

RimModel train_rim(const RowMatrix& X, const RimOptions& options) { return train_rim_detailed(X, options).model; }

ClusterAssignment assignment_from_labels(const RowMatrix& X, const std::vector<int>& labels, int clusters) {
  ClusterAssignment a;
  a.hard_label = labels;
  a.centers = Matrix::Zero(clusters, X.cols());
  a.sizes.assign(static_cast<std::size_t>(clusters), 0);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const int c = labels[static_cast<std::size_t>(i)];
    a.centers.row(c) += X.row(i);
    ++a.sizes[static_cast<std::size_t>(c)];
  }
  a.empty.assign(static_cast<std::size_t>(clusters), false);
  for (int c = 0; c < clusters; ++c) {
    if (a.sizes[static_cast<std::size_t>(c)] == 0)
      a.empty[static_cast<std::size_t>(c)] = true;
    else
      a.centers.row(c) /= static_cast<double>(a.sizes[static_cast<std::size_t>(c)]);
  }
  return a;
}

ClusterAssignment assign_clusters(const RimModel& model, const RowMatrix& X) {
  Matrix P = model.predict_probabilities(X);
  std::vector<int> labels(static_cast<std::size_t>(X.rows()));
  for (Eigen::Index i = 0; i < X.rows(); ++i) labels[static_cast<std::size_t>(i)] = static_cast<int>(argmax(P.row(i)));
  ClusterAssignment a = assignment_from_labels(X, labels, model.num_clusters());
  a.probabilities = std::move(P);
  return a;
}

RowMatrix augment_features(const RowMatrix& X, int copies, double sigma, std::uint64_t seed) {
  if (copies <= 0) return X;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, sigma);
  RowMatrix out(X.rows() * (copies + 1), X.cols());
  out.topRows(X.rows()) = X;
  for (int c = 1; c <= copies; ++c)
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      Vector v = X.row(i).transpose();
      for (Eigen::Index k = 0; k < v.size(); ++k) v(k) += normal(rng);
      out.row(c * X.rows() + i) = l2_normalize(v).transpose();
    }
  return out;
}

void RimModel::to_payload(CachePayload& payload, const std::string& prefix) const {
  payload.reals[prefix + "weights"] = weights;
  payload.reals[prefix + "biases"] = biases;
  payload.set_scalar(prefix + "lambda", lambda);
}

RimModel RimModel::from_payload(const CachePayload& payload, const std::string& prefix) {
  RimModel m;
  m.weights = payload.real(prefix + "weights");
  m.biases = payload.real(prefix + "biases");
  m.lambda = payload.scalar(prefix + "lambda");
  return m;
}

}  // namespace metaobj
