#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "metaobj/core.hpp"
#include "metaobj/ingest.hpp"

namespace metaobj {

// Multinomial-logistic cluster model p(c|x) = softmax(W x + b).
struct RimModel {
  Matrix weights;  // N x d
  Vector biases;   // N
  double lambda = 0.01;

  int num_clusters() const { return static_cast<int>(weights.rows()); }
  Matrix predict_probabilities(const RowMatrix& X) const;

  void to_payload(CachePayload& payload, const std::string& prefix) const;
  static RimModel from_payload(const CachePayload& payload, const std::string& prefix);
};

struct RimGradient {
  Matrix weights;
  Vector biases;
};

// H(mean p) - mean_i H(p_i) - lambda * sum_c |w_c|^2, entropies in nats.
double rim_objective(const RimModel& model, const RowMatrix& X);
RimGradient rim_gradient(const RimModel& model, const RowMatrix& X);

struct RimOptions {
  int clusters = 2;
  double lambda = 0.01;
  int restarts = 5;
  std::uint64_t seed = 0;
  int max_iterations = 2000;
  double tolerance = 1e-7;
  int kmeans_iterations = 20;
};

struct RimRun {
  // Objective after initialization, then after every accepted step.
  std::vector<double> trace;
  int iterations = 0;
};

struct RimTrainResult {
  RimModel model;
  std::vector<RimRun> runs;
  int best_run = 0;
};

RimTrainResult train_rim_detailed(const RowMatrix& X, const RimOptions& options);
RimModel train_rim(const RowMatrix& X, const RimOptions& options);

// Seeded k-means++ seeding followed by Lloyd iterations; returns hard labels.
std::vector<int> kmeans_plus_plus_labels(const RowMatrix& X, int clusters, std::uint64_t seed, int iterations);

// Ridge least-squares fit of logits to one-hot labels.
RimModel fit_logits_to_labels(const RowMatrix& X, const std::vector<int>& labels, int clusters, double lambda);

struct ClusterAssignment {
  std::vector<int> hard_label;
  Matrix probabilities;  // n x N
  Matrix centers;        // N x d
  std::vector<std::size_t> sizes;
  std::vector<bool> empty;

  int num_clusters() const { return static_cast<int>(centers.rows()); }
};

ClusterAssignment assign_clusters(const RimModel& model, const RowMatrix& X);

// Builds an assignment from given hard labels; centers are per-label means.
ClusterAssignment assignment_from_labels(const RowMatrix& X, const std::vector<int>& labels, int clusters);

// Feature-space stand-in for pixel augmentation: appends `copies` jittered
// copies of every row. copies == 0 returns X unchanged.
RowMatrix augment_features(const RowMatrix& X, int copies, double sigma, std::uint64_t seed);

}  // namespace metaobj
