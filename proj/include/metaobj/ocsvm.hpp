#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "metaobj/core.hpp"
#include "metaobj/ingest.hpp"

namespace metaobj {

struct KernelSpec {
  enum class Kind : std::uint8_t { linear = 0, rbf = 1 };
  Kind kind = Kind::linear;
  double gamma = 0.0;

  static KernelSpec linear() { return {}; }
  static KernelSpec rbf(double gamma) { return {Kind::rbf, gamma}; }
  void validate() const;
  double operator()(const double* a, const double* b, std::size_t d) const;
};

// gamma = 1 / median pairwise squared distance.
double median_heuristic_gamma(const RowMatrix& X);

RowMatrix kernel_matrix(const KernelSpec& kernel, const RowMatrix& A, const RowMatrix& B);

// nu-one-class SVM in dual form: 0 <= alpha_i <= 1/(nu*l), sum(alpha) = 1.
struct OcsvmModel {
  RowMatrix support_vectors;
  Vector alphas;
  // Row index of each support vector in the training matrix.
  std::vector<Index> support_ids;
  double rho = 0.0;
  KernelSpec kernel;
  double nu = 0.5;
  Index training_size = 0;
  double dual_objective = 0.0;
  // Largest KKT violation when the solver stopped.
  double kkt_violation = 0.0;
  std::size_t iterations = 0;
  bool converged = false;

  double upper_bound() const { return 1.0 / (nu * static_cast<double>(training_size)); }

  void to_payload(CachePayload& payload, const std::string& prefix) const;
  static OcsvmModel from_payload(const CachePayload& payload, const std::string& prefix);
};

struct OcsvmOptions {
  double tolerance = 1e-7;
  std::size_t max_iterations = 100000;
};

// Result of the pairwise dual solver on a precomputed Gram matrix.
struct DualSolution {
  Vector alpha;
  // Gradient of the dual objective, Q * alpha.
  Vector gradient;
  double rho = 0.0;
  double objective = 0.0;
  double kkt_violation = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  bool jittered = false;
};

// Minimizes 0.5 a'Qa over {0 <= a_i <= 1/(nu*l), sum a = 1} by SMO-style pair
// updates with second-order working-set selection.
DualSolution solve_ocsvm_dual(const Matrix& Q, double nu, const OcsvmOptions& options = {});

OcsvmModel train_ocsvm(const RowMatrix& features, double nu, const KernelSpec& kernel,
                       const OcsvmOptions& options = {});

double decision_value(const OcsvmModel& model, const Vector& x);
Vector decision_values(const OcsvmModel& model, const RowMatrix& X);

struct CascadeResult {
  std::vector<Index> kept;
  std::vector<std::vector<Index>> removed_per_stage;
  std::vector<OcsvmModel> models;
  // Stage indices that removed nothing because floor(fraction * count) was 0.
  std::vector<int> noop_stages;
  // Set when fewer than 2 patches remained and the cascade stopped early.
  bool stopped_early = false;
};

struct CascadeOptions {
  int stages = 3;
  double per_stage_fraction = 0.15;
  double nu = 0.15;
  KernelSpec kernel;
  OcsvmOptions solver;
};

// One category's cascade. `ids` label the rows of `features`; survivors of
// each stage are retrained from scratch.
CascadeResult cascade_screen(const std::vector<Index>& ids, const RowMatrix& features, const CascadeOptions& options);

}  // namespace metaobj
