#pragma once

#include <string>
#include <vector>

#include "metaobj/core.hpp"
#include "metaobj/ingest.hpp"

namespace metaobj {

// ---------------------------------------------------------------------------
// Adaptive spatial pyramid over meta-object labels.

inline constexpr int kSpmCells = 21;  // 1 + 4 + 16

struct SpmRegion {
  double cx = 0.5;
  double cy = 0.5;
  int label = 0;  // in [1, N]; 0 (background) is skipped
};

// Raw per-cell label counts, cell-major: cell 0 is the whole image, cells
// 1..4 the level-1 quadrants, cells 5 + 4p + q the children of quadrant p.
// Quadrant q = 2*(cy > split_y) + (cx > split_x); each cell splits at the mean
// center of the regions it holds, or at its geometric center when empty.
Vector spm_counts(const std::vector<SpmRegion>& regions, int num_meta);

// spm_counts with every cell histogram L1-normalized (empty cells stay zero).
Vector spm_encode(const std::vector<SpmRegion>& regions, int num_meta);

// ---------------------------------------------------------------------------
// VLAD over meta-object centers.

struct VladCodebook {
  Matrix centers;            // N x d
  std::vector<bool> active;  // empty clusters are skipped

  int size() const { return static_cast<int>(centers.rows()); }
  int dim() const { return static_cast<int>(centers.cols()); }
};

struct ClusterPca {
  Vector mean;
  Matrix projection;  // components x d, orthonormal rows
  Vector eigenvalues;
  std::size_t samples = 0;
  bool degenerate = false;
};

struct PcaModel {
  std::vector<ClusterPca> clusters;
  int components = 0;

  int output_dim() const { return components * static_cast<int>(clusters.size()); }
  void to_payload(CachePayload& payload, const std::string& prefix) const;
  static PcaModel from_payload(const CachePayload& payload, const std::string& prefix);
};

// Components kept per cluster: floor(d / k), at least 1.
int vlad_components(int feature_dim, int clusters);

// Nearest active center for each row (ties to the smaller index).
std::vector<int> nearest_centers(const RowMatrix& regions, const VladCodebook& codebook);

// Per-cluster residual sums (N x d) and region counts.
Matrix vlad_residual_sums(const RowMatrix& regions, const VladCodebook& codebook, std::vector<int>* counts = nullptr);

// PCA of one set of sample rows, keeping `components` directions; sign fixed
// so each direction's largest-magnitude coordinate is positive.
ClusterPca fit_pca(const RowMatrix& samples, int components, int dim);

// Fits one PCA per cluster on the residual sums of the training images that
// assign at least one region to that cluster.
PcaModel fit_vlad_pca(const std::vector<RowMatrix>& train_image_regions, const VladCodebook& codebook);

// Residual sums projected per cluster (no mean removal, so an empty block
// stays zero), concatenated, signed-square-rooted, then L2-normalized.
Vector vlad_encode(const RowMatrix& regions, const VladCodebook& codebook, const PcaModel& pca);

// ---------------------------------------------------------------------------
// Fusion.

struct RepresentationLayout {
  std::vector<int> level_dims;  // bottom level first, then top
  int holistic_dim = 0;

  int pooled_dim() const;
  int total_dim() const { return pooled_dim() + holistic_dim; }
};

struct ImageRepresentation {
  std::vector<Vector> levels;
  Vector holistic;
  double beta = 0.5;
  Vector fused;

  // Blocks concatenated without the beta weighting.
  Vector unweighted() const;
};

ImageRepresentation build_image_representation(const std::vector<Vector>& level_outputs, const Vector& holistic,
                                               double beta, const RepresentationLayout& layout);

// Per-dimension weights that turn an unweighted block vector into the fused
// one: beta on pooled dimensions, 1 - beta on holistic dimensions.
Vector fusion_weights(const RepresentationLayout& layout, double beta);

}  // namespace metaobj
