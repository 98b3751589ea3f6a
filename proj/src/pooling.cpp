#include "metaobj/pooling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace metaobj {

namespace {

struct Cell {
  double x0, y0, x1, y1;
};

void fill_cell(const std::vector<SpmRegion>& regions, const std::vector<std::size_t>& members, const Cell& cell,
               int level, int cell_index, int num_meta, Vector& out) {
  for (std::size_t r : members)
    out(static_cast<Eigen::Index>(cell_index) * num_meta + regions[r].label - 1) += 1.0;
  if (level == 2) return;

  double sx = 0.5 * (cell.x0 + cell.x1);
  double sy = 0.5 * (cell.y0 + cell.y1);
  if (!members.empty()) {
    double mx = 0.0, my = 0.0;
    for (std::size_t r : members) {
      mx += regions[r].cx;
      my += regions[r].cy;
    }
    sx = mx / static_cast<double>(members.size());
    sy = my / static_cast<double>(members.size());
  }
  std::vector<std::size_t> child[4];
  for (std::size_t r : members) {
    const int q = 2 * (regions[r].cy > sy ? 1 : 0) + (regions[r].cx > sx ? 1 : 0);
    child[q].push_back(r);
  }
  const Cell sub[4] = {{cell.x0, cell.y0, sx, sy}, {sx, cell.y0, cell.x1, sy}, {cell.x0, sy, sx, cell.y1},
                       {sx, sy, cell.x1, cell.y1}};
  // Level-1 cells are 1..4; children of level-1 cell p (1-based) are 5 + 4(p-1) + q.
  for (int q = 0; q < 4; ++q) {
    const int index = level == 0 ? 1 + q : 5 + 4 * (cell_index - 1) + q;
    fill_cell(regions, child[q], sub[q], level + 1, index, num_meta, out);
  }
}

}  // namespace

Vector spm_counts(const std::vector<SpmRegion>& regions, int num_meta) {
  if (num_meta < 1) throw ConfigError("spm: need at least one meta object");
  Vector out = Vector::Zero(static_cast<Eigen::Index>(kSpmCells) * num_meta);
  std::vector<std::size_t> members;
  for (std::size_t r = 0; r < regions.size(); ++r) {
    const int label = regions[r].label;
    if (label == 0) continue;
    if (label < 0 || label > num_meta) throw ValidationError("spm: label " + std::to_string(label) + " out of range");
    members.push_back(r);
  }
  fill_cell(regions, members, {0.0, 0.0, 1.0, 1.0}, 0, 0, num_meta, out);
  return out;
}

Vector spm_encode(const std::vector<SpmRegion>& regions, int num_meta) {
  Vector v = spm_counts(regions, num_meta);
  for (int c = 0; c < kSpmCells; ++c) {
    auto block = v.segment(static_cast<Eigen::Index>(c) * num_meta, num_meta);
    const double total = block.sum();
    if (total > 0.0) block /= total;
  }
  return v;
}

int vlad_components(int feature_dim, int clusters) { return std::max(1, feature_dim / std::max(1, clusters)); }

std::vector<int> nearest_centers(const RowMatrix& regions, const VladCodebook& codebook) {
  const auto d = static_cast<std::size_t>(codebook.dim());
  if (regions.rows() > 0 && regions.cols() != codebook.dim()) throw ValidationError("vlad: dimension mismatch");
  std::vector<int> nearest(static_cast<std::size_t>(regions.rows()), -1);
  for (Eigen::Index r = 0; r < regions.rows(); ++r) {
    double best = std::numeric_limits<double>::infinity();
    for (int c = 0; c < codebook.size(); ++c) {
      if (!codebook.active[static_cast<std::size_t>(c)]) continue;
      const Eigen::RowVectorXd center = codebook.centers.row(c);
      const double dist = squared_distance(regions.row(r).data(), center.data(), d);
      if (dist < best) {
        best = dist;
        nearest[static_cast<std::size_t>(r)] = c;
      }
    }
  }
  return nearest;
}

Matrix vlad_residual_sums(const RowMatrix& regions, const VladCodebook& codebook, std::vector<int>* counts) {
  Matrix sums = Matrix::Zero(codebook.size(), codebook.dim());
  if (counts) counts->assign(static_cast<std::size_t>(codebook.size()), 0);
  const auto nearest = nearest_centers(regions, codebook);
  for (Eigen::Index r = 0; r < regions.rows(); ++r) {
    const int c = nearest[static_cast<std::size_t>(r)];
    if (c < 0) continue;
    sums.row(c) += regions.row(r) - codebook.centers.row(c);
    if (counts) ++(*counts)[static_cast<std::size_t>(c)];
  }
  return sums;
}

ClusterPca fit_pca(const RowMatrix& samples, int components, int dim) {
  ClusterPca pca;
  pca.samples = static_cast<std::size_t>(samples.rows());
  pca.mean = samples.rows() > 0 ? Vector(samples.colwise().mean().transpose()) : Vector(Vector::Zero(dim));
  Matrix cov = Matrix::Zero(dim, dim);
  if (samples.rows() > 0) {
    Matrix centered = samples;
    centered.rowwise() -= pca.mean.transpose();
    cov = centered.transpose() * centered / static_cast<double>(std::max<Eigen::Index>(1, samples.rows() - 1));
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  const Vector& values = eig.eigenvalues();  // ascending
  const Matrix& vectors = eig.eigenvectors();
  const int keep = std::min(components, dim);
  pca.projection = Matrix::Zero(components, dim);
  pca.eigenvalues = Vector::Zero(components);
  const double scale = std::max(1.0, cov.trace());
  for (int k = 0; k < keep; ++k) {
    Vector dir = vectors.col(dim - 1 - k);
    Eigen::Index pivot = 0;
    dir.cwiseAbs().maxCoeff(&pivot);
    if (dir(pivot) < 0.0) dir = -dir;
    pca.projection.row(k) = dir.transpose();
    pca.eigenvalues(k) = values(dim - 1 - k);
    if (pca.eigenvalues(k) <= 1e-12 * scale) pca.degenerate = true;
  }
  if (static_cast<int>(samples.rows()) <= keep || keep < components) pca.degenerate = true;
  return pca;
}

PcaModel fit_vlad_pca(const std::vector<RowMatrix>& train_image_regions, const VladCodebook& codebook) {
  const int N = codebook.size();
  const int d = codebook.dim();
  PcaModel model;
  model.components = vlad_components(d, N);

  std::vector<std::vector<Vector>> per_cluster(static_cast<std::size_t>(N));
  std::vector<int> counts;
  for (const auto& regions : train_image_regions) {
    const Matrix sums = vlad_residual_sums(regions, codebook, &counts);
    for (int c = 0; c < N; ++c)
      if (counts[static_cast<std::size_t>(c)] > 0) per_cluster[static_cast<std::size_t>(c)].push_back(sums.row(c).transpose());
  }
  for (int c = 0; c < N; ++c) {
    const auto& rows = per_cluster[static_cast<std::size_t>(c)];
    RowMatrix samples(static_cast<Eigen::Index>(rows.size()), d);
    for (std::size_t r = 0; r < rows.size(); ++r) samples.row(static_cast<Eigen::Index>(r)) = rows[r].transpose();
    model.clusters.push_back(fit_pca(samples, model.components, d));
  }
  return model;
}

Vector vlad_encode(const RowMatrix& regions, const VladCodebook& codebook, const PcaModel& pca) {
  if (static_cast<int>(pca.clusters.size()) != codebook.size())
    throw ValidationError("vlad: PCA model and codebook disagree on cluster count");
  const Matrix sums = vlad_residual_sums(regions, codebook);
  const int p = pca.components;
  Vector out(static_cast<Eigen::Index>(p) * codebook.size());
  for (int c = 0; c < codebook.size(); ++c)
    out.segment(static_cast<Eigen::Index>(c) * p, p) = pca.clusters[static_cast<std::size_t>(c)].projection * sums.row(c).transpose();
  out = out.unaryExpr([](double x) { return std::copysign(std::sqrt(std::abs(x)), x); });
  const double norm = out.norm();
  if (norm > 0.0) out /= norm;
  return out;
}

void PcaModel::to_payload(CachePayload& payload, const std::string& prefix) const {
  payload.set_scalar(prefix + "components", components);
  payload.set_scalar(prefix + "clusters", static_cast<double>(clusters.size()));
  for (std::size_t c = 0; c < clusters.size(); ++c) {
    const std::string key = prefix + std::to_string(c) + ".";
    payload.reals[key + "mean"] = clusters[c].mean;
    payload.reals[key + "projection"] = clusters[c].projection;
    payload.reals[key + "eigenvalues"] = clusters[c].eigenvalues;
    payload.ints[key + "info"] = {static_cast<std::int64_t>(clusters[c].samples), clusters[c].degenerate ? 1 : 0};
  }
}

PcaModel PcaModel::from_payload(const CachePayload& payload, const std::string& prefix) {
  PcaModel m;
  m.components = static_cast<int>(payload.scalar(prefix + "components"));
  const auto n = static_cast<std::size_t>(payload.scalar(prefix + "clusters"));
  for (std::size_t c = 0; c < n; ++c) {
    const std::string key = prefix + std::to_string(c) + ".";
    ClusterPca pca;
    pca.mean = payload.real(key + "mean");
    pca.projection = payload.real(key + "projection");
    pca.eigenvalues = payload.real(key + "eigenvalues");
    const auto& info = payload.integers(key + "info");
    pca.samples = static_cast<std::size_t>(info.at(0));
    pca.degenerate = info.at(1) != 0;
    m.clusters.push_back(std::move(pca));
  }
  return m;
}

int RepresentationLayout::pooled_dim() const { return std::accumulate(level_dims.begin(), level_dims.end(), 0); }

Vector ImageRepresentation::unweighted() const {
  Eigen::Index total = holistic.size();
  for (const auto& l : levels) total += l.size();
  Vector out(total);
  Eigen::Index pos = 0;
  for (const auto& l : levels) {
    out.segment(pos, l.size()) = l;
    pos += l.size();
  }
  out.segment(pos, holistic.size()) = holistic;
  return out;
}

ImageRepresentation build_image_representation(const std::vector<Vector>& level_outputs, const Vector& holistic,
                                               double beta, const RepresentationLayout& layout) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("representation: beta must lie in [0,1]");
  if (level_outputs.size() != layout.level_dims.size())
    throw ValidationError("representation: expected " + std::to_string(layout.level_dims.size()) +
                          " level outputs, got " + std::to_string(level_outputs.size()));
  for (std::size_t l = 0; l < level_outputs.size(); ++l)
    if (level_outputs[l].size() != layout.level_dims[l])
      throw ValidationError("representation: level " + std::to_string(l) + " has dimension " +
                            std::to_string(level_outputs[l].size()) + ", layout expects " +
                            std::to_string(layout.level_dims[l]));
  if (holistic.size() != layout.holistic_dim) throw ValidationError("representation: holistic dimension mismatch");

  ImageRepresentation rep;
  rep.levels = level_outputs;
  rep.holistic = holistic;
  rep.beta = beta;
  rep.fused = rep.unweighted().cwiseProduct(fusion_weights(layout, beta));
  return rep;
}

Vector fusion_weights(const RepresentationLayout& layout, double beta) {
  Vector w(layout.total_dim());
  w.head(layout.pooled_dim()).setConstant(beta);
  w.tail(layout.holistic_dim).setConstant(1.0 - beta);
  return w;
}

}  // namespace metaobj
