#include "metaobj/core.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace metaobj {

const char* to_string(Level level) { return level == Level::top ? "top" : "bottom"; }
const char* to_string(Split split) { return split == Split::train ? "train" : "test"; }

std::vector<Index> Dataset::patch_ids(Split split, Level level) const {
  std::vector<Index> out;
  for (const auto& p : patches)
    if (p.level == level && p.image_id < images.size() && images[p.image_id].split == split)
      out.push_back(p.patch_id);
  return out;
}

std::vector<Index> Dataset::image_ids(Split split) const {
  std::vector<Index> out;
  for (const auto& im : images)
    if (im.split == split) out.push_back(im.image_id);
  return out;
}

RowMatrix Dataset::features(const std::vector<Index>& ids) const {
  RowMatrix out(static_cast<Eigen::Index>(ids.size()), feature_dim);
  for (std::size_t r = 0; r < ids.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = patches[ids[r]].feature.transpose();
  return out;
}

std::size_t ValidationReport::count(const std::string& kind) const {
  return static_cast<std::size_t>(
      std::count_if(violations.begin(), violations.end(), [&](const Violation& v) { return v.kind == kind; }));
}

std::string ValidationReport::summary() const {
  std::ostringstream os;
  for (const auto& v : violations) os << v.kind << ": " << v.detail << '\n';
  return os.str();
}

Vector l2_normalize(const Vector& v) {
  if (!v.allFinite()) throw ValidationError("l2_normalize: non-finite input");
  const double n = v.norm();
  if (n == 0.0) return v;
  return v / n;
}

namespace {

bool finite_vector(const Vector& v) { return v.allFinite(); }

bool unit_interval(double x) { return x >= 0.0 && x <= 1.0; }

}  // namespace

ValidationReport validate_dataset(const Dataset& ds) {
  ValidationReport report;
  auto add = [&](std::string kind, std::string detail) {
    report.violations.push_back({std::move(kind), std::move(detail)});
  };

  if (ds.images.empty()) add("empty dataset", "no images");
  if (ds.feature_dim <= 0) add("bad header", "feature_dim must be positive");
  if (ds.num_classes <= 0) add("bad header", "num_classes must be positive");

  const std::size_t n_img = ds.images.size();
  const std::size_t n_patch = ds.patches.size();
  const auto d = static_cast<Eigen::Index>(ds.feature_dim);

  for (std::size_t j = 0; j < n_patch; ++j) {
    const auto& p = ds.patches[j];
    const std::string tag = "patch " + std::to_string(p.patch_id);
    if (p.patch_id != j) add("patch_id mismatch", tag + " stored at position " + std::to_string(j));
    if (p.image_id >= n_img) add("dangling image_id", tag + " references image " + std::to_string(p.image_id));
    if (p.feature.size() != d)
      add("dimension mismatch", tag + " has d=" + std::to_string(p.feature.size()));
    else if (!finite_vector(p.feature))
      add("non-finite feature", tag);
    const auto& b = p.bbox;
    if (!unit_interval(b.cx) || !unit_interval(b.cy) || !(b.w > 0.0 && b.w <= 1.0) || !(b.h > 0.0 && b.h <= 1.0))
      add("bbox out of range", tag);
  }

  std::vector<int> owner(n_patch, -1);
  std::vector<bool> label_seen(static_cast<std::size_t>(std::max(ds.num_classes, 0)), false);
  for (std::size_t i = 0; i < n_img; ++i) {
    const auto& im = ds.images[i];
    const std::string tag = "image " + std::to_string(im.image_id);
    if (im.image_id != i) add("image_id mismatch", tag + " stored at position " + std::to_string(i));
    if (im.scene_label < 0 || im.scene_label >= ds.num_classes)
      add("label out of range", tag + " has label " + std::to_string(im.scene_label));
    else if (im.split == Split::train)
      label_seen[static_cast<std::size_t>(im.scene_label)] = true;
    if (im.patches.empty()) add("image without patches", tag);
    if (im.holistic.size() != d)
      add("dimension mismatch", tag + " holistic has d=" + std::to_string(im.holistic.size()));
    else if (!finite_vector(im.holistic))
      add("non-finite feature", tag + " holistic");
    for (Index pid : im.patches) {
      if (pid >= n_patch) {
        add("dangling patch_id", tag + " lists patch " + std::to_string(pid));
        continue;
      }
      if (owner[pid] >= 0 && static_cast<std::size_t>(owner[pid]) != i)
        add("shared patch", "patch " + std::to_string(pid) + " listed by images " + std::to_string(owner[pid]) +
                                " and " + std::to_string(i));
      owner[pid] = static_cast<int>(i);
      if (ds.patches[pid].image_id != i)
        add("back-reference mismatch", "patch " + std::to_string(pid) + " listed by " + tag);
    }
  }
  for (std::size_t j = 0; j < n_patch; ++j) {
    const auto img = ds.patches[j].image_id;
    if (img < n_img && owner[j] < 0) add("orphan patch", "patch " + std::to_string(j) + " not listed by its image");
  }
  if (!ds.images.empty())
    for (std::size_t c = 0; c < label_seen.size(); ++c)
      if (!label_seen[c]) add("label gap", "class " + std::to_string(c) + " has no training image");
  return report;
}

double squared_distance(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double diff = a[i] - b[i];
    s += diff * diff;
  }
  return s;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix p = logits;
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    const double m = p.row(r).maxCoeff();
    p.row(r) = (p.row(r).array() - m).exp().matrix();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

std::size_t fraction_count(double fraction, std::size_t count) {
  return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(count) + 1e-9));
}

}  // namespace metaobj
