#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace metaobj {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
// Row-per-sample storage for feature matrices.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = std::size_t;

// Error hierarchy. Every failure the library raises derives from Error.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ValidationError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct ParseError : Error {
  using Error::Error;
};
struct NumericalError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};

enum class Level : std::uint8_t { top = 0, bottom = 1 };
enum class Split : std::uint8_t { train = 0, test = 1 };

const char* to_string(Level level);
const char* to_string(Split split);

// Center-size box in coordinates normalized to the image extent.
struct BBox {
  double cx = 0.5;
  double cy = 0.5;
  double w = 1.0;
  double h = 1.0;
};

struct PatchRecord {
  Index patch_id = 0;
  Index image_id = 0;
  Vector feature;
  BBox bbox;
  Level level = Level::bottom;
};

struct ImageRecord {
  Index image_id = 0;
  int scene_label = 0;
  std::vector<Index> patches;
  Vector holistic;
  Split split = Split::train;
};

// A bag-of-patches dataset. Records are stored densely: images[i].image_id == i
// and patches[j].patch_id == j. validate_dataset reports any departure from that.
struct Dataset {
  std::vector<ImageRecord> images;
  std::vector<PatchRecord> patches;
  int num_classes = 0;
  int feature_dim = 0;

  // Patch ids of one level belonging to images of one split, in ascending order.
  std::vector<Index> patch_ids(Split split, Level level) const;
  std::vector<Index> image_ids(Split split) const;
  int label_of_patch(Index patch_id) const { return images[patches[patch_id].image_id].scene_label; }
  // Stacks the features of the given patches into rows.
  RowMatrix features(const std::vector<Index>& ids) const;
};

struct Violation {
  std::string kind;
  std::string detail;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
  std::size_t count(const std::string& kind) const;
  std::string summary() const;
};

// Unit Euclidean norm; the zero vector is returned unchanged.
Vector l2_normalize(const Vector& v);

ValidationReport validate_dataset(const Dataset& ds);

// Plain left-to-right squared Euclidean distance. Deterministic summation order.
double squared_distance(const double* a, const double* b, std::size_t d);

template <typename DerivedA, typename DerivedB>
double squared_distance(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double diff = a(i) - b(i);
    s += diff * diff;
  }
  return s;
}

// Index of the largest entry; ties go to the smaller index.
template <typename Derived>
Eigen::Index argmax(const Eigen::DenseBase<Derived>& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v(i) > v(best)) best = i;
  return best;
}

// Row-wise softmax with max subtraction.
Matrix softmax_rows(const Matrix& logits);

// floor(fraction * count) with a small guard against representation error,
// so that e.g. 0.29 * 100 yields 29.
std::size_t fraction_count(double fraction, std::size_t count);

}  // namespace metaobj
