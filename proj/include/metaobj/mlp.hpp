#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "metaobj/core.hpp"
#include "metaobj/ingest.hpp"

namespace metaobj {

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
};

// Fully connected network: rectifier on every hidden layer, softmax output.
class Mlp {
 public:
  Mlp() = default;
  // sizes = {in, hidden..., out}; He-initialized from `seed`.
  Mlp(const std::vector<int>& sizes, std::uint64_t seed);

  int input_dim() const { return static_cast<int>(layers_.front().weight.cols()); }
  int output_dim() const { return static_cast<int>(layers_.back().weight.rows()); }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }

  Matrix logits(const RowMatrix& X) const;
  Matrix probabilities(const RowMatrix& X) const;

  // Mean cross-entropy against soft targets (rows summing to 1) and its
  // gradient, laid out like layers().
  double loss(const RowMatrix& X, const Matrix& targets) const;
  double loss_and_gradient(const RowMatrix& X, const Matrix& targets, std::vector<DenseLayer>& grad) const;

  std::size_t parameter_count() const;
  Vector flat_parameters() const;
  void set_flat_parameters(const Vector& theta);
  static Vector flatten(const std::vector<DenseLayer>& layers);

  void to_payload(CachePayload& payload, const std::string& prefix) const;
  static Mlp from_payload(const CachePayload& payload, const std::string& prefix);

 private:
  std::vector<DenseLayer> layers_;
};

struct SgdOptions {
  int epochs = 50;
  double step = 0.05;
  int batch = 32;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
};

struct SgdTrace {
  std::vector<double> epoch_loss;
  double final_loss = 0.0;
};

// Seeded mini-batch SGD with momentum and a cosine-decayed step.
// Throws NumericalError if the loss becomes non-finite.
SgdTrace train_sgd(Mlp& net, const RowMatrix& X, const Matrix& targets, const SgdOptions& options);

// One-hot rows with optional label smoothing applied to the rows where
// `smooth_row` is true (all rows when empty).
Matrix soft_targets(const std::vector<int>& labels, int classes, double smoothing,
                    const std::vector<bool>& smooth_row = {});

}  // namespace metaobj
