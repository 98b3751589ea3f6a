#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "metaobj/mlp.hpp"
#include "metaobj/pooling.hpp"

namespace metaobj {

struct SceneClassifierOptions {
  int hidden = 200;
  int epochs = 200;
  double step = 0.01;
  int batch = 32;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
};

// Two rectifier hidden layers over standardized, beta-weighted blocks.
// Standardization statistics come from the unweighted training blocks and
// are applied before the beta weighting, so beta keeps its effect.
struct SceneClassifier {
  Mlp net;
  Vector mean;
  Vector inv_std;
  Vector weights;  // fusion weights for the configured beta
  double beta = 0.5;
  RepresentationLayout layout;
  std::uint64_t config_hash = 0;
  double final_loss = 0.0;

  int num_classes() const { return net.output_dim(); }
  RowMatrix prepare(const RowMatrix& blocks) const;
  Matrix probabilities(const RowMatrix& blocks) const;
  std::vector<int> predict(const RowMatrix& blocks) const;

  void to_payload(CachePayload& payload, const std::string& prefix) const;
  static SceneClassifier from_payload(const CachePayload& payload, const std::string& prefix);
};

// `blocks` holds one unweighted representation (ImageRepresentation::unweighted) per row.
SceneClassifier train_scene_classifier(const RowMatrix& blocks, const std::vector<int>& labels, int num_classes,
                                       const RepresentationLayout& layout, double beta,
                                       const SceneClassifierOptions& options);

struct BetaSelection {
  double beta = 0.5;
  std::vector<double> grid;
  std::vector<double> heldout_accuracy;
};

// Holds out a seeded 20% of the rows, trains once per beta and returns the
// beta with the best held-out accuracy (ties to the smaller beta).
BetaSelection cross_validate_beta(const RowMatrix& blocks, const std::vector<int>& labels, int num_classes,
                                  const RepresentationLayout& layout, const std::vector<double>& grid,
                                  const SceneClassifierOptions& options, std::uint64_t seed);

struct EvalReport {
  double overall_accuracy = 0.0;
  std::vector<double> per_class_accuracy;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::size_t total = 0;

  std::string summary() const;
  void write_csv(const std::filesystem::path& eval_csv, const std::filesystem::path& confusion_csv) const;
};

EvalReport evaluate(const SceneClassifier& model, const RowMatrix& blocks, const std::vector<int>& labels);
EvalReport make_report(const std::vector<int>& truth, const std::vector<int>& predicted, int num_classes);

}  // namespace metaobj
