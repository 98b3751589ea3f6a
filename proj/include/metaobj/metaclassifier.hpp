#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "metaobj/mlp.hpp"
#include "metaobj/rim.hpp"
#include "metaobj/screening.hpp"

namespace metaobj {

// Label 0 is the background class of discarded patches; label c in [1, N]
// is meta object c-1 of the cluster assignment.
struct MetaTrainingSet {
  RowMatrix features;
  std::vector<int> labels;
  std::vector<Index> patch_ids;
  int num_meta = 0;
  std::size_t background_count = 0;
  // Set when background rows were requested but no discarded patch existed.
  bool background_missing = false;
};

// `kept_ids` must be listed in the same order as assignment.hard_label.
MetaTrainingSet build_meta_training_set(const Dataset& ds, const std::vector<Index>& kept_ids,
                                        const std::vector<Index>& discarded_ids, const ClusterAssignment& assignment,
                                        double background_ratio, std::uint64_t seed);

struct MetaClassifierOptions {
  int hidden = 256;
  int epochs = 30;
  double step = 0.05;
  int batch = 64;
  double label_smoothing = 0.05;
  std::uint64_t seed = 0;
};

struct MetaClassifier {
  Mlp net;
  int num_meta = 0;
  int epochs_trained = 0;
  double final_loss = 0.0;

  void to_payload(CachePayload& payload, const std::string& prefix) const;
  static MetaClassifier from_payload(const CachePayload& payload, const std::string& prefix);
};

MetaClassifier train_meta_classifier(const MetaTrainingSet& ts, const MetaClassifierOptions& options);

struct RegionLabel {
  int label = 0;
  Vector probabilities;
};

RegionLabel classify_region(const MetaClassifier& model, const Vector& x);
// Labels in [0, N] for every row.
std::vector<int> classify_regions(const MetaClassifier& model, const RowMatrix& X);

// Labels straight from the clustering model: argmax + 1, or 0 (background)
// when the largest probability is below `threshold` (<= 0 selects 2/N).
std::vector<int> rim_direct_labels(const RimModel& model, const RowMatrix& X, double threshold = 0.0);

}  // namespace metaobj
