#pragma once

#include <filesystem>
#include <vector>

#include "metaobj/core.hpp"

namespace metaobj {

// Patches taking part in kNN screening. Row r of `features` belongs to
// patch_ids[r], drawn from image image_ids[r] with scene label labels[r].
struct ScreeningInput {
  std::vector<Index> patch_ids;
  std::vector<Index> image_ids;
  std::vector<int> labels;
  RowMatrix features;

  std::size_t size() const { return patch_ids.size(); }
  static ScreeningInput from_dataset(const Dataset& ds, const std::vector<Index>& ids);
};

// w = K_y / K for every patch; stored as the integer count K_y.
struct PatchWeights {
  std::vector<Index> patch_ids;
  std::vector<int> same_label_counts;
  // Scene label of each patch; used by the per-class discard mode.
  std::vector<int> labels;
  int K = 0;

  double weight(std::size_t r) const { return static_cast<double>(same_label_counts[r]) / K; }
  std::vector<double> weights() const;
};

struct ScreenedSet {
  std::vector<Index> kept;
  std::vector<Index> discarded;
  double total_screening_ratio = 0.0;
};

// Rows of the K nearest patches to row `query` among rows from other images,
// ordered by (distance, patch_id).
std::vector<std::size_t> cross_image_neighbors(const ScreeningInput& input, std::size_t query, int K);

PatchWeights compute_patch_weights(const ScreeningInput& input, int K);

// Discards the floor(discard_ratio * n) lowest-weight patches, ties to the
// smaller patch id. With per_class set, the ratio applies within each label.
// `original_count` (when nonzero) is the population the total screening ratio
// is measured against, so earlier removals can be folded in.
ScreenedSet soft_screen(const PatchWeights& weights, double discard_ratio, bool per_class = false,
                        std::size_t original_count = 0);

// Equal-width bins over [0,1]; a weight of exactly 1 falls in the last bin.
std::vector<std::size_t> weight_histogram(const PatchWeights& weights, int bins);

void write_histogram_csv(const std::vector<std::size_t>& counts, const std::filesystem::path& path);

}  // namespace metaobj
