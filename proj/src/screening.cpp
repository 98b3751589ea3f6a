#include "metaobj/screening.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>

namespace metaobj {

ScreeningInput ScreeningInput::from_dataset(const Dataset& ds, const std::vector<Index>& ids) {
  ScreeningInput in;
  in.patch_ids = ids;
  in.image_ids.reserve(ids.size());
  in.labels.reserve(ids.size());
  for (Index id : ids) {
    in.image_ids.push_back(ds.patches[id].image_id);
    in.labels.push_back(ds.label_of_patch(id));
  }
  in.features = ds.features(ids);
  return in;
}

std::vector<double> PatchWeights::weights() const {
  std::vector<double> w(same_label_counts.size());
  for (std::size_t r = 0; r < w.size(); ++r) w[r] = weight(r);
  return w;
}

namespace {

struct Candidate {
  double dist;
  Index patch_id;
  std::size_t row;
  bool operator<(const Candidate& o) const { return dist != o.dist ? dist < o.dist : patch_id < o.patch_id; }
};

}  // namespace

std::vector<std::size_t> cross_image_neighbors(const ScreeningInput& input, std::size_t query, int K) {
  const std::size_t n = input.size();
  const auto d = static_cast<std::size_t>(input.features.cols());
  const double* q = input.features.row(static_cast<Eigen::Index>(query)).data();
  const Index own_image = input.image_ids[query];

  std::vector<Candidate> pool;
  pool.reserve(n);
  for (std::size_t r = 0; r < n; ++r) {
    if (input.image_ids[r] == own_image) continue;
    pool.push_back({squared_distance(q, input.features.row(static_cast<Eigen::Index>(r)).data(), d),
                    input.patch_ids[r], r});
  }
  if (pool.size() < static_cast<std::size_t>(K))
    throw ConfigError("screening: patch " + std::to_string(input.patch_ids[query]) + " has only " +
                      std::to_string(pool.size()) + " cross-image candidates for K=" + std::to_string(K) +
                      "; use a smaller K");
  const auto kth = pool.begin() + K;
  std::nth_element(pool.begin(), kth - 1, pool.end());
  std::sort(pool.begin(), kth);
  std::vector<std::size_t> rows(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) rows[static_cast<std::size_t>(k)] = pool[static_cast<std::size_t>(k)].row;
  return rows;
}

PatchWeights compute_patch_weights(const ScreeningInput& input, int K) {
  if (K < 1) throw ConfigError("screening: K must be >= 1");
  PatchWeights w;
  w.K = K;
  w.patch_ids = input.patch_ids;
  w.labels = input.labels;
  w.same_label_counts.resize(input.size());
  for (std::size_t r = 0; r < input.size(); ++r) {
    int same = 0;
    for (std::size_t nb : cross_image_neighbors(input, r, K))
      if (input.labels[nb] == input.labels[r]) ++same;
    w.same_label_counts[r] = same;
  }
  return w;
}

ScreenedSet soft_screen(const PatchWeights& weights, double discard_ratio, bool per_class, std::size_t original_count) {
  if (!(discard_ratio >= 0.0 && discard_ratio < 1.0)) throw ConfigError("soft_screen: discard_ratio must lie in [0,1)");
  const std::size_t n = weights.patch_ids.size();

  // Counts compare exactly; same_label_counts / K is monotone in the count.
  auto by_weight = [&](std::size_t a, std::size_t b) {
    if (weights.same_label_counts[a] != weights.same_label_counts[b])
      return weights.same_label_counts[a] < weights.same_label_counts[b];
    return weights.patch_ids[a] < weights.patch_ids[b];
  };

  std::vector<std::vector<std::size_t>> groups;
  if (per_class) {
    std::map<int, std::vector<std::size_t>> by_label;
    for (std::size_t r = 0; r < n; ++r) by_label[weights.labels.at(r)].push_back(r);
    for (auto& [label, rows] : by_label) groups.push_back(std::move(rows));
  } else {
    groups.emplace_back(n);
    std::iota(groups[0].begin(), groups[0].end(), std::size_t{0});
  }

  std::vector<bool> drop(n, false);
  for (auto& rows : groups) {
    std::sort(rows.begin(), rows.end(), by_weight);
    const std::size_t remove = fraction_count(discard_ratio, rows.size());
    for (std::size_t k = 0; k < remove; ++k) drop[rows[k]] = true;
  }

  ScreenedSet out;
  for (std::size_t r = 0; r < n; ++r) (drop[r] ? out.discarded : out.kept).push_back(weights.patch_ids[r]);
  std::sort(out.kept.begin(), out.kept.end());
  std::sort(out.discarded.begin(), out.discarded.end());
  const std::size_t population = original_count > 0 ? original_count : n;
  out.total_screening_ratio =
      population == 0 ? 0.0 : 1.0 - static_cast<double>(out.kept.size()) / static_cast<double>(population);
  return out;
}

std::vector<std::size_t> weight_histogram(const PatchWeights& weights, int bins) {
  if (bins < 1) throw ConfigError("weight_histogram: bins must be >= 1");
  std::vector<std::size_t> counts(static_cast<std::size_t>(bins), 0);
  for (int c : weights.same_label_counts) {
    // floor(c / K * bins) in integer arithmetic.
    const long long b = std::min<long long>(static_cast<long long>(c) * bins / weights.K, bins - 1);
    ++counts[static_cast<std::size_t>(b)];
  }
  return counts;
}

void write_histogram_csv(const std::vector<std::size_t>& counts, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "bin_low,bin_high,count\n";
  const double width = 1.0 / static_cast<double>(counts.size());
  for (std::size_t b = 0; b < counts.size(); ++b)
    out << width * static_cast<double>(b) << ',' << width * static_cast<double>(b + 1) << ',' << counts[b] << '\n';
}

}  // namespace metaobj
