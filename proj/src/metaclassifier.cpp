#include "metaobj/metaclassifier.hpp"

#include <algorithm>
#include <random>

namespace metaobj {

MetaTrainingSet build_meta_training_set(const Dataset& ds, const std::vector<Index>& kept_ids,
                                        const std::vector<Index>& discarded_ids, const ClusterAssignment& assignment,
                                        double background_ratio, std::uint64_t seed) {
  if (assignment.hard_label.size() != kept_ids.size())
    throw ValidationError("meta training set: assignment does not cover the kept patches");
  if (!(background_ratio >= 0.0)) throw ConfigError("meta training set: background_ratio must be >= 0");

  MetaTrainingSet ts;
  ts.num_meta = assignment.num_clusters();
  ts.patch_ids = kept_ids;
  for (int c : assignment.hard_label) ts.labels.push_back(c + 1);

  std::size_t want = fraction_count(background_ratio, kept_ids.size());
  if (want > 0 && discarded_ids.empty()) ts.background_missing = true;
  want = std::min(want, discarded_ids.size());
  if (want > 0) {
    // Seeded partial Fisher-Yates over the discarded pool.
    std::vector<Index> pool = discarded_ids;
    std::mt19937_64 rng(seed);
    for (std::size_t k = 0; k < want; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, pool.size() - 1);
      std::swap(pool[k], pool[pick(rng)]);
    }
    pool.resize(want);
    std::sort(pool.begin(), pool.end());
    for (Index id : pool) {
      ts.patch_ids.push_back(id);
      ts.labels.push_back(0);
    }
  }
  ts.background_count = want;
  ts.features = ds.features(ts.patch_ids);
  return ts;
}

MetaClassifier train_meta_classifier(const MetaTrainingSet& ts, const MetaClassifierOptions& options) {
  if (ts.labels.empty()) throw ValidationError("meta classifier: empty training set");
  if (ts.num_meta < 1) throw ConfigError("meta classifier: need at least one meta object");
  const int classes = ts.num_meta + 1;

  std::vector<bool> smooth(ts.labels.size());
  for (std::size_t r = 0; r < ts.labels.size(); ++r) smooth[r] = ts.labels[r] > 0;
  const Matrix targets = soft_targets(ts.labels, classes, options.label_smoothing, smooth);

  MetaClassifier model;
  model.num_meta = ts.num_meta;
  model.net = Mlp({static_cast<int>(ts.features.cols()), options.hidden, classes}, options.seed);
  SgdOptions sgd;
  sgd.epochs = options.epochs;
  sgd.step = options.step;
  sgd.batch = options.batch;
  sgd.seed = options.seed + 1;
  const SgdTrace trace = train_sgd(model.net, ts.features, targets, sgd);
  model.epochs_trained = options.epochs;
  model.final_loss = trace.final_loss;
  return model;
}

RegionLabel classify_region(const MetaClassifier& model, const Vector& x) {
  RowMatrix X = x.transpose();
  RegionLabel out;
  out.probabilities = model.net.probabilities(X).row(0).transpose();
  out.label = static_cast<int>(argmax(out.probabilities));
  return out;
}

std::vector<int> classify_regions(const MetaClassifier& model, const RowMatrix& X) {
  std::vector<int> labels(static_cast<std::size_t>(X.rows()));
  if (X.rows() == 0) return labels;
  const Matrix logits = model.net.logits(X);
  for (Eigen::Index r = 0; r < X.rows(); ++r) labels[static_cast<std::size_t>(r)] = static_cast<int>(argmax(logits.row(r)));
  return labels;
}

std::vector<int> rim_direct_labels(const RimModel& model, const RowMatrix& X, double threshold) {
  const int N = model.num_clusters();
  if (threshold <= 0.0) threshold = 2.0 / N;
  std::vector<int> labels(static_cast<std::size_t>(X.rows()));
  if (X.rows() == 0) return labels;
  const Matrix P = model.predict_probabilities(X);
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    const auto best = argmax(P.row(r));
    labels[static_cast<std::size_t>(r)] = P(r, best) < threshold ? 0 : static_cast<int>(best) + 1;
  }
  return labels;
}

void MetaClassifier::to_payload(CachePayload& payload, const std::string& prefix) const {
  net.to_payload(payload, prefix);
  payload.set_scalar(prefix + "num_meta", num_meta);
  payload.set_scalar(prefix + "final_loss", final_loss);
  payload.set_scalar(prefix + "epochs", epochs_trained);
}

MetaClassifier MetaClassifier::from_payload(const CachePayload& payload, const std::string& prefix) {
  MetaClassifier m;
  m.net = Mlp::from_payload(payload, prefix);
  m.num_meta = static_cast<int>(payload.scalar(prefix + "num_meta"));
  m.final_loss = payload.scalar(prefix + "final_loss");
  m.epochs_trained = static_cast<int>(payload.scalar(prefix + "epochs"));
  return m;
}

}  // namespace metaobj
