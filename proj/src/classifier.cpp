#include "metaobj/classifier.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace metaobj {

RowMatrix SceneClassifier::prepare(const RowMatrix& blocks) const {
  if (blocks.cols() != mean.size())
    throw ValidationError("scene classifier: representation dimension " + std::to_string(blocks.cols()) +
                          " does not match model dimension " + std::to_string(mean.size()));
  RowMatrix X = blocks;
  X.rowwise() -= mean.transpose();
  X.array().rowwise() *= (inv_std.cwiseProduct(weights)).transpose().array();
  return X;
}

Matrix SceneClassifier::probabilities(const RowMatrix& blocks) const { return net.probabilities(prepare(blocks)); }

std::vector<int> SceneClassifier::predict(const RowMatrix& blocks) const {
  const Matrix logits = net.logits(prepare(blocks));
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index r = 0; r < logits.rows(); ++r) out[static_cast<std::size_t>(r)] = static_cast<int>(argmax(logits.row(r)));
  return out;
}

SceneClassifier train_scene_classifier(const RowMatrix& blocks, const std::vector<int>& labels, int num_classes,
                                       const RepresentationLayout& layout, double beta,
                                       const SceneClassifierOptions& options) {
  if (static_cast<std::size_t>(blocks.rows()) != labels.size())
    throw ValidationError("scene classifier: rows and labels disagree");
  if (blocks.cols() != layout.total_dim()) throw ValidationError("scene classifier: blocks do not match layout");
  if (std::set<int>(labels.begin(), labels.end()).size() < 2)
    throw ConfigError("scene classifier: need at least 2 classes in the training set");

  SceneClassifier model;
  model.beta = beta;
  model.layout = layout;
  model.mean = blocks.colwise().mean().transpose();
  RowMatrix centered = blocks;
  centered.rowwise() -= model.mean.transpose();
  const Vector var = centered.colwise().squaredNorm().transpose() / static_cast<double>(std::max<Eigen::Index>(1, blocks.rows()));
  model.inv_std = var.unaryExpr([](double v) { return v > 1e-12 ? 1.0 / std::sqrt(v) : 1.0; });
  model.weights = fusion_weights(layout, beta);

  model.net = Mlp({static_cast<int>(blocks.cols()), options.hidden, options.hidden, num_classes}, options.seed);
  SgdOptions sgd;
  sgd.epochs = options.epochs;
  sgd.step = options.step;
  sgd.batch = options.batch;
  sgd.weight_decay = options.weight_decay;
  sgd.seed = options.seed + 1;
  const auto trace = train_sgd(model.net, model.prepare(blocks), soft_targets(labels, num_classes, 0.0), sgd);
  model.final_loss = trace.final_loss;
  return model;
}

namespace {

double accuracy(const std::vector<int>& truth, const std::vector<int>& pred) {
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hit += truth[i] == pred[i] ? 1 : 0;
  return truth.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(truth.size());
}

}  // namespace

BetaSelection cross_validate_beta(const RowMatrix& blocks, const std::vector<int>& labels, int num_classes,
                                  const RepresentationLayout& layout, const std::vector<double>& grid,
                                  const SceneClassifierOptions& options, std::uint64_t seed) {
  if (grid.empty()) throw ConfigError("beta cross-validation: empty grid");
  BetaSelection sel;
  sel.grid = grid;
  if (grid.size() == 1) {
    sel.beta = grid[0];
    return sel;
  }

  const std::size_t n = labels.size();
  const std::size_t held = std::max<std::size_t>(1, fraction_count(0.2, n));
  const std::set<int> all_classes(labels.begin(), labels.end());
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(n);
  bool ok = false;
  for (int attempt = 0; attempt < 2 && !ok; ++attempt) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::set<int> seen;
    for (std::size_t k = 0; k < held; ++k) seen.insert(labels[order[k]]);
    ok = seen == all_classes;
  }
  if (!ok) throw ConfigError("beta cross-validation: a class is absent from the held-out split after reshuffling");

  std::vector<std::size_t> held_rows(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(held));
  std::vector<std::size_t> fit_rows(order.begin() + static_cast<std::ptrdiff_t>(held), order.end());
  std::sort(held_rows.begin(), held_rows.end());
  std::sort(fit_rows.begin(), fit_rows.end());
  auto gather = [&](const std::vector<std::size_t>& rows, RowMatrix& X, std::vector<int>& y) {
    X.resize(static_cast<Eigen::Index>(rows.size()), blocks.cols());
    y.clear();
    for (std::size_t r = 0; r < rows.size(); ++r) {
      X.row(static_cast<Eigen::Index>(r)) = blocks.row(static_cast<Eigen::Index>(rows[r]));
      y.push_back(labels[rows[r]]);
    }
  };
  RowMatrix X_fit, X_held;
  std::vector<int> y_fit, y_held;
  gather(fit_rows, X_fit, y_fit);
  gather(held_rows, X_held, y_held);

  double best = -1.0;
  for (double beta : grid) {
    const SceneClassifier model = train_scene_classifier(X_fit, y_fit, num_classes, layout, beta, options);
    const double acc = accuracy(y_held, model.predict(X_held));
    sel.heldout_accuracy.push_back(acc);
    if (acc > best || (acc == best && beta < sel.beta)) {
      best = acc;
      sel.beta = beta;
    }
  }
  return sel;
}

EvalReport make_report(const std::vector<int>& truth, const std::vector<int>& predicted, int num_classes) {
  if (truth.size() != predicted.size()) throw ValidationError("evaluate: truth and predictions disagree in length");
  EvalReport rep;
  const auto C = static_cast<std::size_t>(num_classes);
  rep.confusion.assign(C, std::vector<std::size_t>(C, 0));
  rep.total = truth.size();
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= num_classes) throw ValidationError("evaluate: label out of range");
    ++rep.confusion[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(predicted[i])];
    hit += truth[i] == predicted[i] ? 1 : 0;
  }
  rep.overall_accuracy = rep.total == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(rep.total);
  rep.per_class_accuracy.assign(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    const std::size_t row = std::accumulate(rep.confusion[c].begin(), rep.confusion[c].end(), std::size_t{0});
    if (row > 0) rep.per_class_accuracy[c] = static_cast<double>(rep.confusion[c][c]) / static_cast<double>(row);
  }
  return rep;
}

EvalReport evaluate(const SceneClassifier& model, const RowMatrix& blocks, const std::vector<int>& labels) {
  if (static_cast<std::size_t>(blocks.rows()) != labels.size()) throw ValidationError("evaluate: rows and labels disagree");
  return make_report(labels, model.predict(blocks), model.num_classes());
}

std::string EvalReport::summary() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "accuracy " << overall_accuracy << " over " << total << " images\n";
  for (std::size_t c = 0; c < per_class_accuracy.size(); ++c)
    os << "  class " << c << ": " << per_class_accuracy[c] << '\n';
  return os.str();
}

void EvalReport::write_csv(const std::filesystem::path& eval_csv, const std::filesystem::path& confusion_csv) const {
  {
    std::ofstream out(eval_csv);
    if (!out) throw IoError("cannot write " + eval_csv.string());
    out << std::setprecision(17);
    out << "metric,value\n";
    out << "overall_accuracy," << overall_accuracy << '\n';
    out << "total," << total << '\n';
    for (std::size_t c = 0; c < per_class_accuracy.size(); ++c) out << "class_" << c << ',' << per_class_accuracy[c] << '\n';
  }
  std::ofstream out(confusion_csv);
  if (!out) throw IoError("cannot write " + confusion_csv.string());
  out << "true\\predicted";
  for (std::size_t c = 0; c < confusion.size(); ++c) out << ',' << c;
  out << '\n';
  for (std::size_t r = 0; r < confusion.size(); ++r) {
    out << r;
    for (auto v : confusion[r]) out << ',' << v;
    out << '\n';
  }
}

void SceneClassifier::to_payload(CachePayload& payload, const std::string& prefix) const {
  net.to_payload(payload, prefix + "net.");
  payload.reals[prefix + "mean"] = mean;
  payload.reals[prefix + "inv_std"] = inv_std;
  payload.reals[prefix + "weights"] = weights;
  payload.set_scalar(prefix + "beta", beta);
  payload.set_scalar(prefix + "final_loss", final_loss);
  payload.ints[prefix + "level_dims"] = std::vector<std::int64_t>(layout.level_dims.begin(), layout.level_dims.end());
  payload.ints[prefix + "holistic_dim"] = {layout.holistic_dim};
  payload.ints[prefix + "config_hash"] = {static_cast<std::int64_t>(config_hash)};
}

SceneClassifier SceneClassifier::from_payload(const CachePayload& payload, const std::string& prefix) {
  SceneClassifier m;
  m.net = Mlp::from_payload(payload, prefix + "net.");
  m.mean = payload.real(prefix + "mean");
  m.inv_std = payload.real(prefix + "inv_std");
  m.weights = payload.real(prefix + "weights");
  m.beta = payload.scalar(prefix + "beta");
  m.final_loss = payload.scalar(prefix + "final_loss");
  const auto& dims = payload.integers(prefix + "level_dims");
  m.layout.level_dims.assign(dims.begin(), dims.end());
  m.layout.holistic_dim = static_cast<int>(payload.integers(prefix + "holistic_dim").at(0));
  m.config_hash = static_cast<std::uint64_t>(payload.integers(prefix + "config_hash").at(0));
  return m;
}

}  // namespace metaobj
