#include "metaobj/mlp.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

namespace metaobj {

Mlp::Mlp(const std::vector<int>& sizes, std::uint64_t seed) {
  if (sizes.size() < 2) throw ConfigError("mlp: need at least input and output sizes");
  for (int s : sizes)
    if (s < 1) throw ConfigError("mlp: layer sizes must be >= 1");
  std::mt19937_64 rng(seed);
  for (std::size_t l = 1; l < sizes.size(); ++l) {
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / sizes[l - 1]));
    DenseLayer layer;
    layer.weight.resize(sizes[l], sizes[l - 1]);
    for (Eigen::Index k = 0; k < layer.weight.size(); ++k) layer.weight.data()[k] = normal(rng);
    layer.bias = Vector::Zero(sizes[l]);
    layers_.push_back(std::move(layer));
  }
}

namespace {

void check_input(const Mlp& net, const RowMatrix& X) {
  if (X.cols() != net.input_dim())
    throw ValidationError("mlp: input dimension " + std::to_string(X.cols()) + " does not match " +
                          std::to_string(net.input_dim()));
}

Matrix log_softmax(const Matrix& Z) {
  Matrix L = Z;
  for (Eigen::Index r = 0; r < L.rows(); ++r) {
    const double m = L.row(r).maxCoeff();
    L.row(r).array() -= m + std::log((L.row(r).array() - m).exp().sum());
  }
  return L;
}

}  // namespace

Matrix Mlp::logits(const RowMatrix& X) const {
  check_input(*this, X);
  Matrix A = X;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Matrix Z = A * layers_[l].weight.transpose();
    Z.rowwise() += layers_[l].bias.transpose();
    A = l + 1 < layers_.size() ? Matrix(Z.cwiseMax(0.0)) : std::move(Z);
  }
  return A;
}

Matrix Mlp::probabilities(const RowMatrix& X) const { return softmax_rows(logits(X)); }

double Mlp::loss(const RowMatrix& X, const Matrix& targets) const {
  const Matrix L = log_softmax(logits(X));
  return -(targets.array() * L.array()).sum() / static_cast<double>(X.rows());
}

double Mlp::loss_and_gradient(const RowMatrix& X, const Matrix& targets, std::vector<DenseLayer>& grad) const {
  check_input(*this, X);
  const auto n = static_cast<double>(X.rows());
  std::vector<Matrix> acts;  // input to each layer
  std::vector<Matrix> pre;   // pre-activation of each layer
  acts.emplace_back(X);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Matrix Z = acts.back() * layers_[l].weight.transpose();
    Z.rowwise() += layers_[l].bias.transpose();
    pre.push_back(Z);
    if (l + 1 < layers_.size()) acts.emplace_back(Z.cwiseMax(0.0));
  }
  const Matrix L = log_softmax(pre.back());
  const double loss = -(targets.array() * L.array()).sum() / n;

  grad.resize(layers_.size());
  // Soft targets sum to 1 per row, so d(loss)/d(logits) = (P - T) / n.
  Matrix dZ = (L.array().exp().matrix() - targets) / n;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    grad[l].weight = dZ.transpose() * acts[l];
    grad[l].bias = dZ.colwise().sum().transpose();
    if (l > 0) {
      Matrix dA = dZ * layers_[l].weight;
      dZ = (pre[l - 1].array() > 0.0).select(dA, 0.0);
    }
  }
  return loss;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

Vector Mlp::flatten(const std::vector<DenseLayer>& layers) {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  Vector theta(static_cast<Eigen::Index>(n));
  Eigen::Index pos = 0;
  for (const auto& l : layers) {
    theta.segment(pos, l.weight.size()) = l.weight.reshaped();
    pos += l.weight.size();
    theta.segment(pos, l.bias.size()) = l.bias;
    pos += l.bias.size();
  }
  return theta;
}

Vector Mlp::flat_parameters() const { return flatten(layers_); }

void Mlp::set_flat_parameters(const Vector& theta) {
  if (static_cast<std::size_t>(theta.size()) != parameter_count()) throw ValidationError("mlp: parameter size mismatch");
  Eigen::Index pos = 0;
  for (auto& l : layers_) {
    l.weight.reshaped() = theta.segment(pos, l.weight.size());
    pos += l.weight.size();
    l.bias = theta.segment(pos, l.bias.size());
    pos += l.bias.size();
  }
}

void Mlp::to_payload(CachePayload& payload, const std::string& prefix) const {
  payload.set_scalar(prefix + "layers", static_cast<double>(layers_.size()));
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    payload.reals[prefix + "W" + std::to_string(l)] = layers_[l].weight;
    payload.reals[prefix + "b" + std::to_string(l)] = layers_[l].bias;
  }
}

Mlp Mlp::from_payload(const CachePayload& payload, const std::string& prefix) {
  Mlp net;
  const auto count = static_cast<std::size_t>(payload.scalar(prefix + "layers"));
  for (std::size_t l = 0; l < count; ++l)
    net.layers_.push_back({payload.real(prefix + "W" + std::to_string(l)), payload.real(prefix + "b" + std::to_string(l))});
  return net;
}

SgdTrace train_sgd(Mlp& net, const RowMatrix& X, const Matrix& targets, const SgdOptions& options) {
  if (X.rows() == 0) throw ValidationError("sgd: empty training set");
  if (targets.rows() != X.rows() || targets.cols() != net.output_dim())
    throw ValidationError("sgd: target shape does not match data and network");
  if (options.epochs < 0 || options.batch < 1 || !(options.step > 0.0)) throw ConfigError("sgd: bad options");

  std::mt19937_64 rng(options.seed);
  const auto n = static_cast<std::size_t>(X.rows());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::vector<DenseLayer> velocity = net.layers();
  for (auto& v : velocity) {
    v.weight.setZero();
    v.bias.setZero();
  }
  std::vector<DenseLayer> grad;
  SgdTrace trace;
  const auto batch = static_cast<std::size_t>(options.batch);
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    const double lr = options.step * 0.5 * (1.0 + std::cos(std::numbers::pi * epoch / options.epochs));
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t stop = std::min(n, start + batch);
      RowMatrix xb(static_cast<Eigen::Index>(stop - start), X.cols());
      Matrix tb(static_cast<Eigen::Index>(stop - start), targets.cols());
      for (std::size_t r = start; r < stop; ++r) {
        xb.row(static_cast<Eigen::Index>(r - start)) = X.row(static_cast<Eigen::Index>(order[r]));
        tb.row(static_cast<Eigen::Index>(r - start)) = targets.row(static_cast<Eigen::Index>(order[r]));
      }
      const double l = net.loss_and_gradient(xb, tb, grad);
      if (!std::isfinite(l))
        throw NumericalError("training diverged (non-finite loss) at epoch " + std::to_string(epoch) +
                             " with step size " + std::to_string(options.step));
      epoch_loss += l * static_cast<double>(stop - start);
      auto& layers = net.layers();
      for (std::size_t k = 0; k < layers.size(); ++k) {
        if (options.weight_decay > 0.0) grad[k].weight += options.weight_decay * layers[k].weight;
        velocity[k].weight = options.momentum * velocity[k].weight - lr * grad[k].weight;
        velocity[k].bias = options.momentum * velocity[k].bias - lr * grad[k].bias;
        layers[k].weight += velocity[k].weight;
        layers[k].bias += velocity[k].bias;
      }
    }
    trace.epoch_loss.push_back(epoch_loss / static_cast<double>(n));
  }
  trace.final_loss = net.loss(X, targets);
  if (!std::isfinite(trace.final_loss))
    throw NumericalError("training diverged (non-finite loss) with step size " + std::to_string(options.step));
  return trace;
}

Matrix soft_targets(const std::vector<int>& labels, int classes, double smoothing, const std::vector<bool>& smooth_row) {
  Matrix T = Matrix::Zero(static_cast<Eigen::Index>(labels.size()), classes);
  for (std::size_t r = 0; r < labels.size(); ++r) {
    const auto row = static_cast<Eigen::Index>(r);
    if (labels[r] < 0 || labels[r] >= classes) throw ValidationError("label out of range: " + std::to_string(labels[r]));
    const bool smooth = smoothing > 0.0 && (smooth_row.empty() || smooth_row[r]);
    if (smooth) {
      T.row(row).setConstant(smoothing / classes);
      T(row, labels[r]) += 1.0 - smoothing;
    } else {
      T(row, labels[r]) = 1.0;
    }
  }
  return T;
}

}  // namespace metaobj
