#include "rcnet/heads.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>

namespace rcnet {

namespace {

constexpr double kScaleFloor = 0.1;

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& z) {
  Eigen::MatrixXd p(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double m = z.row(i).maxCoeff();
    p.row(i) = (z.row(i).array() - m).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

double mean_nll(const Eigen::MatrixXd& z, const std::vector<int>& labels, double beta) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const Eigen::ArrayXd row = beta * z.row(i).transpose().array();
    const double m = row.maxCoeff();
    s += m + std::log((row - m).exp().sum()) - row(labels[static_cast<std::size_t>(i)]);
  }
  return s / static_cast<double>(z.rows());
}

Eigen::MatrixXd standardize(const LinearSoftmax& head, const Eigen::MatrixXd& x) {
  return (x.rowwise() - head.input_mean.transpose()).array().rowwise() / head.input_scale.transpose().array();
}

// Largest eigenvalue of [x 1]^T [x 1] * scale, by power iteration.
double top_eigenvalue(const Eigen::MatrixXd& x, double scale) {
  Eigen::VectorXd v = Eigen::VectorXd::Ones(x.cols() + 1);
  double lambda = 0.0;
  for (int it = 0; it < 100; ++it) {
    const Eigen::VectorXd xv = x * v.head(x.cols()) + Eigen::VectorXd::Constant(x.rows(), v(x.cols()));
    Eigen::VectorXd w(x.cols() + 1);
    w.head(x.cols()) = x.transpose() * xv;
    w(x.cols()) = xv.sum();
    w *= scale;
    const double next = w.norm();
    if (next == 0.0) return 1.0;
    v = w / next;
    if (std::abs(next - lambda) <= 1e-9 * next) return next;
    lambda = next;
  }
  return lambda;
}

void check_labels(const std::vector<int>& labels, int classes, Eigen::Index rows) {
  if (static_cast<Eigen::Index>(labels.size()) != rows) throw InvalidArgument("one label per sample");
  for (int l : labels) {
    if (l < 0 || l >= classes) throw InvalidDataset("label outside the head's output range");
  }
}

}  // namespace

LinearSoftmax LinearSoftmax::zeros(int outputs, int inputs) {
  LinearSoftmax h;
  h.weight = Eigen::MatrixXd::Zero(outputs, inputs);
  h.bias = Eigen::VectorXd::Zero(outputs);
  h.input_mean = Eigen::VectorXd::Zero(inputs);
  h.input_scale = Eigen::VectorXd::Ones(inputs);
  return h;
}

void LinearSoftmax::validate() const {
  if (weight.rows() < 1 || weight.cols() < 1) throw InvalidArgument("softmax head has no parameters");
  if (bias.size() != weight.rows() || input_mean.size() != weight.cols() || input_scale.size() != weight.cols()) {
    throw InvalidArgument("softmax head shapes disagree");
  }
  if (!weight.allFinite() || !bias.allFinite() || !input_mean.allFinite() || !input_scale.allFinite()) {
    throw InvalidArgument("softmax head parameters not finite");
  }
  if ((input_scale.array() <= 0.0).any()) throw InvalidArgument("softmax input scale must be positive");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw InvalidArgument("temperature must be positive");
}

Eigen::VectorXd LinearSoftmax::logits(const Eigen::VectorXd& x) const {
  if (x.size() != weight.cols()) throw InvalidArgument("softmax input dimension mismatch");
  const Eigen::VectorXd xs = (x - input_mean).cwiseQuotient(input_scale);
  return (weight * xs + bias) / temperature;
}

std::vector<double> LinearSoftmax::probabilities(const Eigen::VectorXd& x) const {
  const Eigen::VectorXd z = logits(x);
  const double m = z.maxCoeff();
  Eigen::VectorXd e = (z.array() - m).exp();
  e /= e.sum();
  return {e.data(), e.data() + e.size()};
}

void FeedForwardHeads::validate() const {
  class_head.validate();
  pose_head.validate();
  if (pose_head.outputs() != pose_shape.size()) throw InvalidArgument("pose head size differs from the pose grid");
  if (pose_pool < 1) throw InvalidArgument("pose pooling must be positive");
  if (pose_head.inputs() != class_head.inputs() * pose_pool * pose_pool) {
    throw InvalidArgument("pose head input size disagrees with the pooling");
  }
}

HeadOutput FeedForwardHeads::predict(const FeatureMap& features) const {
  HeadOutput out;
  out.class_probs = class_head.probabilities(class_head_input(features));
  out.pose_probs = pose_head.probabilities(pose_head_input(features, pose_pool));
  return out;
}

Eigen::VectorXd class_head_input(const FeatureMap& features) {
  const auto dim = static_cast<Eigen::Index>(features.dim());
  Eigen::VectorXd x = Eigen::VectorXd::Zero(dim);
  for (std::size_t i = 0; i < features.size(); ++i) {
    x += Eigen::Map<const Eigen::VectorXd>(features.cells.data(i), dim);
  }
  if (features.size() > 0) x /= static_cast<double>(features.size());
  return x;
}

Eigen::VectorXd pose_head_input(const FeatureMap& features, int pool) {
  if (pool < 1 || pool > features.height || pool > features.width) {
    throw InvalidArgument("pose pooling exceeds the feature lattice");
  }
  const auto dim = static_cast<Eigen::Index>(features.dim());
  Eigen::VectorXd x = Eigen::VectorXd::Zero(dim * pool * pool);
  std::vector<int> counts(static_cast<std::size_t>(pool) * pool, 0);
  for (int y = 0; y < features.height; ++y) {
    const int by = y * pool / features.height;
    for (int xx = 0; xx < features.width; ++xx) {
      const int bx = xx * pool / features.width;
      const int b = by * pool + bx;
      x.segment(b * dim, dim) += Eigen::Map<const Eigen::VectorXd>(features.at(y, xx).data(), dim);
      ++counts[static_cast<std::size_t>(b)];
    }
  }
  for (int b = 0; b < pool * pool; ++b) x.segment(b * dim, dim) /= counts[static_cast<std::size_t>(b)];
  return x;
}

std::vector<int> top_k(const std::vector<double>& values, int k) {
  std::vector<int> idx(values.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return values[a] > values[b]; });
  idx.resize(std::min<std::size_t>(idx.size(), static_cast<std::size_t>(std::max(k, 0))));
  return idx;
}

void HeadTrainConfig::validate() const {
  if (iterations < 0) throw InvalidArgument("head iterations must be non-negative");
  if (!(learning_rate > 0.0)) throw InvalidArgument("head learning rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidArgument("head momentum must lie in [0, 1)");
  if (!(l2 >= 0.0)) throw InvalidArgument("head l2 must be non-negative");
  if (pose_pool < 1) throw InvalidArgument("pose pooling must be positive");
  if (holdout_every < 2) throw InvalidArgument("holdout period must be at least 2");
}

LinearSoftmax fit_softmax(const Eigen::MatrixXd& x, const std::vector<int>& labels, int classes,
                          const HeadTrainConfig& config) {
  config.validate();
  if (x.rows() == 0) throw InvalidDataset("no samples to fit");
  check_labels(labels, classes, x.rows());
  const auto d = static_cast<int>(x.cols());
  LinearSoftmax head = LinearSoftmax::zeros(classes, d);
  head.input_mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd centred = x.rowwise() - head.input_mean.transpose();
  // Per-column scales, floored so near-constant columns are not inflated into noise.
  const Eigen::VectorXd sd = (centred.colwise().squaredNorm().transpose() / static_cast<double>(x.rows())).cwiseSqrt();
  const double floor = std::max(kScaleFloor * std::sqrt(sd.squaredNorm() / static_cast<double>(d)), 1e-12);
  head.input_scale = sd.cwiseMax(floor);
  const Eigen::MatrixXd xs = standardize(head, x);

  Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(x.rows(), classes);
  for (Eigen::Index i = 0; i < x.rows(); ++i) onehot(i, labels[static_cast<std::size_t>(i)]) = 1.0;
  Eigen::MatrixXd vw = Eigen::MatrixXd::Zero(classes, d);
  Eigen::VectorXd vb = Eigen::VectorXd::Zero(classes);
  const double inv_n = 1.0 / static_cast<double>(x.rows());
  // The cross-entropy Hessian is bounded by (1/2) lambda_max([xs 1]^T [xs 1] / n).
  const double step = config.learning_rate / (0.5 * top_eigenvalue(xs, inv_n) + 2.0 * config.l2);
  for (int it = 0; it < config.iterations; ++it) {
    // Nesterov look-ahead.
    const Eigen::MatrixXd w_look = head.weight + config.momentum * vw;
    const Eigen::VectorXd b_look = head.bias + config.momentum * vb;
    Eigen::MatrixXd z = xs * w_look.transpose();
    z.rowwise() += b_look.transpose();
    const Eigen::MatrixXd g = (softmax_rows(z) - onehot) * inv_n;
    const Eigen::MatrixXd gw = g.transpose() * xs + 2.0 * config.l2 * w_look;
    const Eigen::VectorXd gb = g.colwise().sum().transpose();
    vw = config.momentum * vw - step * gw;
    vb = config.momentum * vb - step * gb;
    head.weight += vw;
    head.bias += vb;
  }
  return head;
}

double fit_temperature(const LinearSoftmax& head, const Eigen::MatrixXd& x, const std::vector<int>& labels) {
  if (x.rows() == 0) return 1.0;
  check_labels(labels, head.outputs(), x.rows());
  LinearSoftmax raw = head;
  raw.temperature = 1.0;
  Eigen::MatrixXd z = standardize(raw, x) * raw.weight.transpose();
  z.rowwise() += raw.bias.transpose();
  // NLL is convex in beta = 1 / T; golden-section search over log beta.
  double lo = std::log(1e-3), hi = std::log(1e2);
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = hi - phi * (hi - lo), b = lo + phi * (hi - lo);
  double fa = mean_nll(z, labels, std::exp(a)), fb = mean_nll(z, labels, std::exp(b));
  for (int it = 0; it < 80; ++it) {
    if (fa <= fb) {
      hi = b;
      b = a;
      fb = fa;
      a = hi - phi * (hi - lo);
      fa = mean_nll(z, labels, std::exp(a));
    } else {
      lo = a;
      a = b;
      fa = fb;
      b = lo + phi * (hi - lo);
      fb = mean_nll(z, labels, std::exp(b));
    }
  }
  return 1.0 / std::exp(0.5 * (lo + hi));
}

FeedForwardHeads train_heads(const std::vector<HeadSample>& samples, int classes, const HeadTrainConfig& config) {
  config.validate();
  if (classes < 2) throw InvalidDataset("heads need at least two classes");
  if (samples.empty()) throw InvalidDataset("no samples for head training");
  std::vector<int> seen(static_cast<std::size_t>(classes), 0);
  for (const auto& s : samples) {
    if (s.class_id < 0 || s.class_id >= classes) throw InvalidDataset("head sample class outside range");
    if (s.pose_bin < 0 || s.pose_bin >= config.pose_shape.size()) throw InvalidDataset("pose bin outside grid");
    seen[static_cast<std::size_t>(s.class_id)] = 1;
  }
  if (std::count(seen.begin(), seen.end(), 1) < 2) throw InvalidDataset("head training set has a single class");

  const auto dim = static_cast<Eigen::Index>(samples.front().features.dim());
  const int pool = config.pose_pool;
  const auto n = static_cast<Eigen::Index>(samples.size());
  Eigen::MatrixXd xc(n, dim), xp(n, dim * pool * pool);
  for (Eigen::Index i = 0; i < n; ++i) {
    const FeatureMap& f = samples[static_cast<std::size_t>(i)].features;
    if (static_cast<Eigen::Index>(f.dim()) != dim) throw InvalidDataset("head samples differ in feature dimension");
    xc.row(i) = class_head_input(f).transpose();
    xp.row(i) = pose_head_input(f, pool).transpose();
  }

  std::vector<Eigen::Index> fit_idx, cal_idx;
  for (Eigen::Index i = 0; i < n; ++i) {
    (n >= 2 * config.holdout_every && i % config.holdout_every == config.holdout_every - 1 ? cal_idx : fit_idx)
        .push_back(i);
  }
  auto rows = [](const Eigen::MatrixXd& m, const std::vector<Eigen::Index>& idx) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), m.cols());
    for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = m.row(idx[k]);
    return out;
  };
  auto labels = [&](const std::vector<Eigen::Index>& idx, bool pose) {
    std::vector<int> out;
    for (Eigen::Index i : idx) {
      const auto& s = samples[static_cast<std::size_t>(i)];
      out.push_back(pose ? s.pose_bin : s.class_id);
    }
    return out;
  };
  const std::vector<Eigen::Index>& cal = cal_idx.empty() ? fit_idx : cal_idx;

  FeedForwardHeads heads;
  heads.pose_shape = config.pose_shape;
  heads.bands = config.bands;
  heads.pose_pool = pool;
  heads.class_head = fit_softmax(rows(xc, fit_idx), labels(fit_idx, false), classes, config);
  heads.class_head.temperature = fit_temperature(heads.class_head, rows(xc, cal), labels(cal, false));
  heads.pose_head = fit_softmax(rows(xp, fit_idx), labels(fit_idx, true), config.pose_shape.size(), config);
  heads.pose_head.temperature = fit_temperature(heads.pose_head, rows(xp, cal), labels(cal, true));
  return heads;
}

}  // namespace rcnet
