#pragma once

#include <vector>

#include <Eigen/Core>

#include "rcnet/camera.hpp"
#include "rcnet/extractor.hpp"
#include "rcnet/grid.hpp"

namespace rcnet {

// Multinomial logistic regression on centred, per-column scaled inputs:
// p = softmax((W * (x - mean) / scale + b) / temperature).
struct LinearSoftmax {
  Eigen::MatrixXd weight;  // K x D
  Eigen::VectorXd bias;    // K
  Eigen::VectorXd input_mean;
  Eigen::VectorXd input_scale;
  double temperature = 1.0;

  int outputs() const { return static_cast<int>(weight.rows()); }
  int inputs() const { return static_cast<int>(weight.cols()); }
  static LinearSoftmax zeros(int outputs, int inputs);
  void validate() const;
  Eigen::VectorXd logits(const Eigen::VectorXd& x) const;
  std::vector<double> probabilities(const Eigen::VectorXd& x) const;
};

struct HeadOutput {
  std::vector<double> class_probs;
  std::vector<double> pose_probs;
};

struct FeedForwardHeads {
  LinearSoftmax class_head;
  LinearSoftmax pose_head;
  PoseGridShape pose_shape;
  PoseBands bands;
  int pose_pool = 8;  // pose head sees a pose_pool x pose_pool grid of cell averages

  void validate() const;
  HeadOutput predict(const FeatureMap& features) const;
};

// Global average over the lattice.
Eigen::VectorXd class_head_input(const FeatureMap& features);
// Averages over a pool x pool partition of the lattice, concatenated row-major.
Eigen::VectorXd pose_head_input(const FeatureMap& features, int pool);

// Indices of the k largest entries, largest first, lower index on ties.
std::vector<int> top_k(const std::vector<double>& values, int k);

struct HeadSample {
  FeatureMap features;
  int class_id = 0;
  int pose_bin = 0;
};

struct HeadTrainConfig {
  int iterations = 200;
  double learning_rate = 1.0;  // in units of the inverse curvature bound
  double momentum = 0.9;
  double l2 = 1e-4;
  int pose_pool = 8;
  int holdout_every = 5;  // every n-th sample calibrates the temperature
  PoseGridShape pose_shape;
  PoseBands bands;

  void validate() const;
};

// Fits W on a plain design matrix X (rows = samples) with integer labels by
// full-batch gradient descent on mean cross-entropy plus l2 |W|^2.
LinearSoftmax fit_softmax(const Eigen::MatrixXd& x, const std::vector<int>& labels, int classes,
                          const HeadTrainConfig& config);

// Temperature minimising the mean negative log-likelihood of `labels`.
double fit_temperature(const LinearSoftmax& head, const Eigen::MatrixXd& x, const std::vector<int>& labels);

FeedForwardHeads train_heads(const std::vector<HeadSample>& samples, int classes, const HeadTrainConfig& config);

}  // namespace rcnet
