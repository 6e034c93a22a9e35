#pragma once

#include <array>

#include <Eigen/Core>

#include "rcnet/common.hpp"
#include "rcnet/grid.hpp"

namespace rcnet {

// Desk-scale feature extractor: stride x stride average pooling, an optional
// 3x3 spatial convolution (c_in -> c_in, zero padded), a per-cell affine map
// (c_in -> c) and optional per-cell L2 normalisation.
struct FeatureExtractor {
  int in_dim = 0;
  int out_dim = 0;
  int stride = 8;
  bool normalize = true;
  bool use_conv = false;
  Eigen::MatrixXd weight;                // out_dim x in_dim
  Eigen::VectorXd bias;                  // out_dim
  std::array<Eigen::MatrixXd, 9> conv;   // taps in (dy, dx) raster order, each in_dim x in_dim

  void validate() const;

  static FeatureExtractor identity(int dim, int stride);
  // Orthonormal-column random weights, zero bias, identity conv taps.
  static FeatureExtractor random(int in_dim, int out_dim, int stride, Rng& rng);
};

// Intermediate activations kept for backpropagation.
struct ExtractionCache {
  FeatureMap pooled;    // c_in
  FeatureMap mixed;     // c_in, post-conv (equal to pooled without conv)
  FeatureMap affine;    // c, pre-normalisation
  std::vector<double> norms;
};

struct ExtractorGradient {
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;
  std::array<Eigen::MatrixXd, 9> conv;

  static ExtractorGradient zeros_like(const FeatureExtractor& ex);
  void scale(double s);
  void add(const ExtractorGradient& other);
  double squared_norm() const;
};

FeatureMap average_pool(const Image& image, int stride);

FeatureMap extract(const Image& image, const FeatureExtractor& extractor,
                   ExtractionCache* cache = nullptr);

// Accumulates dL/dparams given dL/df for every output cell.
void backprop(const FeatureExtractor& extractor, const ExtractionCache& cache,
              const FeatureRows& grad_features, ExtractorGradient& accum);

// params -= step * grad. When the extractor normalises its output, (W, b) is
// then rescaled to its previous Frobenius norm (the output is invariant to it).
void apply_gradient_step(FeatureExtractor& extractor, const ExtractorGradient& grad, double step);

}  // namespace rcnet
