#include "rcnet/extractor.hpp"

#include <cmath>
#include <random>

#include <Eigen/Dense>

namespace rcnet {

namespace {

constexpr double kNormFloor = 1e-12;

template <class T>
Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> as_vec(const T* p, std::size_t n) {
  return {p, static_cast<Eigen::Index>(n)};
}
Eigen::Map<Eigen::VectorXd> as_mut(double* p, std::size_t n) { return {p, static_cast<Eigen::Index>(n)}; }

// Tap order matches FeatureExtractor::conv: t = (dy + 1) * 3 + (dx + 1).
void conv3x3(const FeatureExtractor& ex, const FeatureMap& in, FeatureMap& out) {
  out = FeatureMap(in.height, in.width, in.dim());
  const auto dim = static_cast<std::size_t>(ex.in_dim);
  for (int y = 0; y < in.height; ++y) {
    for (int x = 0; x < in.width; ++x) {
      auto dst = as_mut(out.cells.data(static_cast<std::size_t>(y) * in.width + x), dim);
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int sy = y + dy, sx = x + dx;
          if (sy < 0 || sx < 0 || sy >= in.height || sx >= in.width) continue;
          dst.noalias() += ex.conv[(dy + 1) * 3 + (dx + 1)] * as_vec(in.at(sy, sx).data(), dim);
        }
      }
    }
  }
}

}  // namespace

void FeatureExtractor::validate() const {
  if (in_dim < 1 || out_dim < 1) throw InvalidArgument("extractor dimensions must be positive");
  if (stride < 1) throw InvalidArgument("extractor stride must be positive");
  if (weight.rows() != out_dim || weight.cols() != in_dim) throw InvalidArgument("extractor weight shape");
  if (bias.size() != out_dim) throw InvalidArgument("extractor bias shape");
  if (!weight.allFinite() || !bias.allFinite()) throw InvalidArgument("extractor weights not finite");
  if (use_conv) {
    for (const auto& k : conv) {
      if (k.rows() != in_dim || k.cols() != in_dim || !k.allFinite()) {
        throw InvalidArgument("extractor conv taps malformed");
      }
    }
  }
}

FeatureExtractor FeatureExtractor::identity(int dim, int stride) {
  FeatureExtractor ex;
  ex.in_dim = ex.out_dim = dim;
  ex.stride = stride;
  ex.normalize = false;
  ex.weight = Eigen::MatrixXd::Identity(dim, dim);
  ex.bias = Eigen::VectorXd::Zero(dim);
  for (int t = 0; t < 9; ++t) {
    if (t == 4) {
      ex.conv[t] = Eigen::MatrixXd::Identity(dim, dim);
    } else {
      ex.conv[t] = Eigen::MatrixXd::Zero(dim, dim);
    }
  }
  return ex;
}

FeatureExtractor FeatureExtractor::random(int in_dim, int out_dim, int stride, Rng& rng) {
  if (in_dim < 1 || out_dim < 1) throw InvalidArgument("extractor dimensions must be positive");
  FeatureExtractor ex = identity(in_dim, stride);
  ex.out_dim = out_dim;
  ex.normalize = true;
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd g(std::max(in_dim, out_dim), std::min(in_dim, out_dim));
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = normal(rng);
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  const Eigen::MatrixXd q =
      qr.householderQ() * Eigen::MatrixXd::Identity(g.rows(), g.cols());
  ex.weight = out_dim >= in_dim ? q : Eigen::MatrixXd(q.transpose());
  ex.bias = Eigen::VectorXd::Zero(out_dim);
  return ex;
}

ExtractorGradient ExtractorGradient::zeros_like(const FeatureExtractor& ex) {
  ExtractorGradient g;
  g.weight = Eigen::MatrixXd::Zero(ex.out_dim, ex.in_dim);
  g.bias = Eigen::VectorXd::Zero(ex.out_dim);
  for (auto& k : g.conv) k = Eigen::MatrixXd::Zero(ex.use_conv ? ex.in_dim : 0, ex.use_conv ? ex.in_dim : 0);
  return g;
}

void ExtractorGradient::scale(double s) {
  weight *= s;
  bias *= s;
  for (auto& k : conv) k *= s;
}

void ExtractorGradient::add(const ExtractorGradient& other) {
  weight += other.weight;
  bias += other.bias;
  for (int t = 0; t < 9; ++t) conv[t] += other.conv[t];
}

double ExtractorGradient::squared_norm() const {
  double s = weight.squaredNorm() + bias.squaredNorm();
  for (const auto& k : conv) s += k.squaredNorm();
  return s;
}

FeatureMap average_pool(const Image& image, int stride) {
  if (stride < 1) throw InvalidArgument("pooling stride must be positive");
  if (image.height % stride != 0 || image.width % stride != 0 || image.height == 0 || image.width == 0) {
    throw InvalidArgument("image dimensions must be positive multiples of the stride");
  }
  const int h = image.height / stride, w = image.width / stride;
  const auto c = static_cast<std::size_t>(image.channels);
  FeatureMap out(h, w, c);
  const double inv = 1.0 / (static_cast<double>(stride) * stride);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double* dst = out.cells.data(static_cast<std::size_t>(y) * w + x);
      for (int sy = 0; sy < stride; ++sy) {
        for (int sx = 0; sx < stride; ++sx) {
          const float* src = image.pixel(y * stride + sy, x * stride + sx);
          for (std::size_t k = 0; k < c; ++k) dst[k] += src[k];
        }
      }
      for (std::size_t k = 0; k < c; ++k) dst[k] *= inv;
    }
  }
  return out;
}

FeatureMap extract(const Image& image, const FeatureExtractor& ex, ExtractionCache* cache) {
  ex.validate();
  if (image.channels != ex.in_dim) throw InvalidArgument("image channels differ from extractor input");
  FeatureMap pooled = average_pool(image, ex.stride);
  FeatureMap mixed;
  if (ex.use_conv) {
    conv3x3(ex, pooled, mixed);
  } else {
    mixed = pooled;
  }
  const auto in = static_cast<std::size_t>(ex.in_dim), out_dim = static_cast<std::size_t>(ex.out_dim);
  FeatureMap out(pooled.height, pooled.width, out_dim);
  FeatureMap affine;
  if (cache) affine = FeatureMap(pooled.height, pooled.width, out_dim);
  std::vector<double> norms(cache ? out.size() : 0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto g = as_mut(out.cells.data(i), out_dim);
    g.noalias() = ex.weight * as_vec(mixed.cells.data(i), in) + ex.bias;
    if (cache) std::copy(g.data(), g.data() + out_dim, affine.cells.data(i));
    if (ex.normalize) {
      const double n = std::max(g.norm(), kNormFloor);
      g /= n;
      if (cache) norms[i] = n;
    }
  }
  if (cache) {
    cache->pooled = std::move(pooled);
    cache->mixed = std::move(mixed);
    cache->affine = std::move(affine);
    cache->norms = std::move(norms);
  }
  return out;
}

void backprop(const FeatureExtractor& ex, const ExtractionCache& cache, const FeatureRows& grad_features,
              ExtractorGradient& accum) {
  const auto in = static_cast<std::size_t>(ex.in_dim), out_dim = static_cast<std::size_t>(ex.out_dim);
  if (grad_features.dim != out_dim || grad_features.rows != cache.affine.size()) {
    throw InvalidArgument("feature gradient shape differs from extractor output");
  }
  Eigen::VectorXd dg(static_cast<Eigen::Index>(out_dim));
  FeatureRows d_mixed;
  if (ex.use_conv) d_mixed = FeatureRows(cache.mixed.size(), in);
  for (std::size_t i = 0; i < grad_features.rows; ++i) {
    const auto df = as_vec(grad_features.data(i), out_dim);
    if (df.squaredNorm() == 0.0) continue;
    if (ex.normalize) {
      const auto g = as_vec(cache.affine.cells.data(i), out_dim);
      const double n = cache.norms[i];
      const Eigen::VectorXd f = g / n;
      dg = (df - f * f.dot(df)) / n;
    } else {
      dg = df;
    }
    const auto z = as_vec(cache.mixed.cells.data(i), in);
    accum.weight.noalias() += dg * z.transpose();
    accum.bias += dg;
    if (ex.use_conv) as_mut(d_mixed.data(i), in).noalias() = ex.weight.transpose() * dg;
  }
  if (!ex.use_conv) return;
  const FeatureMap& x = cache.pooled;
  for (int y = 0; y < x.height; ++y) {
    for (int xx = 0; xx < x.width; ++xx) {
      const auto dz = as_vec(d_mixed.data(static_cast<std::size_t>(y) * x.width + xx), in);
      if (dz.squaredNorm() == 0.0) continue;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int sy = y + dy, sx = xx + dx;
          if (sy < 0 || sx < 0 || sy >= x.height || sx >= x.width) continue;
          accum.conv[(dy + 1) * 3 + (dx + 1)].noalias() +=
              dz * as_vec(x.at(sy, sx).data(), in).transpose();
        }
      }
    }
  }
}

void apply_gradient_step(FeatureExtractor& ex, const ExtractorGradient& grad, double step) {
  const double before = std::sqrt(ex.weight.squaredNorm() + ex.bias.squaredNorm());
  ex.weight -= step * grad.weight;
  ex.bias -= step * grad.bias;
  if (ex.use_conv) {
    for (int t = 0; t < 9; ++t) ex.conv[t] -= step * grad.conv[t];
  }
  if (ex.normalize) {
    const double after = std::sqrt(ex.weight.squaredNorm() + ex.bias.squaredNorm());
    if (after > 0.0) {
      ex.weight *= before / after;
      ex.bias *= before / after;
    }
  }
}

}  // namespace rcnet
