#pragma once

#include <cstddef>
#include <vector>

#include "rcnet/common.hpp"

namespace rcnet {

// Appearance image, H' x W' x c_in, row-major, channel-fastest.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> values;

  Image() = default;
  Image(int h, int w, int c, float fill = 0.0f)
      : height(h), width(w), channels(c), values(static_cast<std::size_t>(h) * w * c, fill) {}

  std::size_t offset(int y, int x) const {
    return (static_cast<std::size_t>(y) * width + x) * channels;
  }
  float* pixel(int y, int x) { return values.data() + offset(y, x); }
  const float* pixel(int y, int x) const { return values.data() + offset(y, x); }
  friend bool operator==(const Image&, const Image&) = default;
};

enum class Provenance { extracted, rendered };

// Feature lattice F: H x W cells, each a c-dimensional vector f_i.
// Cell index i = y * width + x.
struct FeatureMap {
  int height = 0;
  int width = 0;
  FeatureRows cells;
  Provenance provenance = Provenance::extracted;

  FeatureMap() = default;
  FeatureMap(int h, int w, std::size_t dim, Provenance p = Provenance::extracted)
      : height(h), width(w), cells(static_cast<std::size_t>(h) * w, dim), provenance(p) {}

  std::size_t size() const { return cells.rows; }
  std::size_t dim() const { return cells.dim; }
  std::span<const double> at(std::size_t i) const { return cells.row(i); }
  std::span<double> at(std::size_t i) { return cells.row(i); }
  std::span<const double> at(int y, int x) const {
    return cells.row(static_cast<std::size_t>(y) * width + x);
  }
};

}  // namespace rcnet
