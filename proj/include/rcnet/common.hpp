#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rcnet {

// Error hierarchy. Each error carries the process exit code the CLI maps it to.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

class InvalidState : public Error {
 public:
  using Error::Error;
};

class InvalidDataset : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

class IoError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

// Schema or format-version mismatch in a persisted artifact.
class FormatError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
};

using Rng = std::mt19937_64;

// Derives an independent seed for a named subsystem from the root seed.
std::uint64_t derive_seed(std::uint64_t root, std::string_view tag, std::uint64_t index = 0);

// Row-major table of fixed-width real vectors. Used for neural textures
// (one row per vertex) and for feature maps (one row per lattice cell).
struct FeatureRows {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<double> values;

  FeatureRows() = default;
  FeatureRows(std::size_t rows_, std::size_t dim_, double fill = 0.0)
      : rows(rows_), dim(dim_), values(rows_ * dim_, fill) {}

  std::span<double> row(std::size_t r) { return {values.data() + r * dim, dim}; }
  std::span<const double> row(std::size_t r) const { return {values.data() + r * dim, dim}; }
  const double* data(std::size_t r) const { return values.data() + r * dim; }
  double* data(std::size_t r) { return values.data() + r * dim; }
  bool empty() const { return rows == 0; }
  friend bool operator==(const FeatureRows&, const FeatureRows&) = default;
};

// Worker count: RCNET_THREADS when set, otherwise hardware concurrency.
unsigned default_threads();

// Runs fn(i) for i in [0, n) on up to `threads` workers. The caller owns
// result placement (write into slot i), so output never depends on scheduling.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn);

}  // namespace rcnet
