#include "rcnet/kernels.hpp"

namespace rcnet::kernels::detail {

namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

double squared_distance_scalar(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void blend4_scalar(const double* w, const double* const* rows, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = w[0] * rows[0][i] + w[1] * rows[1][i] + w[2] * rows[2][i] + w[3] * rows[3][i];
  }
}

}  // namespace

const KernelTable scalar_table{"scalar", dot_scalar, squared_distance_scalar, axpy_scalar,
                               blend4_scalar};

}  // namespace rcnet::kernels::detail
