#pragma once

// Dense inner-loop kernels over double vectors. A scalar reference set is
// always present; an AVX2+FMA set is compiled on x86-64 and chosen at
// runtime when the CPU supports it. RCNET_SIMD=scalar|avx2 overrides.

#include <cstddef>
#include <span>
#include <string_view>

namespace rcnet::kernels {

enum class Isa { scalar, avx2 };

struct KernelTable {
  std::string_view name;
  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*squared_distance)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // out = sum_k w[k] * rows[k], k < 4
  void (*blend4)(const double* w, const double* const* rows, double* out, std::size_t n);
};

bool available(Isa isa) noexcept;
const KernelTable& table(Isa isa);
const KernelTable& active() noexcept;
Isa active_isa() noexcept;
// Throws InvalidArgument when the ISA is not available on this build/CPU.
void select(Isa isa);

namespace detail {
extern const KernelTable scalar_table;
#if defined(RCNET_WITH_AVX2)
extern const KernelTable avx2_table;
#endif
}  // namespace detail

inline double dot(std::span<const double> a, std::span<const double> b) {
  return active().dot(a.data(), b.data(), a.size());
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  return active().squared_distance(a.data(), b.data(), a.size());
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  active().axpy(alpha, x.data(), y.data(), y.size());
}

}  // namespace rcnet::kernels
