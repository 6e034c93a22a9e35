#include <atomic>
#include <cstdlib>
#include <string_view>

#include "rcnet/common.hpp"
#include "rcnet/kernels.hpp"

namespace rcnet::kernels {

namespace {

bool cpu_has_avx2() noexcept {
#if defined(RCNET_WITH_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* initial_table() noexcept {
  const char* env = std::getenv("RCNET_SIMD");
  if (env && std::string_view(env) == "scalar") return &detail::scalar_table;
#if defined(RCNET_WITH_AVX2)
  if (cpu_has_avx2()) return &detail::avx2_table;
#endif
  return &detail::scalar_table;
}

std::atomic<const KernelTable*>& current() noexcept {
  static std::atomic<const KernelTable*> t{initial_table()};
  return t;
}

}  // namespace

bool available(Isa isa) noexcept {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
      return cpu_has_avx2();
  }
  return false;
}

const KernelTable& table(Isa isa) {
  if (!available(isa)) throw InvalidArgument("kernel ISA not available on this CPU/build");
#if defined(RCNET_WITH_AVX2)
  if (isa == Isa::avx2) return detail::avx2_table;
#endif
  return detail::scalar_table;
}

const KernelTable& active() noexcept { return *current().load(std::memory_order_relaxed); }

Isa active_isa() noexcept {
  return &active() == &detail::scalar_table ? Isa::scalar : Isa::avx2;
}

void select(Isa isa) { current().store(&table(isa)); }

}  // namespace rcnet::kernels
