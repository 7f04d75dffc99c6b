#include <atomic>

#include "rtn/errors.hpp"
#include "rtn/kernels/kernels.hpp"

namespace rtn::kernels {

namespace {

bool cpu_has_avx2_fma() {
#if defined(__x86_64__) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

std::atomic<Isa>& current() {
  static std::atomic<Isa> isa{detected_isa()};
  return isa;
}

}  // namespace

const char* isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

Isa detected_isa() {
  static const Isa best = (avx2::compiled() && cpu_has_avx2_fma()) ? Isa::avx2 : Isa::scalar;
  return best;
}

Isa active_isa() { return current().load(std::memory_order_relaxed); }

void set_isa(Isa isa) {
  if (isa == Isa::avx2 && detected_isa() != Isa::avx2)
    throw ContractError("AVX2/FMA kernels are not available on this machine");
  current().store(isa, std::memory_order_relaxed);
}

void gemm_acc(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t a_rs,
              std::size_t a_cs, const float* b, std::size_t ldb, float* c, std::size_t ldc) {
  if (m == 0 || n == 0) return;
  if (active_isa() == Isa::avx2)
    avx2::gemm_acc(m, n, k, a, a_rs, a_cs, b, ldb, c, ldc);
  else
    scalar::gemm_acc<float>(m, n, k, a, a_rs, a_cs, b, ldb, c, ldc);
}

void gemm_acc(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t a_rs,
              std::size_t a_cs, const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  if (m == 0 || n == 0) return;
  scalar::gemm_acc<double>(m, n, k, a, a_rs, a_cs, b, ldb, c, ldc);
}

void tanh(std::span<const float> in, std::span<float> out) {
  RTN_REQUIRE(in.size() == out.size(), "tanh: size mismatch");
  if (active_isa() == Isa::avx2)
    avx2::tanh(in, out);
  else
    scalar::tanh<float>(in, out);
}

void tanh(std::span<const double> in, std::span<double> out) {
  RTN_REQUIRE(in.size() == out.size(), "tanh: size mismatch");
  scalar::tanh<double>(in, out);
}

}  // namespace rtn::kernels
