#pragma once

// Data-parallel inner loops shared by every layer.
//
// Each kernel has a portable scalar reference and, on x86-64, an AVX2/FMA
// variant selected at runtime. The GEMM variants accumulate every output
// element with the same sequential fused multiply-add chain over k, so their
// results are bitwise identical; tanh variants agree to within 2e-6.

#include <cstddef>
#include <span>

namespace rtn::kernels {

enum class Isa { scalar, avx2 };

const char* isa_name(Isa isa);
/// Best instruction set supported by this CPU and compiled into the binary.
Isa detected_isa();
Isa active_isa();
/// Throws ContractError if the requested set is unavailable.
void set_isa(Isa isa);

/// C(i,j) = fma(A(i,k-1), B(k-1,j), ... fma(A(i,0), B(0,j), C(i,j))).
/// A(i,kk) = a[i*a_rs + kk*a_cs]; B and C are row-major with leading dims ldb, ldc.
void gemm_acc(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t a_rs,
              std::size_t a_cs, const float* b, std::size_t ldb, float* c, std::size_t ldc);
void gemm_acc(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t a_rs,
              std::size_t a_cs, const double* b, std::size_t ldb, double* c, std::size_t ldc);

void tanh(std::span<const float> in, std::span<float> out);
void tanh(std::span<const double> in, std::span<double> out);

namespace scalar {
template <class T>
void gemm_acc(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t a_rs,
              std::size_t a_cs, const T* b, std::size_t ldb, T* c, std::size_t ldc);
template <class T>
void tanh(std::span<const T> in, std::span<T> out);
}  // namespace scalar

namespace avx2 {
bool compiled();
void gemm_acc(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t a_rs,
              std::size_t a_cs, const float* b, std::size_t ldb, float* c, std::size_t ldc);
void tanh(std::span<const float> in, std::span<float> out);
}  // namespace avx2

}  // namespace rtn::kernels
