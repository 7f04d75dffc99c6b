// Compiled with -mavx2 -mfma; only reached after a runtime cpuid check.

#include <immintrin.h>

#include <cmath>

#include "rtn/kernels/kernels.hpp"

namespace rtn::kernels::avx2 {

bool compiled() { return true; }

namespace {

template <int Rows>
inline void block_x16(std::size_t k, const float* a, std::size_t a_rs, std::size_t a_cs,
                      const float* b, std::size_t ldb, float* c, std::size_t ldc) {
  __m256 lo[Rows], hi[Rows];
  for (int r = 0; r < Rows; ++r) {
    lo[r] = _mm256_loadu_ps(c + r * ldc);
    hi[r] = _mm256_loadu_ps(c + r * ldc + 8);
  }
  for (std::size_t kk = 0; kk < k; ++kk) {
    const __m256 b0 = _mm256_loadu_ps(b + kk * ldb);
    const __m256 b1 = _mm256_loadu_ps(b + kk * ldb + 8);
    for (int r = 0; r < Rows; ++r) {
      const __m256 av = _mm256_broadcast_ss(a + r * a_rs + kk * a_cs);
      lo[r] = _mm256_fmadd_ps(av, b0, lo[r]);
      hi[r] = _mm256_fmadd_ps(av, b1, hi[r]);
    }
  }
  for (int r = 0; r < Rows; ++r) {
    _mm256_storeu_ps(c + r * ldc, lo[r]);
    _mm256_storeu_ps(c + r * ldc + 8, hi[r]);
  }
}

template <int Rows>
inline void block_x8(std::size_t k, const float* a, std::size_t a_rs, std::size_t a_cs,
                     const float* b, std::size_t ldb, float* c, std::size_t ldc) {
  __m256 acc[Rows];
  for (int r = 0; r < Rows; ++r) acc[r] = _mm256_loadu_ps(c + r * ldc);
  for (std::size_t kk = 0; kk < k; ++kk) {
    const __m256 b0 = _mm256_loadu_ps(b + kk * ldb);
    for (int r = 0; r < Rows; ++r)
      acc[r] = _mm256_fmadd_ps(_mm256_broadcast_ss(a + r * a_rs + kk * a_cs), b0, acc[r]);
  }
  for (int r = 0; r < Rows; ++r) _mm256_storeu_ps(c + r * ldc, acc[r]);
}

template <int Rows>
inline void block_tail(std::size_t cols, std::size_t k, const float* a, std::size_t a_rs,
                       std::size_t a_cs, const float* b, std::size_t ldb, float* c,
                       std::size_t ldc) {
  for (int r = 0; r < Rows; ++r) {
    for (std::size_t j = 0; j < cols; ++j) {
      float acc = c[r * ldc + j];
      for (std::size_t kk = 0; kk < k; ++kk)
        acc = std::fma(a[r * a_rs + kk * a_cs], b[kk * ldb + j], acc);
      c[r * ldc + j] = acc;
    }
  }
}

template <int Rows>
inline void row_panel(std::size_t n, std::size_t k, const float* a, std::size_t a_rs,
                      std::size_t a_cs, const float* b, std::size_t ldb, float* c,
                      std::size_t ldc) {
  std::size_t j = 0;
  for (; j + 16 <= n; j += 16) block_x16<Rows>(k, a, a_rs, a_cs, b + j, ldb, c + j, ldc);
  for (; j + 8 <= n; j += 8) block_x8<Rows>(k, a, a_rs, a_cs, b + j, ldb, c + j, ldc);
  if (j < n) block_tail<Rows>(n - j, k, a, a_rs, a_cs, b + j, ldb, c + j, ldc);
}

}  // namespace

void gemm_acc(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t a_rs,
              std::size_t a_cs, const float* b, std::size_t ldb, float* c, std::size_t ldc) {
  std::size_t i = 0;
  for (; i + 6 <= m; i += 6) row_panel<6>(n, k, a + i * a_rs, a_rs, a_cs, b, ldb, c + i * ldc, ldc);
  for (; i + 2 <= m; i += 2) row_panel<2>(n, k, a + i * a_rs, a_rs, a_cs, b, ldb, c + i * ldc, ldc);
  for (; i < m; ++i) row_panel<1>(n, k, a + i * a_rs, a_rs, a_cs, b, ldb, c + i * ldc, ldc);
}

namespace {

// Odd/even rational approximation of tanh on [-7.9053, 7.9053]; outside that
// range float tanh rounds to +-1.
inline __m256 tanh8(__m256 x_in) {
  const __m256 bound = _mm256_set1_ps(7.90531110763549805f);
  const __m256 x = _mm256_max_ps(_mm256_min_ps(x_in, bound), _mm256_sub_ps(_mm256_setzero_ps(), bound));
  const __m256 x2 = _mm256_mul_ps(x, x);
  __m256 p = _mm256_fmadd_ps(x2, _mm256_set1_ps(-2.76076847742355e-16f), _mm256_set1_ps(2.00018790482477e-13f));
  p = _mm256_fmadd_ps(x2, p, _mm256_set1_ps(-8.60467152213735e-11f));
  p = _mm256_fmadd_ps(x2, p, _mm256_set1_ps(5.12229709037114e-08f));
  p = _mm256_fmadd_ps(x2, p, _mm256_set1_ps(1.48572235717979e-05f));
  p = _mm256_fmadd_ps(x2, p, _mm256_set1_ps(6.37261928875436e-04f));
  p = _mm256_fmadd_ps(x2, p, _mm256_set1_ps(4.89352455891786e-03f));
  p = _mm256_mul_ps(x, p);
  __m256 q = _mm256_fmadd_ps(x2, _mm256_set1_ps(1.19825839466702e-06f), _mm256_set1_ps(1.18534705686654e-04f));
  q = _mm256_fmadd_ps(x2, q, _mm256_set1_ps(2.26843463243900e-03f));
  q = _mm256_fmadd_ps(x2, q, _mm256_set1_ps(4.89352518554385e-03f));
  return _mm256_div_ps(p, q);
}

}  // namespace

void tanh(std::span<const float> in, std::span<float> out) {
  std::size_t i = 0;
  const std::size_t n = in.size();
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(out.data() + i, tanh8(_mm256_loadu_ps(in.data() + i)));
  if (i < n) {
    alignas(32) float buf[8] = {};
    for (std::size_t t = i; t < n; ++t) buf[t - i] = in[t];
    _mm256_store_ps(buf, tanh8(_mm256_load_ps(buf)));
    for (std::size_t t = i; t < n; ++t) out[t] = buf[t - i];
  }
}

}  // namespace rtn::kernels::avx2
