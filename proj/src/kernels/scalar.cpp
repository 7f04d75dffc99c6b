#include <cmath>

#include "rtn/kernels/kernels.hpp"

namespace rtn::kernels::scalar {

template <class T>
void gemm_acc(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t a_rs,
              std::size_t a_cs, const T* b, std::size_t ldb, T* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * a_rs;
    T* crow = c + i * ldc;
    for (std::size_t j = 0; j < n; ++j) {
      T acc = crow[j];
      for (std::size_t kk = 0; kk < k; ++kk) acc = std::fma(arow[kk * a_cs], b[kk * ldb + j], acc);
      crow[j] = acc;
    }
  }
}

template <class T>
void tanh(std::span<const T> in, std::span<T> out) {
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = std::tanh(in[i]);
}

template void gemm_acc<float>(std::size_t, std::size_t, std::size_t, const float*, std::size_t,
                              std::size_t, const float*, std::size_t, float*, std::size_t);
template void gemm_acc<double>(std::size_t, std::size_t, std::size_t, const double*, std::size_t,
                               std::size_t, const double*, std::size_t, double*, std::size_t);
template void tanh<float>(std::span<const float>, std::span<float>);
template void tanh<double>(std::span<const double>, std::span<double>);

}  // namespace rtn::kernels::scalar
