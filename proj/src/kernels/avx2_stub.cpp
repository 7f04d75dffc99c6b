// Built when AVX2 support is disabled at configure time.

#include "rtn/errors.hpp"
#include "rtn/kernels/kernels.hpp"

namespace rtn::kernels::avx2 {

bool compiled() { return false; }

void gemm_acc(std::size_t, std::size_t, std::size_t, const float*, std::size_t, std::size_t,
              const float*, std::size_t, float*, std::size_t) {
  throw ContractError("AVX2 kernels not compiled in");
}

void tanh(std::span<const float>, std::span<float>) {
  throw ContractError("AVX2 kernels not compiled in");
}

}  // namespace rtn::kernels::avx2
