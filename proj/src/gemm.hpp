#pragma once

#include <cstddef>

namespace stsr::detail {

/// C (+)= op(A) op(B) on row-major buffers, op(A) [m, k], op(B) [k, n], C [m, n].
///
/// Operands are staged in aligned scratch first. Eigen's vectorized paths peel
/// unaligned heads, so working on caller memory directly makes the rounding
/// depend on where malloc placed a buffer, and two identical runs drift apart.
void gemm(const float* a, bool transpose_a, const float* b, bool transpose_b, float* c, std::size_t m,
          std::size_t n, std::size_t k, bool accumulate);

}  // namespace stsr::detail
