#include "gemm.hpp"

#include <Eigen/Core>
#include <algorithm>

namespace stsr::detail {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void stage(RowMat& dst, const float* src, std::size_t rows, std::size_t cols) {
  dst.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  std::copy(src, src + rows * cols, dst.data());
}

}  // namespace

void gemm(const float* a, bool transpose_a, const float* b, bool transpose_b, float* c, std::size_t m,
          std::size_t n, std::size_t k, bool accumulate) {
  thread_local RowMat sa;
  thread_local RowMat sb;
  thread_local RowMat sc;
  if (transpose_a) {
    stage(sa, a, k, m);
  } else {
    stage(sa, a, m, k);
  }
  if (transpose_b) {
    stage(sb, b, n, k);
  } else {
    stage(sb, b, k, n);
  }
  sc.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  if (transpose_a && transpose_b) {
    sc.noalias() = sa.transpose() * sb.transpose();
  } else if (transpose_a) {
    sc.noalias() = sa.transpose() * sb;
  } else if (transpose_b) {
    sc.noalias() = sa * sb.transpose();
  } else {
    sc.noalias() = sa * sb;
  }
  const float* src = sc.data();
  const std::size_t total = m * n;
  if (accumulate) {
    for (std::size_t i = 0; i < total; ++i) {
      c[i] += src[i];
    }
  } else {
    for (std::size_t i = 0; i < total; ++i) {
      c[i] = src[i];
    }
  }
}

}  // namespace stsr::detail
