#pragma once

// Row-major GEMM over raw buffers, backed by Eigen.

#include <Eigen/Core>
#include <cstddef>

namespace salab::nn::detail {

/// C[m, n] (+)= op(A) op(B), with op(A) of shape [m, k] and op(B) of shape
/// [k, n]. A transposed operand is stored row-major in its untransposed
/// shape ([k, m] for A, [n, k] for B).
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const T* a, const T* b, T* c, bool accumulate) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using ConstMap = Eigen::Map<const Mat>;
  const auto mi = static_cast<Eigen::Index>(m);
  const auto ni = static_cast<Eigen::Index>(n);
  const auto ki = static_cast<Eigen::Index>(k);
  Eigen::Map<Mat> cm(c, mi, ni);
  if (!accumulate) cm.setZero();
  if (!trans_a && !trans_b) {
    cm.noalias() += ConstMap(a, mi, ki) * ConstMap(b, ki, ni);
  } else if (trans_a && !trans_b) {
    cm.noalias() += ConstMap(a, ki, mi).transpose() * ConstMap(b, ki, ni);
  } else if (!trans_a && trans_b) {
    cm.noalias() += ConstMap(a, mi, ki) * ConstMap(b, ni, ki).transpose();
  } else {
    cm.noalias() += ConstMap(a, ki, mi).transpose() * ConstMap(b, ni, ki).transpose();
  }
}

}  // namespace salab::nn::detail
