#pragma once

#include <Eigen/Core>

#include "bnasr/tensor.hpp"

namespace bnasr {

namespace detail {
template <typename Real>
using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using MatMap = Eigen::Map<RowMat<Real>>;
template <typename Real>
using ConstMatMap = Eigen::Map<const RowMat<Real>>;
template <typename Real>
using VecMap = Eigen::Map<Eigen::Matrix<Real, Eigen::Dynamic, 1>>;
template <typename Real>
using ConstVecMap = Eigen::Map<const Eigen::Matrix<Real, Eigen::Dynamic, 1>>;
}  // namespace detail

enum class Trans { kNo, kYes };

/// C = beta*C + op(A)*op(B) on row-major buffers. op(A) is m x k, op(B) is k x n.
template <typename Real>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, const Real* a,
          const Real* b, Real beta, Real* c) {
  using namespace detail;
  MatMap<Real> cm(c, Eigen::Index(m), Eigen::Index(n));
  const Eigen::Index ar = ta == Trans::kNo ? Eigen::Index(m) : Eigen::Index(k);
  const Eigen::Index ac = ta == Trans::kNo ? Eigen::Index(k) : Eigen::Index(m);
  const Eigen::Index br = tb == Trans::kNo ? Eigen::Index(k) : Eigen::Index(n);
  const Eigen::Index bc = tb == Trans::kNo ? Eigen::Index(n) : Eigen::Index(k);
  ConstMatMap<Real> am(a, ar, ac);
  ConstMatMap<Real> bm(b, br, bc);
  if (beta == Real(0)) {
    cm.setZero();
  } else if (beta != Real(1)) {
    cm *= beta;
  }
  if (m == 0 || n == 0 || k == 0) return;
  if (ta == Trans::kNo && tb == Trans::kNo) {
    cm.noalias() += am * bm;
  } else if (ta == Trans::kNo) {
    cm.noalias() += am * bm.transpose();
  } else if (tb == Trans::kNo) {
    cm.noalias() += am.transpose() * bm;
  } else {
    cm.noalias() += am.transpose() * bm.transpose();
  }
}

/// y = beta*y + op(A)*x with A stored m x n row-major.
template <typename Real>
void gemv(Trans ta, std::size_t m, std::size_t n, const Real* a, const Real* x, Real beta, Real* y) {
  using namespace detail;
  ConstMatMap<Real> am(a, Eigen::Index(m), Eigen::Index(n));
  const Eigen::Index out = ta == Trans::kNo ? Eigen::Index(m) : Eigen::Index(n);
  const Eigen::Index in = ta == Trans::kNo ? Eigen::Index(n) : Eigen::Index(m);
  ConstVecMap<Real> xv(x, in);
  VecMap<Real> yv(y, out);
  if (beta == Real(0)) {
    yv.setZero();
  } else if (beta != Real(1)) {
    yv *= beta;
  }
  if (ta == Trans::kNo) {
    yv.noalias() += am * xv;
  } else {
    yv.noalias() += am.transpose() * xv;
  }
}

/// Outer-product accumulate: A(m x n) += x(m) * y(n)^T.
template <typename Real>
void ger(std::size_t m, std::size_t n, const Real* x, const Real* y, Real* a) {
  using namespace detail;
  MatMap<Real> am(a, Eigen::Index(m), Eigen::Index(n));
  am.noalias() += ConstVecMap<Real>(x, Eigen::Index(m)) * ConstVecMap<Real>(y, Eigen::Index(n)).transpose();
}

/// Plain matrix product of two rank-2 tensors.
template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  Tensor<Real> c({a.dim(0), b.dim(1)});
  gemm(Trans::kNo, Trans::kNo, a.dim(0), b.dim(1), a.dim(1), a.data(), b.data(), Real(0), c.data());
  return c;
}

/// Gradients of C = A*B given dC: dA = dC*B^T, dB = A^T*dC.
template <typename Real>
void matmul_backward(const Tensor<Real>& a, const Tensor<Real>& b, const Tensor<Real>& grad_c,
                     Tensor<Real>& grad_a, Tensor<Real>& grad_b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  require_shape(grad_c, {m, n}, "matmul_backward");
  grad_a = Tensor<Real>({m, k});
  grad_b = Tensor<Real>({k, n});
  gemm(Trans::kNo, Trans::kYes, m, k, n, grad_c.data(), b.data(), Real(0), grad_a.data());
  gemm(Trans::kYes, Trans::kNo, k, n, m, a.data(), grad_c.data(), Real(0), grad_b.data());
}

}  // namespace bnasr
