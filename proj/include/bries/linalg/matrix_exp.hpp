#pragma once

#include <cmath>

#include <Eigen/Dense>

#include "bries/error.hpp"

namespace bries::linalg {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Derived>
void require_square(const Eigen::MatrixBase<Derived>& a) {
  if (a.rows() != a.cols())
    throw Error(ErrorCode::NonSquare, "expected a square matrix, got " + std::to_string(a.rows()) +
                                          "x" + std::to_string(a.cols()));
}

/// Matrix exponential by scaling and squaring with a truncated Taylor series.
///
/// The input is scaled by 2^-s so that its 1-norm is at most 1/2; a degree-18
/// Taylor polynomial then has a truncation error below 0.5^19/19! (about
/// 1.6e-23) relative to the scaled exponential, and the result is squared s
/// times.
template <typename Derived>
Mat<typename Derived::Scalar> expm(const Eigen::MatrixBase<Derived>& a) {
  using Scalar = typename Derived::Scalar;
  require_square(a);
  const Eigen::Index d = a.rows();
  if (d == 0) return Mat<Scalar>(0, 0);

  const Scalar norm = a.cwiseAbs().colwise().sum().maxCoeff();
  int squarings = 0;
  if (norm > Scalar(0.5)) squarings = static_cast<int>(std::ceil(std::log2(norm / Scalar(0.5))));
  const Mat<Scalar> scaled = a / std::ldexp(Scalar(1), squarings);

  constexpr int kDegree = 18;
  const Mat<Scalar> identity = Mat<Scalar>::Identity(d, d);
  // Horner: I + A(I + A/2(I + A/3(...)))
  Mat<Scalar> result = identity;
  for (int k = kDegree; k >= 1; --k) result = identity + (scaled * result) / Scalar(k);

  for (int i = 0; i < squarings; ++i) result = (result * result).eval();
  return result;
}

/// NOTEARS acyclicity: h(W) = tr(exp(W o W)) - d. Zero exactly when the
/// support of W is a DAG, positive otherwise.
template <typename Derived>
typename Derived::Scalar acyclicity(const Eigen::MatrixBase<Derived>& w) {
  require_square(w);
  const auto e = expm(w.cwiseProduct(w));
  return e.trace() - static_cast<typename Derived::Scalar>(w.rows());
}

/// Gradient of acyclicity(): exp(W o W)^T o 2W.
template <typename Derived>
Mat<typename Derived::Scalar> acyclicity_gradient(const Eigen::MatrixBase<Derived>& w) {
  require_square(w);
  const auto e = expm(w.cwiseProduct(w));
  return e.transpose().cwiseProduct(w * typename Derived::Scalar(2));
}

/// Both values from one exponential.
template <typename Derived>
std::pair<typename Derived::Scalar, Mat<typename Derived::Scalar>> acyclicity_with_gradient(
    const Eigen::MatrixBase<Derived>& w) {
  using Scalar = typename Derived::Scalar;
  require_square(w);
  const auto e = expm(w.cwiseProduct(w));
  return {e.trace() - static_cast<Scalar>(w.rows()), e.transpose().cwiseProduct(w * Scalar(2))};
}

}  // namespace bries::linalg
