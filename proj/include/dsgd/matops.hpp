#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "dsgd/error.hpp"

// Dense symmetric linear algebra used throughout the library. Everything here
// is a pure function templated on the scalar type; the rest of the library
// instantiates it with double.

namespace dsgd {

template <typename Scalar>
using MatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VecX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatX<double>;
using Vector = VecX<double>;

/// Eigen-decomposition of a symmetric matrix, eigenvalues sorted descending.
/// Each eigenvector is sign-normalized so that its first non-negligible
/// component is positive, which makes the output a deterministic function of
/// the input.
template <typename Scalar>
struct SymSpectrum {
  VecX<Scalar> eigenvalues;
  MatX<Scalar> eigenvectors;

  MatX<Scalar> reconstruct() const {
    return eigenvectors * eigenvalues.asDiagonal() * eigenvectors.transpose();
  }
  Scalar max_abs() const {
    return eigenvalues.size() == 0 ? Scalar(0) : eigenvalues.cwiseAbs().maxCoeff();
  }
};

namespace detail {

template <typename Derived>
void require_square(const Eigen::MatrixBase<Derived>& m, const char* who) {
  if (m.rows() != m.cols()) {
    throw Error(ErrorCode::ShapeMismatch,
                std::string(who) + ": matrix is " + std::to_string(m.rows()) + "x" +
                    std::to_string(m.cols()) + ", expected square");
  }
}

template <typename Derived>
void require_symmetric(const Eigen::MatrixBase<Derived>& m, const char* who) {
  require_square(m, who);
  using Scalar = typename Derived::Scalar;
  if (m.size() == 0) return;
  const Scalar norm_inf = m.cwiseAbs().rowwise().sum().maxCoeff();
  const Scalar asym = (m - m.transpose()).cwiseAbs().rowwise().sum().maxCoeff();
  if (asym > Scalar(1e-9) * norm_inf) {
    throw Error(ErrorCode::NotSymmetric,
                std::string(who) + ": asymmetry " + std::to_string(double(asym)) +
                    " exceeds 1e-9 * ||M||_inf");
  }
}

}  // namespace detail

template <typename Derived>
SymSpectrum<typename Derived::Scalar> sym_eig(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  detail::require_symmetric(m, "sym_eig");
  const Eigen::Index n = m.rows();
  SymSpectrum<Scalar> out;
  if (n == 0) return out;

  // Symmetrize so that round-off asymmetry cannot leak into the result.
  const MatX<Scalar> sym = (m + m.transpose()) / Scalar(2);
  Eigen::SelfAdjointEigenSolver<MatX<Scalar>> solver(sym);
  if (solver.info() != Eigen::Success) {
    throw Error(ErrorCode::NoConvergence, "sym_eig: eigensolver did not converge");
  }
  out.eigenvalues = solver.eigenvalues().reverse();
  out.eigenvectors = solver.eigenvectors().rowwise().reverse();

  for (Eigen::Index j = 0; j < n; ++j) {
    auto col = out.eigenvectors.col(j);
    const Scalar scale = col.cwiseAbs().maxCoeff();
    for (Eigen::Index i = 0; i < n; ++i) {
      if (std::abs(col(i)) > Scalar(1e-8) * scale) {
        if (col(i) < Scalar(0)) col = -col;
        break;
      }
    }
  }
  return out;
}

/// Moore-Penrose pseudo-inverse of a symmetric matrix. Eigenvalues with
/// |lambda| <= tol * max|lambda| are treated as zero.
template <typename Derived>
MatX<typename Derived::Scalar> pinv_sym(const Eigen::MatrixBase<Derived>& m,
                                        double tol = 1e-10) {
  using Scalar = typename Derived::Scalar;
  const auto spec = sym_eig(m);
  const Scalar cutoff = Scalar(tol) * spec.max_abs();
  VecX<Scalar> inv = VecX<Scalar>::Zero(spec.eigenvalues.size());
  for (Eigen::Index i = 0; i < inv.size(); ++i) {
    const Scalar v = spec.eigenvalues(i);
    if (std::abs(v) > cutoff && v != Scalar(0)) inv(i) = Scalar(1) / v;
  }
  return spec.eigenvectors * inv.asDiagonal() * spec.eigenvectors.transpose();
}

/// Largest singular value.
template <typename Derived>
typename Derived::Scalar spectral_norm(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  if (m.size() == 0) return Scalar(0);
  Eigen::JacobiSVD<MatX<Scalar>> svd(m.eval());
  return svd.singularValues()(0);
}

/// Solves Abar X + X Abar = S for symmetric positive definite Abar, working in
/// the eigenbasis of Abar where the solution is entrywise S_ij / (l_i + l_j).
template <typename DerivedA, typename DerivedS>
MatX<typename DerivedA::Scalar> sylvester_solve(const Eigen::MatrixBase<DerivedA>& abar,
                                                const Eigen::MatrixBase<DerivedS>& s) {
  using Scalar = typename DerivedA::Scalar;
  detail::require_square(s, "sylvester_solve");
  if (abar.rows() != s.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "sylvester_solve: Abar and S differ in size");
  }
  const auto spec = sym_eig(abar);
  if (spec.eigenvalues.size() > 0 && spec.eigenvalues.minCoeff() <= Scalar(0)) {
    throw Error(ErrorCode::NotPositiveDefinite,
                "sylvester_solve: Abar has min eigenvalue " +
                    std::to_string(double(spec.eigenvalues.minCoeff())));
  }
  const auto& u = spec.eigenvectors;
  MatX<Scalar> rotated = u.transpose() * s * u;
  for (Eigen::Index i = 0; i < rotated.rows(); ++i) {
    for (Eigen::Index j = 0; j < rotated.cols(); ++j) {
      rotated(i, j) /= spec.eigenvalues(i) + spec.eigenvalues(j);
    }
  }
  return u * rotated * u.transpose();
}

/// Small-t expansion of (A + tB)^{-1} for A PSD and B PD: the leading term
/// (1/t)(P B P)^+ with P the projector onto ker(A), together with the explicit
/// bound (1/lambda_min^+(A)) (1 + lambda_max(B)/lambda_min(B))^2 on the
/// remainder. The exact inverse is returned alongside so callers can check it.
template <typename Scalar>
struct PinvExpansion {
  MatX<Scalar> approx;
  MatX<Scalar> exact_inverse;
  MatX<Scalar> kernel_projector;
  Scalar residual_bound = 0;

  Scalar residual() const { return spectral_norm(exact_inverse - approx); }
};

template <typename DerivedA, typename DerivedB>
PinvExpansion<typename DerivedA::Scalar> projected_pinv_expansion(
    const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b,
    typename DerivedA::Scalar t) {
  using Scalar = typename DerivedA::Scalar;
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "projected_pinv_expansion: A and B differ in size");
  }
  if (!(t > Scalar(0))) {
    throw Error(ErrorCode::InvalidParam, "projected_pinv_expansion: t must be positive");
  }
  const auto spec_a = sym_eig(a);
  const auto spec_b = sym_eig(b);
  const Eigen::Index n = a.rows();
  const Scalar scale_a = spec_a.max_abs();
  const Scalar zero_cut = Scalar(1e-10) * std::max(scale_a, Scalar(1));
  if (n > 0 && spec_a.eigenvalues.minCoeff() < -zero_cut) {
    throw Error(ErrorCode::NotPSD, "projected_pinv_expansion: A is not PSD");
  }
  if (n > 0 && spec_b.eigenvalues.minCoeff() <= Scalar(0)) {
    throw Error(ErrorCode::NotPositiveDefinite, "projected_pinv_expansion: B is not PD");
  }

  Eigen::Index kernel_dim = 0;
  Scalar lambda_min_pos = std::numeric_limits<Scalar>::infinity();
  for (Eigen::Index i = 0; i < n; ++i) {
    const Scalar v = spec_a.eigenvalues(i);
    if (std::abs(v) <= zero_cut) {
      ++kernel_dim;
    } else {
      lambda_min_pos = std::min(lambda_min_pos, v);
    }
  }
  // Eigenvalues are sorted descending, so the kernel basis is the tail.
  const MatX<Scalar> v0 = spec_a.eigenvectors.rightCols(kernel_dim);

  PinvExpansion<Scalar> out;
  out.kernel_projector = v0 * v0.transpose();
  if (kernel_dim > 0) {
    const MatX<Scalar> b00 = v0.transpose() * b * v0;
    out.approx = v0 * b00.llt().solve(MatX<Scalar>::Identity(kernel_dim, kernel_dim)) *
                 v0.transpose() / t;
  } else {
    out.approx = MatX<Scalar>::Zero(n, n);
  }

  const MatX<Scalar> sum = a + t * b;
  const auto spec_sum = sym_eig(sum);
  if (n > 0 && spec_sum.eigenvalues.minCoeff() <=
                   Scalar(n) * std::numeric_limits<Scalar>::epsilon() * spec_sum.max_abs()) {
    throw Error(ErrorCode::SingularSum, "projected_pinv_expansion: A + tB is singular");
  }
  out.exact_inverse = spec_sum.eigenvectors * spec_sum.eigenvalues.cwiseInverse().asDiagonal() *
                      spec_sum.eigenvectors.transpose();

  if (kernel_dim == n) {
    // ker(A) is the whole space: the leading term is exact.
    out.residual_bound = Scalar(0);
  } else {
    const Scalar cond_b = spec_b.eigenvalues(0) / spec_b.eigenvalues(n - 1);
    out.residual_bound = (Scalar(1) + cond_b) * (Scalar(1) + cond_b) / lambda_min_pos;
  }
  return out;
}

/// ||A^{-1}||_2^2 ||B||_2, an upper bound on ||(A+B)^{-1} - A^{-1}||_2 for
/// A PD and B PSD.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar inverse_perturbation_bound(const Eigen::MatrixBase<DerivedA>& a,
                                                     const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  const auto spec_a = sym_eig(a);
  const auto spec_b = sym_eig(b);
  if (spec_a.eigenvalues.size() != spec_b.eigenvalues.size()) {
    throw Error(ErrorCode::ShapeMismatch, "inverse_perturbation_bound: size mismatch");
  }
  if (spec_a.eigenvalues.size() == 0) return Scalar(0);
  const Scalar a_min = spec_a.eigenvalues.minCoeff();
  if (a_min <= Scalar(0)) {
    throw Error(ErrorCode::NotPositiveDefinite, "inverse_perturbation_bound: A is not PD");
  }
  if (spec_b.eigenvalues.minCoeff() < -Scalar(1e-10) * std::max(spec_b.max_abs(), Scalar(1))) {
    throw Error(ErrorCode::NotPSD, "inverse_perturbation_bound: B is not PSD");
  }
  const Scalar inv_norm = Scalar(1) / a_min;
  return inv_norm * inv_norm * spec_b.max_abs();
}

}  // namespace dsgd
