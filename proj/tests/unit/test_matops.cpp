#include <gtest/gtest.h>

#include "dsgd/matops.hpp"
#include "dsgd/topology.hpp"
#include "oracles.hpp"

using namespace dsgd;

namespace {

Matrix random_symmetric(std::mt19937_64& gen, int n) {
  std::normal_distribution<double> z;
  Matrix g(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) g(i, j) = z(gen);
  return (g + g.transpose()) / 2.0;
}

}  // namespace

TEST(SymEig, Identity) {
  const auto s = sym_eig(Matrix::Identity(3, 3));
  EXPECT_TRUE(s.eigenvalues.isApprox(Vector::Ones(3)));
}

TEST(SymEig, DiagonalIsSortedWithPermutedColumns) {
  Matrix m = Vector(Eigen::Vector3d(3, 1, 2)).asDiagonal();
  const auto s = sym_eig(m);
  EXPECT_NEAR(s.eigenvalues(0), 3.0, 1e-14);
  EXPECT_NEAR(s.eigenvalues(1), 2.0, 1e-14);
  EXPECT_NEAR(s.eigenvalues(2), 1.0, 1e-14);
  Matrix expected = Matrix::Zero(3, 3);
  expected(0, 0) = 1.0;
  expected(2, 1) = 1.0;
  expected(1, 2) = 1.0;
  EXPECT_TRUE(s.eigenvectors.isApprox(expected, 1e-12));
}

TEST(SymEig, SwapMatrix) {
  Matrix m(2, 2);
  m << 0, 1, 1, 0;
  const auto s = sym_eig(m);
  EXPECT_NEAR(s.eigenvalues(0), 1.0, 1e-14);
  EXPECT_NEAR(s.eigenvalues(1), -1.0, 1e-14);
  const double r = 1.0 / std::sqrt(2.0);
  EXPECT_NEAR(s.eigenvectors(0, 0), r, 1e-12);
  EXPECT_NEAR(s.eigenvectors(1, 0), r, 1e-12);
  EXPECT_NEAR(s.eigenvectors(0, 1), r, 1e-12);
  EXPECT_NEAR(s.eigenvectors(1, 1), -r, 1e-12);
}

TEST(SymEig, RejectsAsymmetric) {
  Matrix m(2, 2);
  m << 1, 2, 0, 1;
  try {
    sym_eig(m);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NotSymmetric);
  }
  EXPECT_THROW(sym_eig(Matrix::Zero(2, 3)), Error);
}

TEST(SymEig, RandomMatchesJacobiAndReconstructs) {
  std::mt19937_64 gen(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix m = random_symmetric(gen, 5);
    const auto s = sym_eig(m);
    EXPECT_TRUE(s.eigenvalues.isApprox(oracle::jacobi_eigenvalues(m), 1e-10));
    EXPECT_LE((s.reconstruct() - m).norm(), 1e-10 * m.norm());
    EXPECT_LE((s.eigenvectors.transpose() * s.eigenvectors - Matrix::Identity(5, 5))
                  .cwiseAbs()
                  .maxCoeff(),
              1e-10);
    for (int i = 0; i + 1 < 5; ++i) EXPECT_GE(s.eigenvalues(i), s.eigenvalues(i + 1));
  }
}

TEST(SymEig, Deterministic) {
  std::mt19937_64 gen(3);
  const Matrix m = random_symmetric(gen, 6);
  const auto a = sym_eig(m);
  const auto b = sym_eig(m);
  EXPECT_EQ(a.eigenvalues, b.eigenvalues);
  EXPECT_EQ(a.eigenvectors, b.eigenvectors);
}

TEST(PinvSym, Diagonal) {
  Matrix m = Matrix::Zero(2, 2);
  m(0, 0) = 2.0;
  const Matrix p = pinv_sym(m);
  EXPECT_NEAR(p(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(p(1, 1), 0.0, 1e-15);
}

TEST(PinvSym, ProjectorIsItsOwnPseudoInverse) {
  const Matrix q = Matrix::Identity(3, 3) - Matrix::Constant(3, 3, 1.0 / 3.0);
  EXPECT_TRUE(pinv_sym(q).isApprox(q, 1e-12));
}

TEST(PinvSym, RingLaplacianSpectrum) {
  const CommMatrix w = build_ring(4, 0.25);
  const Matrix p = pinv_sym(Matrix::Identity(4, 4) - w.matrix());
  const Vector ev = oracle::jacobi_eigenvalues(p);
  // I - W = L/4 has spectrum (0, 1/2, 1/2, 1).
  EXPECT_NEAR(ev(0), 2.0, 1e-12);
  EXPECT_NEAR(ev(1), 2.0, 1e-12);
  EXPECT_NEAR(ev(2), 1.0, 1e-12);
  EXPECT_NEAR(ev(3), 0.0, 1e-12);
}

TEST(PinvSym, PenroseIdentitiesRankDeficient) {
  std::mt19937_64 gen(5);
  for (int trial = 0; trial < 20; ++trial) {
    std::normal_distribution<double> z;
    Matrix f(6, 3);
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 3; ++j) f(i, j) = z(gen);
    Vector signs(3);
    signs << 1.0, -2.0, 0.5;
    const Matrix m = f * signs.asDiagonal() * f.transpose();
    const Matrix p = pinv_sym(m);
    EXPECT_LE((m * p * m - m).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LE((p * m * p - p).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LE(((m * p).transpose() - m * p).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LE(((p * m).transpose() - p * m).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(SpectralNorm, MatchesLargestSingularValue) {
  std::mt19937_64 gen(8);
  std::normal_distribution<double> z;
  Matrix m(4, 3);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j) m(i, j) = z(gen);
  const Vector ev = oracle::jacobi_eigenvalues(m.transpose() * m);
  EXPECT_NEAR(spectral_norm(m), std::sqrt(ev(0)), 1e-12);
}

TEST(Sylvester, Scalar) {
  EXPECT_NEAR(sylvester_solve(Matrix::Ones(1, 1), Matrix::Ones(1, 1))(0, 0), 0.5, 1e-15);
}

TEST(Sylvester, Diagonal) {
  Matrix a = Matrix::Zero(2, 2);
  a(0, 0) = 1.0;
  a(1, 1) = 3.0;
  const Matrix x = sylvester_solve(a, Matrix::Identity(2, 2));
  EXPECT_NEAR(x(0, 0), 0.5, 1e-14);
  EXPECT_NEAR(x(1, 1), 1.0 / 6.0, 1e-14);
  EXPECT_NEAR(x(0, 1), 0.0, 1e-14);
}

TEST(Sylvester, ZeroRightHandSide) {
  std::mt19937_64 gen(2);
  const Matrix a = oracle::random_spd(gen, 3, 0.5, 2.0);
  EXPECT_EQ(sylvester_solve(a, Matrix::Zero(3, 3)).norm(), 0.0);
}

TEST(Sylvester, ResidualOnIllConditioned) {
  std::mt19937_64 gen(4);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix a = oracle::random_spd(gen, 4, 1e-4, 1.0);
    const Matrix s = oracle::random_psd_rank(gen, 4, 4);
    const Matrix x = sylvester_solve(a, s);
    EXPECT_LE((a * x + x * a - s).norm(), 1e-10 * s.norm());
    EXPECT_LE((x - x.transpose()).norm(), 1e-10 * x.norm());
  }
}

TEST(Sylvester, RejectsIndefinite) {
  Matrix a = Matrix::Identity(2, 2);
  a(1, 1) = -1.0;
  try {
    sylvester_solve(a, Matrix::Identity(2, 2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NotPositiveDefinite);
  }
}

TEST(PinvExpansion, TwoByTwo) {
  Matrix a = Matrix::Zero(2, 2);
  a(1, 1) = 1.0;
  const auto e = projected_pinv_expansion(a, Matrix::Identity(2, 2), 0.1);
  Matrix expected = Matrix::Zero(2, 2);
  expected(0, 0) = 10.0;
  EXPECT_TRUE(e.approx.isApprox(expected, 1e-12));
  EXPECT_NEAR(e.residual(), 1.0 / 1.1, 1e-12);
  EXPECT_NEAR(e.residual_bound, 4.0, 1e-12);
}

TEST(PinvExpansion, WholeKernelIsExact) {
  const auto e = projected_pinv_expansion(Matrix::Zero(2, 2), Matrix::Identity(2, 2), 0.5);
  EXPECT_TRUE(e.approx.isApprox(2.0 * Matrix::Identity(2, 2), 1e-14));
  EXPECT_LE(e.residual(), 1e-14);
  EXPECT_EQ(e.residual_bound, 0.0);
}

TEST(PinvExpansion, TrivialKernel) {
  const auto e = projected_pinv_expansion(Matrix::Identity(2, 2), Matrix::Identity(2, 2), 0.1);
  EXPECT_EQ(e.approx.norm(), 0.0);
  EXPECT_NEAR(e.residual(), 1.0 / 1.1, 1e-12);
  EXPECT_LE(e.residual(), e.residual_bound);
}

TEST(PinvExpansion, Errors) {
  const Matrix i2 = Matrix::Identity(2, 2);
  auto code_of = [](auto&& f) {
    try {
      f();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::ConfigError;
  };
  EXPECT_EQ(code_of([&] { projected_pinv_expansion(Matrix(-i2), i2, 0.1); }), ErrorCode::NotPSD);
  EXPECT_EQ(code_of([&] { projected_pinv_expansion(i2, Matrix(-i2), 0.1); }),
            ErrorCode::NotPositiveDefinite);
  EXPECT_EQ(code_of([&] { projected_pinv_expansion(i2, i2, 0.0); }), ErrorCode::InvalidParam);
}

TEST(PinvExpansion, RandomTriplesRespectBound) {
  std::mt19937_64 gen(17);
  std::uniform_real_distribution<double> logt(std::log(1e-3), std::log(1e-1));
  std::uniform_int_distribution<int> rank(1, 4);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix a = oracle::random_psd_rank(gen, 5, rank(gen));
    const Matrix b = oracle::random_spd(gen, 5, 0.5, 3.0);
    const auto e = projected_pinv_expansion(a, b, std::exp(logt(gen)));
    EXPECT_LE(e.residual(), e.residual_bound);
  }
}

TEST(InversePerturbation, Examples) {
  const Matrix i2 = Matrix::Identity(2, 2);
  EXPECT_NEAR(inverse_perturbation_bound(i2, i2), 1.0, 1e-14);

  Matrix a = Matrix::Zero(2, 2);
  a(0, 0) = 1.0;
  a(1, 1) = 2.0;
  EXPECT_EQ(inverse_perturbation_bound(a, Matrix::Zero(2, 2)), 0.0);

  a(0, 0) = 0.5;
  a(1, 1) = 1.0;
  Matrix b = Matrix::Zero(2, 2);
  b(0, 0) = 0.1;
  const double bound = inverse_perturbation_bound(a, b);
  EXPECT_NEAR(bound, 0.4, 1e-14);
  const double actual = spectral_norm(Matrix((a + b).inverse() - a.inverse()));
  EXPECT_NEAR(actual, 1.0 / 3.0, 1e-12);
  EXPECT_LE(actual, bound);
}

TEST(InversePerturbation, RandomPairs) {
  std::mt19937_64 gen(23);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix a = oracle::random_spd(gen, 4, 0.2, 3.0);
    const Matrix b = oracle::random_psd_rank(gen, 4, 2);
    const double actual = spectral_norm(Matrix((a + b).inverse() - a.inverse()));
    EXPECT_LE(actual, inverse_perturbation_bound(a, b));
  }
}
