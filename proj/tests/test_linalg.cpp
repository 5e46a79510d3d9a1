#include "cgdm/errors.hpp"
#include "cgdm/linalg.hpp"
#include "cgdm/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace cgdm;

namespace {

Matrix gaussian(Index r, Index c, Rng& rng) {
  Matrix a(r, c);
  for (Index j = 0; j < c; ++j)
    for (Index i = 0; i < r; ++i) a(i, j) = rng.normal();
  return a;
}

SymMatrix random_sym(Index n, Rng& rng) { return symmetrize(gaussian(n, n, rng)); }

Matrix sym_matrix(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix a(static_cast<Index>(rows.size()), static_cast<Index>(rows.begin()->size()));
  Index i = 0;
  for (auto& r : rows) {
    Index j = 0;
    for (double v : r) a(i, j++) = v;
    ++i;
  }
  return a;
}

}  // namespace

TEST(Symmetrize, AveragesWithTranspose) {
  const SymMatrix s = symmetrize(sym_matrix({{1, 2}, {3, 4}}));
  EXPECT_EQ(s.matrix(), sym_matrix({{1, 2.5}, {2.5, 4}}));
}

TEST(Symmetrize, FixedPointOnSymmetricInput) {
  const Matrix a = sym_matrix({{2, -1, 0}, {-1, 3, 4}, {0, 4, 5}});
  EXPECT_EQ(symmetrize(a).matrix(), a);
}

TEST(Symmetrize, MatchesNaiveLoopAndIsIdempotent) {
  Rng rng(7);
  const Matrix g = gaussian(32, 32, rng);
  const SymMatrix s = symmetrize(g);
  for (Index i = 0; i < 32; ++i)
    for (Index j = 0; j < 32; ++j) {
      EXPECT_EQ(s(i, j), 0.5 * (g(i, j) + g(j, i)));
      EXPECT_EQ(s(i, j), s(j, i));
    }
  EXPECT_EQ(symmetrize(s.matrix()), s);
}

TEST(Symmetrize, RejectsNonSquare) { EXPECT_THROW(symmetrize(Matrix::Zero(2, 3)), DimensionError); }

TEST(SymMatrix, RejectsAsymmetryAndNonFinite) {
  EXPECT_THROW(SymMatrix(sym_matrix({{1, 2}, {2.1, 1}})), ValidationError);
  EXPECT_THROW(SymMatrix(sym_matrix({{1, NAN}, {NAN, 1}})), ValidationError);
  EXPECT_NO_THROW(SymMatrix(sym_matrix({{1, 2}, {2 + 1e-13, 1}})));
}

TEST(Eigen, DiagonalInput) {
  const Spectrum s = sym_eigendecompose(SymMatrix(sym_matrix({{1, 0}, {0, 3}})));
  EXPECT_DOUBLE_EQ(s.values(0), 3.0);
  EXPECT_DOUBLE_EQ(s.values(1), 1.0);
  EXPECT_NEAR(std::abs(s.vectors(1, 0)), 1.0, 1e-15);
  EXPECT_NEAR(std::abs(s.vectors(0, 1)), 1.0, 1e-15);
}

TEST(Eigen, SwapMatrix) {
  const Spectrum s = sym_eigendecompose(SymMatrix(sym_matrix({{0, 1}, {1, 0}})));
  EXPECT_NEAR(s.values(0), 1.0, 1e-14);
  EXPECT_NEAR(s.values(1), -1.0, 1e-14);
  const double r = 1.0 / std::sqrt(2.0);
  EXPECT_NEAR(std::abs(s.vectors(0, 0)), r, 1e-14);
  EXPECT_NEAR(s.vectors(0, 0), s.vectors(1, 0), 1e-14);
  EXPECT_NEAR(s.vectors(0, 1), -s.vectors(1, 1), 1e-14);
}

TEST(Eigen, SignConventionLargestComponentNonnegative) {
  Rng rng(3);
  const Spectrum s = sym_eigendecompose(random_sym(8, rng));
  for (Index k = 0; k < 8; ++k) {
    Index arg = 0;
    for (Index i = 1; i < 8; ++i)
      if (std::abs(s.vectors(i, k)) > std::abs(s.vectors(arg, k))) arg = i;
    EXPECT_GE(s.vectors(arg, k), 0.0);
  }
}

TEST(Eigen, SpectrumInvariantsOnThousandRandomMatrices) {
  Rng rng(11);
  for (int t = 0; t < 1000; ++t) {
    const SymMatrix a = random_sym(8, rng);
    const Spectrum s = sym_eigendecompose(a);
    for (Index k = 1; k < 8; ++k) {
      ASSERT_GE(s.values(k - 1), s.values(k));
    }
    ASSERT_LE((s.vectors.transpose() * s.vectors - Matrix::Identity(8, 8)).norm(), 1e-9 * 8);
    const double resid = (reconstruct(s).matrix() - a.matrix()).norm();
    ASSERT_LE(resid, 1e-8 * a.matrix().norm());
    if (t == 0) {
      EXPECT_LE(resid, 1e-10);
    }
  }
}

TEST(Eigen, ConvergenceFailureCarriesResidual) {
  Rng rng(5);
  JacobiOptions opts;
  opts.max_sweeps = 1;
  try {
    sym_eigendecompose(random_sym(16, rng), opts);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_GT(e.residual(), 0.0);
  }
}

TEST(ProjectPsd, ClampsNegativeEigenvalue) {
  const SymMatrix r = project_psd(SymMatrix(sym_matrix({{2, 0}, {0, -1}})));
  EXPECT_NEAR((r.matrix() - sym_matrix({{2, 0}, {0, 0}})).norm(), 0.0, 1e-14);
}

TEST(ProjectPsd, SwapMatrixKeepsPositiveComponent) {
  const SymMatrix r = project_psd(SymMatrix(sym_matrix({{0, 1}, {1, 0}})));
  EXPECT_NEAR((r.matrix() - sym_matrix({{0.5, 0.5}, {0.5, 0.5}})).norm(), 0.0, 1e-14);
}

TEST(ProjectPsd, FixedPointAndIdempotent) {
  Rng rng(9);
  for (int t = 0; t < 50; ++t) {
    const Matrix g = gaussian(6, 6, rng);
    const SymMatrix psd = symmetrize(g * g.transpose());
    EXPECT_LE((project_psd(psd).matrix() - psd.matrix()).norm(), 1e-9 * psd.matrix().norm());
    const SymMatrix a = random_sym(6, rng);
    const SymMatrix once = project_psd(a);
    const SymMatrix twice = project_psd(once);
    EXPECT_LE((twice.matrix() - once.matrix()).norm(), 1e-9 * std::max(1.0, once.matrix().norm()));
    const Spectrum s = sym_eigendecompose(once);
    EXPECT_GE(s.values(5), -1e-10 * a.matrix().norm());
  }
}

// Nearest-point property against random PSD competitors, with an independent
// clamp oracle built from Eigen's solver.
TEST(ProjectPsd, NearestAmongPsdMatricesAndMatchesOracle) {
  Rng rng(21);
  for (int t = 0; t < 200; ++t) {
    const SymMatrix a = random_sym(4, rng);
    const SymMatrix proj = project_psd(a);
    Eigen::SelfAdjointEigenSolver<Matrix> es(a.matrix());
    const Matrix oracle =
        es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).asDiagonal() * es.eigenvectors().transpose();
    EXPECT_LE((proj.matrix() - oracle).norm(), 1e-10);
    const double d = (proj.matrix() - a.matrix()).norm();
    for (int c = 0; c < 5; ++c) {
      const Matrix g = gaussian(4, 4, rng);
      const Matrix q = g * g.transpose() / (1 + c);
      EXPECT_LE(d, (q - a.matrix()).norm() + 1e-12);
    }
  }
}

TEST(Frobenius, Examples) {
  EXPECT_DOUBLE_EQ(frobenius_norm(Matrix::Identity(3, 3)), std::sqrt(3.0));
  EXPECT_EQ(frobenius_norm(Matrix::Zero(4, 4)), 0.0);
  EXPECT_DOUBLE_EQ(frobenius_norm(sym_matrix({{3, 4}, {0, 0}})), 5.0);
}

TEST(Cholesky, Examples) {
  EXPECT_EQ(cholesky_factor(SymMatrix::identity(3)), Matrix::Identity(3, 3));
  const Matrix l = cholesky_factor(SymMatrix(sym_matrix({{4, 0}, {0, 9}})));
  EXPECT_EQ(l, sym_matrix({{2, 0}, {0, 3}}));
}

TEST(Cholesky, ReconstructsRandomPd) {
  Rng rng(4);
  for (int t = 0; t < 100; ++t) {
    const Matrix a = gaussian(8, 8, rng);
    const SymMatrix pd = symmetrize(a.transpose() * a + Matrix::Identity(8, 8));
    const Matrix l = cholesky_factor(pd);
    EXPECT_TRUE(l.isLowerTriangular());
    EXPECT_LE((l * l.transpose() - pd.matrix()).norm(), 1e-9 * pd.matrix().norm());
  }
}

TEST(Cholesky, NamesOffendingPivot) {
  try {
    cholesky_factor(SymMatrix(sym_matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, -2}})));
    FAIL() << "expected DefinitenessError";
  } catch (const DefinitenessError& e) {
    EXPECT_EQ(e.pivot(), 2u);
  }
}

TEST(PrincipalAngles, Examples) {
  Rng rng(8);
  const Eigen::HouseholderQR<Matrix> qr(gaussian(6, 3, rng));
  const Matrix u = qr.householderQ() * Matrix::Identity(6, 3);
  const Vector same = principal_angle_cosines(u, u);
  for (Index k = 0; k < 3; ++k) EXPECT_NEAR(same(k), 1.0, 1e-12);

  Matrix e1 = Matrix::Zero(3, 1), e2 = Matrix::Zero(3, 1);
  e1(0, 0) = 1;
  e2(1, 0) = 1;
  EXPECT_NEAR(principal_angle_cosines(e1, e2)(0), 0.0, 1e-15);
  const Matrix mix = (e1 + e2) / std::sqrt(2.0);
  EXPECT_NEAR(principal_angle_cosines(e1, mix)(0), 1.0 / std::sqrt(2.0), 1e-14);
  EXPECT_THROW(principal_angle_cosines(u, e1), DimensionError);
}

TEST(MatrixCsv, RoundTripsExactly) {
  Rng rng(13);
  const Matrix a = gaussian(5, 7, rng) * 1e3;
  const std::string text = format_matrix_csv(a);
  EXPECT_EQ(parse_matrix_csv(text), a);
  EXPECT_EQ(format_matrix_csv(parse_matrix_csv(text)), text);
  EXPECT_THROW(parse_matrix_csv("1,2\n3\n"), FormatError);
  EXPECT_THROW(parse_matrix_csv("1,x\n"), FormatError);
}
