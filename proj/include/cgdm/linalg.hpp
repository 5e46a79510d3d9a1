#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <string>
#include <string_view>

namespace cgdm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Dense symmetric l x l real matrix. Carrier for covariances, gradients and
/// gradient errors. Construction validates squareness, finiteness and
/// symmetry to within 1e-12 * max(1, max|entry|).
///
/// Entrywise sums, differences and scalings of symmetric matrices are
/// symmetric bit-for-bit, so the arithmetic operators below skip the check.
class SymMatrix {
 public:
  SymMatrix() = default;
  explicit SymMatrix(Matrix values);

  static SymMatrix zero(Index dim);
  static SymMatrix identity(Index dim);

  Index dim() const noexcept { return values_.rows(); }
  const Matrix& matrix() const noexcept { return values_; }
  double operator()(Index i, Index j) const { return values_(i, j); }

  SymMatrix& operator+=(const SymMatrix& other);
  SymMatrix& operator-=(const SymMatrix& other);
  SymMatrix& operator*=(double scale);

  friend SymMatrix operator+(SymMatrix a, const SymMatrix& b) { return a += b; }
  friend SymMatrix operator-(SymMatrix a, const SymMatrix& b) { return a -= b; }
  friend SymMatrix operator*(SymMatrix a, double s) { return a *= s; }
  friend SymMatrix operator*(double s, SymMatrix a) { return a *= s; }

  friend bool operator==(const SymMatrix& a, const SymMatrix& b) {
    return a.values_ == b.values_;
  }

 private:
  struct Trusted {};
  SymMatrix(Matrix values, Trusted) : values_(std::move(values)) {}
  friend SymMatrix symmetrize(const Matrix& a);

  Matrix values_;
};

/// Eigenpairs of a symmetric matrix: eigenvalues descending, eigenvector k in
/// column k, each column's largest-magnitude component nonnegative.
struct Spectrum {
  Vector values;
  Matrix vectors;
};

struct JacobiOptions {
  int max_sweeps = 100;
  double tolerance = 1e-15;  // off-diagonal norm relative to ||A||_F
};

/// 0.5 (a + a^T). Throws DimensionError for non-square input.
SymMatrix symmetrize(const Matrix& a);

/// Cyclic Jacobi eigendecomposition. Throws NumericalError carrying the
/// remaining off-diagonal norm when the sweep budget runs out.
Spectrum sym_eigendecompose(const SymMatrix& a, const JacobiOptions& options = {});

SymMatrix reconstruct(const Spectrum& spectrum);

/// Frobenius-nearest positive semidefinite matrix (eigenvalue clipping).
SymMatrix project_psd(const SymMatrix& a);

double frobenius_norm(const Matrix& a);

double max_asymmetry(const Matrix& a);

/// Lower-triangular L with L L^T = a. Throws DefinitenessError naming the
/// first pivot that is not safely positive.
Matrix cholesky_factor(const SymMatrix& a);

/// Cosines of the principal angles between the column spans of u and v,
/// i.e. the singular values of u^T v, descending and clamped to [0, 1].
Vector principal_angle_cosines(const Matrix& u, const Matrix& v);

/// Largest singular value (spectral norm).
double spectral_norm(const Matrix& a);

/// Smallest singular value of a tall matrix.
double min_singular_value(const Matrix& a);

// Plain CSV, one row per line, 17 significant digits.
std::string format_matrix_csv(const Matrix& a);
Matrix parse_matrix_csv(std::string_view text);
void write_matrix_csv(const Matrix& a, const std::filesystem::path& path);
Matrix read_matrix_csv(const std::filesystem::path& path);

}  // namespace cgdm
