#include "cgdm/linalg.hpp"

#include "cgdm/errors.hpp"
#include "cgdm/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <vector>

namespace cgdm {

namespace {

double symmetry_tolerance(const Matrix& a) {
  const double scale = a.size() == 0 ? 0.0 : a.cwiseAbs().maxCoeff();
  return 1e-12 * std::max(1.0, scale);
}

void require_square(const Matrix& a, const char* what) {
  if (a.rows() != a.cols() || a.rows() == 0) {
    throw DimensionError(std::string(what) + ": expected a non-empty square matrix, got " +
                         std::to_string(a.rows()) + "x" + std::to_string(a.cols()));
  }
}

}  // namespace

SymMatrix::SymMatrix(Matrix values) : values_(std::move(values)) {
  require_square(values_, "SymMatrix");
  if (!values_.allFinite()) throw ValidationError("SymMatrix: non-finite entry");
  const double asym = max_asymmetry(values_);
  if (asym > symmetry_tolerance(values_)) {
    throw ValidationError("SymMatrix: asymmetry " + format_double(asym) + " exceeds tolerance");
  }
}

SymMatrix SymMatrix::zero(Index dim) { return SymMatrix(Matrix::Zero(dim, dim), Trusted{}); }

SymMatrix SymMatrix::identity(Index dim) {
  return SymMatrix(Matrix::Identity(dim, dim), Trusted{});
}

SymMatrix& SymMatrix::operator+=(const SymMatrix& other) {
  if (other.dim() != dim()) throw DimensionError("SymMatrix +: dimension mismatch");
  values_ += other.values_;
  return *this;
}

SymMatrix& SymMatrix::operator-=(const SymMatrix& other) {
  if (other.dim() != dim()) throw DimensionError("SymMatrix -: dimension mismatch");
  values_ -= other.values_;
  return *this;
}

SymMatrix& SymMatrix::operator*=(double scale) {
  values_ *= scale;
  return *this;
}

SymMatrix symmetrize(const Matrix& a) {
  require_square(a, "symmetrize");
  Matrix out(a.rows(), a.cols());
  for (Index j = 0; j < a.cols(); ++j) {
    for (Index i = 0; i < a.rows(); ++i) out(i, j) = 0.5 * (a(i, j) + a(j, i));
  }
  return SymMatrix(std::move(out), SymMatrix::Trusted{});
}

double max_asymmetry(const Matrix& a) {
  double worst = 0.0;
  for (Index j = 0; j < a.cols(); ++j) {
    for (Index i = j + 1; i < a.rows(); ++i) worst = std::max(worst, std::abs(a(i, j) - a(j, i)));
  }
  return worst;
}

Spectrum sym_eigendecompose(const SymMatrix& sym, const JacobiOptions& options) {
  const Index n = sym.dim();
  Matrix a = sym.matrix();
  Matrix v = Matrix::Identity(n, n);

  const double norm = a.norm();
  const double threshold = options.tolerance * norm;
  auto off_norm = [&] {
    double s = 0.0;
    for (Index j = 0; j < n; ++j)
      for (Index i = j + 1; i < n; ++i) s += a(i, j) * a(i, j);
    return std::sqrt(2.0 * s);
  };

  double off = off_norm();
  int sweep = 0;
  for (; sweep < options.max_sweeps && off > threshold; ++sweep) {
    for (Index p = 0; p < n - 1; ++p) {
      for (Index q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        // Negligible against both diagonal entries: drop it instead of rotating.
        const double g = 100.0 * std::abs(apq);
        if (sweep > 3 && std::abs(a(p, p)) + g == std::abs(a(p, p)) &&
            std::abs(a(q, q)) + g == std::abs(a(q, q))) {
          a(p, q) = a(q, p) = 0.0;
          continue;
        }
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (Index k = 0; k < n; ++k) {
          if (k == p || k == q) continue;
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = a(p, k) = c * akp - s * akq;
          a(k, q) = a(q, k) = s * akp + c * akq;
        }
        a(p, p) -= t * apq;
        a(q, q) += t * apq;
        a(p, q) = a(q, p) = 0.0;
        for (Index k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
    off = off_norm();
  }
  if (off > threshold) {
    throw NumericalError("sym_eigendecompose: Jacobi did not converge in " +
                             std::to_string(options.max_sweeps) + " sweeps",
                         off);
  }

  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Index x, Index y) { return a(x, x) > a(y, y); });

  Spectrum out{Vector(n), Matrix(n, n)};
  for (Index k = 0; k < n; ++k) {
    const Index src = order[static_cast<std::size_t>(k)];
    out.values(k) = a(src, src);
    auto col = v.col(src);
    Index arg = 0;
    for (Index i = 1; i < n; ++i)
      if (std::abs(col(i)) > std::abs(col(arg))) arg = i;
    out.vectors.col(k) = col(arg) < 0.0 ? Vector(-col) : Vector(col);
  }
  return out;
}

SymMatrix reconstruct(const Spectrum& spectrum) {
  const Matrix& v = spectrum.vectors;
  return symmetrize(v * spectrum.values.asDiagonal() * v.transpose());
}

SymMatrix project_psd(const SymMatrix& a) {
  Spectrum s = sym_eigendecompose(a);
  if (s.values.minCoeff() >= 0.0) return a;
  s.values = s.values.cwiseMax(0.0);
  return reconstruct(s);
}

double frobenius_norm(const Matrix& a) { return a.norm(); }

Matrix cholesky_factor(const SymMatrix& sym) {
  const Index n = sym.dim();
  const Matrix& a = sym.matrix();
  const double floor = 1e-12 * a.trace() / static_cast<double>(n);
  Matrix l = Matrix::Zero(n, n);
  for (Index j = 0; j < n; ++j) {
    double d = a(j, j);
    for (Index k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > floor) || !(d > 0.0)) {
      throw DefinitenessError("cholesky_factor: matrix is not positive definite",
                              static_cast<std::size_t>(j));
    }
    const double ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (Index i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (Index k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / ljj;
    }
  }
  return l;
}

Vector principal_angle_cosines(const Matrix& u, const Matrix& v) {
  if (u.rows() != v.rows() || u.cols() != v.cols() || u.cols() == 0) {
    throw DimensionError("principal_angle_cosines: shapes " + std::to_string(u.rows()) + "x" +
                         std::to_string(u.cols()) + " and " + std::to_string(v.rows()) + "x" +
                         std::to_string(v.cols()) + " differ");
  }
  const Matrix m = u.transpose() * v;
  const Spectrum s = sym_eigendecompose(symmetrize(m.transpose() * m));
  Vector out(s.values.size());
  for (Index k = 0; k < out.size(); ++k) out(k) = std::clamp(std::sqrt(std::max(0.0, s.values(k))), 0.0, 1.0);
  return out;
}

double spectral_norm(const Matrix& a) {
  const Spectrum s = sym_eigendecompose(symmetrize(a.transpose() * a));
  return std::sqrt(std::max(0.0, s.values(0)));
}

double min_singular_value(const Matrix& a) {
  const Spectrum s = sym_eigendecompose(symmetrize(a.transpose() * a));
  return std::sqrt(std::max(0.0, s.values(s.values.size() - 1)));
}

std::string format_matrix_csv(const Matrix& a) {
  std::string out;
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = 0; j < a.cols(); ++j) {
      if (j > 0) out += ',';
      out += format_double(a(i, j));
    }
    out += '\n';
  }
  return out;
}

Matrix parse_matrix_csv(std::string_view text) {
  std::vector<std::vector<double>> rows;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    pos = end + 1;
    if (line.empty()) continue;
    std::vector<double> row;
    std::size_t cell = 0;
    while (cell <= line.size()) {
      std::size_t comma = line.find(',', cell);
      if (comma == std::string_view::npos) comma = line.size();
      std::string_view field = line.substr(cell, comma - cell);
      while (!field.empty() && field.front() == ' ') field.remove_prefix(1);
      while (!field.empty() && field.back() == ' ') field.remove_suffix(1);
      double value = 0.0;
      auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
      if (ec != std::errc{} || ptr != field.data() + field.size()) {
        throw FormatError("matrix csv: cannot parse '" + std::string(field) + "'");
      }
      row.push_back(value);
      cell = comma + 1;
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw FormatError("matrix csv: ragged rows");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw FormatError("matrix csv: empty");
  Matrix out(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (Index i = 0; i < out.rows(); ++i)
    for (Index j = 0; j < out.cols(); ++j) out(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return out;
}

void write_matrix_csv(const Matrix& a, const std::filesystem::path& path) {
  write_file(path, format_matrix_csv(a));
}

Matrix read_matrix_csv(const std::filesystem::path& path) { return parse_matrix_csv(read_file(path)); }

}  // namespace cgdm
