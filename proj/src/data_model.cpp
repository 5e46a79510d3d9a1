#include "cgdm/data_model.hpp"

#include "cgdm/errors.hpp"
#include "cgdm/io.hpp"
#include "cgdm/parallel.hpp"
#include "cgdm/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cgdm {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

}  // namespace

SymMatrix synth_covariance(const CovarianceSpec& spec, std::uint64_t seed) {
  const Index l = spec.dim;
  return std::visit(
      Overloaded{
          [&](const ToeplitzCovariance& t) {
            if (l < 1) throw ValidationError("toeplitz covariance: dimension must be >= 1");
            if (!(std::abs(t.rho) < 1.0)) {
              throw ValidationError("toeplitz covariance: |rho| must be < 1");
            }
            Matrix a(l, l);
            for (Index j = 0; j < l; ++j)
              for (Index i = 0; i < l; ++i)
                a(i, j) = std::pow(t.rho, static_cast<double>(std::abs(i - j)));
            return SymMatrix(std::move(a));
          },
          [&](const LowRankPlusIdentity& lr) {
            if (l < 1) throw ValidationError("low-rank covariance: dimension must be >= 1");
            if (lr.rank < 1 || lr.rank > l) {
              throw ValidationError("low-rank covariance: rank must lie in [1, l]");
            }
            if (!(lr.scale > 0.0) || !std::isfinite(lr.scale)) {
              throw ValidationError("low-rank covariance: scale must be > 0");
            }
            Rng rng(seed);
            Matrix u(l, lr.rank);
            const double inv = 1.0 / std::sqrt(static_cast<double>(lr.rank));
            for (Index j = 0; j < u.cols(); ++j)
              for (Index i = 0; i < l; ++i) u(i, j) = rng.normal() * inv;
            Matrix a = lr.scale * (u * u.transpose());
            a += Matrix::Identity(l, l);
            return symmetrize(a);
          },
          [&](const CovarianceFile& f) {
            Matrix a = read_matrix_csv(f.path);
            SymMatrix s(std::move(a));
            try {
              (void)cholesky_factor(s);
            } catch (const DefinitenessError&) {
              throw ValidationError("covariance file " + f.path.string() +
                                    " is not positive definite");
            }
            return s;
          },
      },
      spec.kind);
}

DataMatrix sample_gaussian_data(const SymMatrix& sigma, Index n, std::uint64_t seed) {
  if (n < 1) throw ValidationError("sample_gaussian_data: n must be >= 1");
  const Matrix l = cholesky_factor(sigma);
  const Index dim = sigma.dim();
  DataMatrix out{Matrix(dim, n)};
  const Rng root(seed);
  const Index chunks = (n + kSampleChunk - 1) / kSampleChunk;
  parallel_for(static_cast<std::size_t>(chunks), [&](std::size_t c) {
    Rng rng = root.child(c);
    const Index begin = static_cast<Index>(c) * kSampleChunk;
    const Index count = std::min(kSampleChunk, n - begin);
    Matrix z(dim, count);
    for (Index j = 0; j < count; ++j)
      for (Index i = 0; i < dim; ++i) z(i, j) = rng.normal();
    out.values.middleCols(begin, count).noalias() = l.triangularView<Eigen::Lower>() * z;
  });
  return out;
}

PartitionPlan make_partitions(Index n, int p, std::uint64_t seed) {
  if (p < 1) throw ValidationError("make_partitions: p must be >= 1");
  if (n < 1) throw ValidationError("make_partitions: n must be >= 1");
  if (p > n) {
    throw ValidationError("make_partitions: p = " + std::to_string(p) + " exceeds n = " +
                          std::to_string(n));
  }
  if (n % p != 0) {
    throw ValidationError("make_partitions: p = " + std::to_string(p) + " does not divide n = " +
                          std::to_string(n));
  }
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  Rng rng(seed);
  // Fisher-Yates with our own bounded draw so the permutation does not depend
  // on the standard library's shuffle implementation.
  for (std::size_t i = perm.size() - 1; i > 0; --i) {
    std::swap(perm[i], perm[rng.below(i + 1)]);
  }
  PartitionPlan plan;
  plan.partitions = p;
  plan.block_size = static_cast<int>(n / p);
  plan.index_sets.resize(static_cast<std::size_t>(p));
  for (int i = 0; i < p; ++i) {
    auto first = perm.begin() + static_cast<std::ptrdiff_t>(i) * plan.block_size;
    plan.index_sets[static_cast<std::size_t>(i)].assign(first, first + plan.block_size);
  }
  return plan;
}

Matrix gather_block(const DataMatrix& data, const std::vector<Index>& indices) {
  Matrix out(data.bands(), static_cast<Index>(indices.size()));
  for (std::size_t j = 0; j < indices.size(); ++j) {
    const Index src = indices[j];
    if (src < 0 || src >= data.samples()) throw DimensionError("gather_block: index out of range");
    out.col(static_cast<Index>(j)) = data.values.col(src);
  }
  return out;
}

SymMatrix sample_covariance(const DataMatrix& data) {
  Matrix s = Matrix::Zero(data.bands(), data.bands());
  s.selfadjointView<Eigen::Lower>().rankUpdate(data.values);
  s.triangularView<Eigen::StrictlyUpper>() = s.transpose();
  s /= static_cast<double>(data.samples());
  return SymMatrix(std::move(s));
}

std::string encode_cube(const Cube& cube) {
  const std::size_t count = static_cast<std::size_t>(cube.bands) * cube.rows * cube.cols;
  if (cube.bands < 1 || cube.rows < 1 || cube.cols < 1 || cube.data.size() != count) {
    throw DimensionError("encode_cube: data size does not match bands*rows*cols");
  }
  nlohmann::ordered_json header;
  header["magic"] = "HSCUBE";
  header["version"] = 1;
  header["bands"] = cube.bands;
  header["rows"] = cube.rows;
  header["cols"] = cube.cols;
  header["dtype"] = "f64";
  header["order"] = "band-major";
  std::string out = header.dump();
  out += '\n';
  out.reserve(out.size() + 8 * count);
  for (double v : cube.data) append_f64_le(out, v);
  return out;
}

Cube decode_cube(std::string_view bytes) {
  const std::size_t nl = bytes.find('\n');
  if (nl == std::string_view::npos) throw FormatError("cube: missing header line");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(0, nl));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("cube: malformed header: ") + e.what());
  }
  Cube cube;
  try {
    if (header.at("magic").get<std::string>() != "HSCUBE") throw FormatError("cube: bad magic");
    if (header.at("version").get<int>() != 1) throw FormatError("cube: unsupported version");
    if (header.at("dtype").get<std::string>() != "f64" ||
        header.at("order").get<std::string>() != "band-major") {
      throw FormatError("cube: unsupported dtype or order");
    }
    cube.bands = header.at("bands").get<int>();
    cube.rows = header.at("rows").get<int>();
    cube.cols = header.at("cols").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("cube: malformed header: ") + e.what());
  }
  if (cube.bands < 1 || cube.rows < 1 || cube.cols < 1) {
    throw FormatError("cube: dimensions must be positive");
  }
  const std::size_t count = static_cast<std::size_t>(cube.bands) * cube.rows * cube.cols;
  const std::string_view payload = bytes.substr(nl + 1);
  if (payload.size() != 8 * count) {
    throw FormatError("cube: payload has " + std::to_string(payload.size()) + " bytes, header implies " +
                      std::to_string(8 * count));
  }
  cube.data.resize(count);
  for (std::size_t i = 0; i < count; ++i) cube.data[i] = read_f64_le(payload.data() + 8 * i);
  return cube;
}

void write_cube(const Cube& cube, const std::filesystem::path& path) {
  write_file(path, encode_cube(cube));
}

Cube read_cube(const std::filesystem::path& path) { return decode_cube(read_file(path)); }

DataMatrix cube_to_data(const Cube& cube) {
  const Index pixels = static_cast<Index>(cube.rows) * cube.cols;
  DataMatrix out{Matrix(cube.bands, pixels)};
  for (Index b = 0; b < cube.bands; ++b) {
    const double* band = cube.data.data() + b * pixels;
    for (Index k = 0; k < pixels; ++k) {
      if (!std::isfinite(band[k])) throw DataError("cube: non-finite value in band " + std::to_string(b));
      out.values(b, k) = band[k];
    }
    out.values.row(b).array() -= out.values.row(b).mean();
  }
  return out;
}

DataMatrix load_cube(const std::filesystem::path& path) { return cube_to_data(read_cube(path)); }

Cube data_to_cube(const DataMatrix& data, int rows, int cols) {
  if (rows < 1 || cols < 1 || static_cast<Index>(rows) * cols != data.samples()) {
    throw DimensionError("data_to_cube: rows*cols must equal the sample count");
  }
  Cube cube{static_cast<int>(data.bands()), rows, cols, {}};
  cube.data.resize(static_cast<std::size_t>(data.values.size()));
  for (Index b = 0; b < data.bands(); ++b)
    for (Index k = 0; k < data.samples(); ++k)
      cube.data[static_cast<std::size_t>(b * data.samples() + k)] = data.values(b, k);
  return cube;
}

}  // namespace cgdm
