#pragma once

#include "cgdm/linalg.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

namespace cgdm {

/// l x n samples, column j is sample x_j.
struct DataMatrix {
  Matrix values;

  Index bands() const noexcept { return values.rows(); }
  Index samples() const noexcept { return values.cols(); }
};

/// Random split of sample indices {0..n-1} into p disjoint blocks of b = n/p.
struct PartitionPlan {
  int partitions = 0;
  int block_size = 0;
  std::vector<std::vector<Index>> index_sets;
};

struct ToeplitzCovariance {
  double rho = 0.9;
};

struct LowRankPlusIdentity {
  int rank = 1;
  double scale = 1.0;
};

struct CovarianceFile {
  std::filesystem::path path;
};

struct CovarianceSpec {
  std::variant<ToeplitzCovariance, LowRankPlusIdentity, CovarianceFile> kind;
  Index dim = 32;
};

/// Ground-truth covariance: rho^|i-j|, scale * U U^T + I with U_ij ~ N(0, 1/r),
/// or a CSV file. Throws ValidationError for bad parameters or a file whose
/// matrix is not symmetric positive definite.
SymMatrix synth_covariance(const CovarianceSpec& spec, std::uint64_t seed);

/// n i.i.d. draws L z with L the Cholesky factor of sigma. Columns are filled
/// in chunks of kSampleChunk, each chunk from its own child stream.
DataMatrix sample_gaussian_data(const SymMatrix& sigma, Index n, std::uint64_t seed);
inline constexpr Index kSampleChunk = 1024;

PartitionPlan make_partitions(Index n, int p, std::uint64_t seed);

/// Columns of `data` selected by one partition block.
Matrix gather_block(const DataMatrix& data, const std::vector<Index>& indices);

/// (1/n) X X^T
SymMatrix sample_covariance(const DataMatrix& data);

/// Raw hyperspectral cube, band-major: value(b, r, c) = data[(b*rows + r)*cols + c].
struct Cube {
  int bands = 0;
  int rows = 0;
  int cols = 0;
  std::vector<double> data;
};

// HSCUBE v1: JSON header line
//   {"magic":"HSCUBE","version":1,"bands":l,"rows":R,"cols":C,"dtype":"f64","order":"band-major"}
// then l*R*C little-endian f64 values.
std::string encode_cube(const Cube& cube);
Cube decode_cube(std::string_view bytes);
void write_cube(const Cube& cube, const std::filesystem::path& path);
Cube read_cube(const std::filesystem::path& path);

/// Pixels become columns (pixel index r*cols + c), bands become rows, and
/// each band is centered to zero mean.
DataMatrix cube_to_data(const Cube& cube);
DataMatrix load_cube(const std::filesystem::path& path);

/// Inverse layout of cube_to_data without centering; n must equal rows*cols.
Cube data_to_cube(const DataMatrix& data, int rows, int cols);

}  // namespace cgdm
