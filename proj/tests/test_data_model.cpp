#include "cgdm/data_model.hpp"
#include "cgdm/errors.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

using namespace cgdm;

TEST(SynthCovariance, ToeplitzExamples) {
  EXPECT_EQ(synth_covariance({ToeplitzCovariance{0.0}, 4}, 0).matrix(), Matrix::Identity(4, 4));
  const SymMatrix t = synth_covariance({ToeplitzCovariance{0.5}, 2}, 0);
  EXPECT_EQ(t(0, 0), 1.0);
  EXPECT_EQ(t(0, 1), 0.5);
  EXPECT_EQ(t(1, 0), 0.5);
  const SymMatrix big = synth_covariance({ToeplitzCovariance{0.9}, 8}, 0);
  EXPECT_DOUBLE_EQ(big(7, 2), std::pow(0.9, 5));
}

TEST(SynthCovariance, LowRankHasIdentityFloor) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const SymMatrix s = synth_covariance({LowRankPlusIdentity{2, 1.0}, 8}, seed);
    const Spectrum sp = sym_eigendecompose(s);
    EXPECT_GE(sp.values(7), 1.0 - 1e-12);
  }
}

TEST(SynthCovariance, RejectsInvalidSpecs) {
  EXPECT_THROW(synth_covariance({ToeplitzCovariance{1.0}, 4}, 0), ValidationError);
  EXPECT_THROW(synth_covariance({LowRankPlusIdentity{0, 1.0}, 4}, 0), ValidationError);
  EXPECT_THROW(synth_covariance({LowRankPlusIdentity{5, 1.0}, 4}, 0), ValidationError);
  EXPECT_THROW(synth_covariance({LowRankPlusIdentity{2, -1.0}, 4}, 0), ValidationError);
}

TEST(SynthCovariance, FromFile) {
  const auto path = std::filesystem::temp_directory_path() / "cgdm_test_cov.csv";
  const SymMatrix t = synth_covariance({ToeplitzCovariance{0.3}, 5}, 0);
  write_matrix_csv(t.matrix(), path);
  EXPECT_EQ(synth_covariance({CovarianceFile{path}, 5}, 0), t);
  Matrix bad = Matrix::Identity(3, 3);
  bad(2, 2) = -1;
  write_matrix_csv(bad, path);
  EXPECT_THROW(synth_covariance({CovarianceFile{path}, 3}, 0), ValidationError);
  std::filesystem::remove(path);
}

TEST(SampleGaussian, IdentityConvergesAtLargeN) {
  const DataMatrix x = sample_gaussian_data(SymMatrix::identity(32), 100000, 1);
  const SymMatrix s = sample_covariance(x);
  EXPECT_LE((s.matrix() - Matrix::Identity(32, 32)).norm() / std::sqrt(32.0), 0.05);
}

TEST(SampleGaussian, SingleSampleIsRankOne) {
  const DataMatrix x = sample_gaussian_data(synth_covariance({ToeplitzCovariance{0.5}, 6}, 0), 1, 3);
  const SymMatrix s = sample_covariance(x);
  EXPECT_LE((s.matrix() - x.values * x.values.transpose()).norm(), 1e-15);
  const Spectrum sp = sym_eigendecompose(s);
  EXPECT_LE(std::abs(sp.values(1)), 1e-12 * sp.values(0));
}

TEST(SampleGaussian, DeterministicForSeed) {
  const SymMatrix sigma = synth_covariance({ToeplitzCovariance{0.9}, 8}, 0);
  EXPECT_EQ(sample_gaussian_data(sigma, 3000, 42).values, sample_gaussian_data(sigma, 3000, 42).values);
  EXPECT_NE(sample_gaussian_data(sigma, 3000, 42).values, sample_gaussian_data(sigma, 3000, 43).values);
}

TEST(SampleGaussian, RejectsIndefinite) {
  Matrix a = Matrix::Identity(3, 3);
  a(1, 1) = -1;
  EXPECT_THROW(sample_gaussian_data(SymMatrix(a), 10, 0), DefinitenessError);
}

// Quadrupling n should roughly halve the covariance error.
TEST(SampleGaussian, ConvergesAtRootNRate) {
  const SymMatrix sigma = synth_covariance({ToeplitzCovariance{0.9}, 8}, 0);
  double e1 = 0.0, e4 = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    e1 += (sample_covariance(sample_gaussian_data(sigma, 10000, seed)).matrix() - sigma.matrix()).norm();
    e4 += (sample_covariance(sample_gaussian_data(sigma, 40000, 100 + seed)).matrix() - sigma.matrix()).norm();
  }
  e1 /= 20;
  e4 /= 20;
  // Expected ratio is 0.5; the mean of 20 Frobenius errors fluctuates by
  // roughly 5%, so 3x that band is 0.15.
  EXPECT_LE(e4 / e1, 0.5 + 0.15);
  EXPECT_GE(e4 / e1, 0.5 - 0.15);
}

TEST(Partitions, SmallExamples) {
  const PartitionPlan plan = make_partitions(4, 2, 5);
  ASSERT_EQ(plan.index_sets.size(), 2u);
  std::vector<Index> all;
  for (const auto& s : plan.index_sets) {
    EXPECT_EQ(s.size(), 2u);
    all.insert(all.end(), s.begin(), s.end());
  }
  std::sort(all.begin(), all.end());
  EXPECT_EQ(all, (std::vector<Index>{0, 1, 2, 3}));

  const PartitionPlan one = make_partitions(7, 1, 5);
  ASSERT_EQ(one.index_sets.size(), 1u);
  std::vector<Index> perm = one.index_sets[0];
  std::sort(perm.begin(), perm.end());
  std::vector<Index> expect(7);
  std::iota(expect.begin(), expect.end(), Index{0});
  EXPECT_EQ(perm, expect);
}

TEST(Partitions, ManyBlocks) {
  const PartitionPlan plan = make_partitions(1024, 256, 9);
  EXPECT_EQ(plan.partitions, 256);
  EXPECT_EQ(plan.block_size, 4);
  std::vector<int> seen(1024, 0);
  for (const auto& s : plan.index_sets) {
    EXPECT_EQ(s.size(), 4u);
    for (Index i : s) ++seen[static_cast<std::size_t>(i)];
  }
  EXPECT_TRUE(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));
}

TEST(Partitions, RejectsBadCounts) {
  EXPECT_THROW(make_partitions(10, 3, 0), ValidationError);
  EXPECT_THROW(make_partitions(4, 8, 0), ValidationError);
  EXPECT_THROW(make_partitions(4, 0, 0), ValidationError);
}

TEST(Partitions, UniformMembership) {
  std::vector<int> hits(8, 0);
  const int trials = 10000;
  for (int seed = 0; seed < trials; ++seed) {
    const PartitionPlan plan = make_partitions(8, 2, static_cast<std::uint64_t>(seed));
    for (Index i : plan.index_sets[0]) ++hits[static_cast<std::size_t>(i)];
  }
  for (int h : hits) EXPECT_NEAR(static_cast<double>(h) / trials, 0.5, 0.02);
}

TEST(Cube, RoundTripIsBitExact) {
  Cube cube{3, 4, 5, {}};
  for (int i = 0; i < 60; ++i) cube.data.push_back(std::sin(0.37 * i) * 1e3 + 1.0 / 3.0);
  const std::string bytes = encode_cube(cube);
  const Cube back = decode_cube(bytes);
  EXPECT_EQ(back.bands, 3);
  EXPECT_EQ(back.rows, 4);
  EXPECT_EQ(back.cols, 5);
  EXPECT_EQ(back.data, cube.data);
  EXPECT_EQ(encode_cube(back), bytes);
}

TEST(Cube, RejectsMalformed) {
  const std::string good = encode_cube(Cube{1, 1, 2, {1.0, 2.0}});
  EXPECT_THROW(decode_cube(good.substr(0, good.size() - 3)), FormatError);
  EXPECT_THROW(decode_cube(good + "x"), FormatError);
  std::string magic = good;
  magic.replace(magic.find("HSCUBE"), 6, "HSCUBX");
  EXPECT_THROW(decode_cube(magic), FormatError);
  std::string version = good;
  version.replace(version.find("\"version\":1"), 11, "\"version\":2");
  EXPECT_THROW(decode_cube(version), FormatError);
  EXPECT_THROW(decode_cube("not json\n"), FormatError);
  EXPECT_THROW(decode_cube(""), FormatError);
}

TEST(Cube, CentersBandsOnLoad) {
  const SymMatrix sigma = synth_covariance({ToeplitzCovariance{0.9}, 6}, 0);
  DataMatrix x = sample_gaussian_data(sigma, 20 * 30, 2);
  x.values.array() += 7.5;
  const auto path = std::filesystem::temp_directory_path() / "cgdm_test.hscube";
  write_cube(data_to_cube(x, 20, 30), path);
  const DataMatrix loaded = load_cube(path);
  EXPECT_EQ(loaded.bands(), 6);
  EXPECT_EQ(loaded.samples(), 600);
  for (Index b = 0; b < 6; ++b) EXPECT_LE(std::abs(loaded.values.row(b).mean()), 1e-10);
  EXPECT_EQ(read_cube(path).data, data_to_cube(x, 20, 30).data);
  std::filesystem::remove(path);
}

TEST(Cube, SingleValueBecomesZero) {
  const DataMatrix d = cube_to_data(Cube{1, 1, 1, {5.0}});
  ASSERT_EQ(d.values.size(), 1);
  EXPECT_EQ(d.values(0, 0), 0.0);
}

TEST(Cube, NonFiniteIsDataError) {
  EXPECT_THROW(cube_to_data(Cube{1, 1, 2, {1.0, NAN}}), DataError);
}

TEST(Cube, PixelLayout) {
  Cube cube{2, 2, 3, {}};
  for (int i = 0; i < 12; ++i) cube.data.push_back(i);
  const DataMatrix d = cube_to_data(cube);
  // value(b, r, c) at column r*cols + c, before centering band means 2.5 and 8.5.
  EXPECT_DOUBLE_EQ(d.values(0, 4), 4.0 - 2.5);
  EXPECT_DOUBLE_EQ(d.values(1, 5), 11.0 - 8.5);
}
