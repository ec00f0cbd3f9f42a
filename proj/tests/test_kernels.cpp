#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "vitloss/kernels.hpp"

using namespace vitloss;
namespace k = vitloss::kernels;

TEST(Tensor, RejectsNonFiniteValues) {
  EXPECT_THROW(Tensor<double>({2}, {1.0, std::nan("")}), NumericError);
  EXPECT_THROW(Tensor<double>({1}, {INFINITY}), NumericError);
}

TEST(Tensor, RejectsSizeMismatchAndZeroDims) {
  EXPECT_THROW(Tensor<double>({2, 2}, {1.0, 2.0, 3.0}), DimensionError);
  EXPECT_THROW(Tensor<double>(Shape{0, 3}), DimensionError);
}

TEST(Tensor, CopiesAreValues) {
  Tensor<double> a({2}, {1.0, 2.0});
  Tensor<double> b = a;
  b.mutable_data()[0] = 5.0;
  EXPECT_EQ(a[0], 1.0);
  EXPECT_EQ(b[0], 5.0);
}

TEST(Matmul, IdentityIsNeutral) {
  const Tensor<double> eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const Tensor<double> b = fixture::random_tensor({3, 3}, 1);
  EXPECT_TRUE(k::matmul(eye, b).identical(b));
}

TEST(Matmul, ZerosAnnihilate) {
  const Tensor<double> z({2, 4});
  const Tensor<double> c = k::matmul(z, fixture::random_tensor({4, 3}, 2));
  EXPECT_EQ(c.shape(), (Shape{2, 3}));
  for (double v : c.data()) EXPECT_EQ(v, 0.0);
}

TEST(Matmul, MatchesTripleLoop) {
  const auto a = fixture::random_tensor({5, 7}, 3);
  const auto b = fixture::random_tensor({7, 3}, 4);
  const auto ref = oracle::matmul(oracle::to_matrix(a), oracle::to_matrix(b));
  const auto c = k::matmul(a, b);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      EXPECT_LE(std::abs(c.at(i, j) - ref[i][j]), 1e-12 * std::max(1.0, std::abs(ref[i][j])));
    }
  }
}

TEST(Matmul, TransposedVariantsAgree) {
  const auto a = fixture::random_tensor({6, 5}, 5);
  const auto b = fixture::random_tensor({4, 5}, 6);
  const auto c = fixture::random_tensor({6, 4}, 7);
  const auto nt = k::matmul_nt(a, b);
  const auto ref_nt = k::matmul(a, k::transpose(b));
  const auto tn = k::matmul_tn(a, c);
  const auto ref_tn = k::matmul(k::transpose(a), c);
  for (std::size_t i = 0; i < nt.numel(); ++i) EXPECT_NEAR(nt[i], ref_nt[i], 1e-14);
  for (std::size_t i = 0; i < tn.numel(); ++i) EXPECT_NEAR(tn[i], ref_tn[i], 1e-14);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    k::matmul(Tensor<double>({2, 3}), Tensor<double>({4, 2}));
    FAIL();
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4x2]"), std::string::npos) << msg;
  }
}

TEST(Matmul, Float32PathRuns) {
  const auto a = fixture::random_tensor({4, 4}, 8).cast<float>();
  const auto c = k::matmul(a, a);
  EXPECT_EQ(c.shape(), (Shape{4, 4}));
}

TEST(LayerNorm, ConstantRowBecomesZero) {
  const auto out = k::layer_norm(Tensor<double>::full({1, 4}, 3.5), Tensor<double>::full({4}, 1.0),
                                 Tensor<double>({4}), 1e-6);
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, PlusMinusOne) {
  const auto out = k::layer_norm(Tensor<double>({1, 2}, {1.0, -1.0}), Tensor<double>::full({2}, 1.0),
                                 Tensor<double>({2}), 1e-15);
  EXPECT_NEAR(out[0], 1.0, 1e-12);
  EXPECT_NEAR(out[1], -1.0, 1e-12);
}

TEST(LayerNorm, ZeroGainGivesBeta) {
  const auto beta = fixture::random_tensor({5}, 9);
  const auto out = k::layer_norm(fixture::random_tensor({3, 5}, 10), Tensor<double>({5}), beta, 1e-6);
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 5; ++c) EXPECT_EQ(out.at(r, c), beta[c]);
  }
}

TEST(LayerNorm, RowsHaveZeroMeanAndMatchOracle) {
  const auto x = fixture::random_tensor({6, 7}, 11, 3.0);
  const auto gamma = Tensor<double>::full({7}, 1.0);
  const Tensor<double> beta({7});
  const auto out = k::layer_norm(x, gamma, beta, 1e-6);
  const auto ref = oracle::layer_norm(oracle::to_matrix(x), std::vector<double>(7, 1.0),
                                      std::vector<double>(7, 0.0), 1e-6);
  for (std::size_t r = 0; r < 6; ++r) {
    double mean = 0.0;
    for (std::size_t c = 0; c < 7; ++c) {
      mean += out.at(r, c);
      EXPECT_NEAR(out.at(r, c), ref[r][c], 1e-12);
    }
    EXPECT_LT(std::abs(mean / 7.0), 1e-10);
  }
}

TEST(LayerNorm, EmptyRowRejected) {
  EXPECT_THROW(k::layer_norm(Tensor<double>({2}), Tensor<double>({2}), Tensor<double>({2}), 1e-6),
               DimensionError);
}

TEST(Softmax, UniformRow) {
  const auto out = k::softmax_rows(Tensor<double>::full({1, 4}, 0.3));
  for (double v : out.data()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
  const auto out = k::softmax_rows(Tensor<double>({1, 2}, {1000.0, 0.0}));
  EXPECT_NEAR(out[0], 1.0, 1e-15);
  EXPECT_NEAR(out[1], 0.0, 1e-15);
}

TEST(Softmax, MatchesExpNormalizeAndSumsToOne) {
  const auto x = fixture::random_tensor({3, 4}, 12, 2.0);
  const auto out = k::softmax_rows(x);
  const auto ref = oracle::softmax_rows(oracle::to_matrix(x));
  for (std::size_t r = 0; r < 3; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < 4; ++c) {
      EXPECT_NEAR(out.at(r, c), ref[r][c], 1e-15);
      EXPECT_GE(out.at(r, c), 0.0);
      total += out.at(r, c);
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Gelu, DerivativeMatchesDifference) {
  for (double x : {-3.0, -1.0, -0.2, 0.0, 0.4, 2.5}) {
    const double h = 1e-6;
    const double fd = (k::gelu(x + h) - k::gelu(x - h)) / (2 * h);
    EXPECT_NEAR(k::gelu_derivative(x), fd, 1e-8);
    EXPECT_NEAR(k::gelu(x), oracle::gelu(x), 1e-15);
  }
}

TEST(Sort, HandCase) {
  const auto r = k::sort_with_permutation(Tensor<double>({3}, {3, 1, 2}));
  EXPECT_TRUE(r.sorted.identical(Tensor<double>({3}, {1, 2, 3})));
  EXPECT_EQ(r.perm, (std::vector<std::size_t>{1, 2, 0}));
}

TEST(Sort, SortedInputGivesIdentity) {
  const auto r = k::sort_with_permutation(Tensor<double>({4}, {-1, 0, 2, 9}));
  EXPECT_EQ(r.perm, (std::vector<std::size_t>{0, 1, 2, 3}));
}

TEST(Sort, StableOnTies) {
  const auto r = k::sort_with_permutation(Tensor<double>({3}, {2, 1, 2}));
  EXPECT_TRUE(r.sorted.identical(Tensor<double>({3}, {1, 2, 2})));
  EXPECT_EQ(r.perm, (std::vector<std::size_t>{1, 0, 2}));
}

TEST(Sort, RowsSortIndependently) {
  const auto r = k::sort_rows(Tensor<double>({2, 3}, {3, 1, 2, 0, -5, 7}));
  EXPECT_TRUE(r.sorted.identical(Tensor<double>({2, 3}, {1, 2, 3, -5, 0, 7})));
  EXPECT_EQ(r.perm, (std::vector<std::size_t>{1, 2, 0, 1, 0, 2}));
}

TEST(Determinism, RepeatedKernelsAreBitwiseEqual) {
  const auto a = fixture::random_tensor({33, 47}, 13);
  const auto b = fixture::random_tensor({47, 29}, 14);
  EXPECT_TRUE(k::matmul(a, b).identical(k::matmul(a, b)));
  EXPECT_TRUE(k::softmax_rows(a).identical(k::softmax_rows(a)));
}
