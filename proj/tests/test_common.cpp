#include <cmath>

#include <gtest/gtest.h>

#include <vector>

#include "dsgd/common.hpp"

using namespace dsgd;

TEST(Matrix, ProductAndDifference) {
  Matrix a(2, 2);
  a(0, 0) = 1; a(0, 1) = 2; a(1, 0) = 3; a(1, 1) = 4;
  const Matrix id = Matrix::identity(2);
  EXPECT_EQ(a * id, a);
  const Matrix sq = a * a;
  EXPECT_DOUBLE_EQ(sq(0, 0), 7);
  EXPECT_DOUBLE_EQ(sq(1, 1), 22);
  const Matrix zero = a - a;
  for (double v : zero.data()) EXPECT_EQ(v, 0.0);
}

TEST(VectorOps, DotNormDistance) {
  std::vector<double> a{1, 2, 2}, b{0, 0, 0};
  EXPECT_DOUBLE_EQ(dot(a, a), 9);
  EXPECT_DOUBLE_EQ(squared_norm(a), 9);
  EXPECT_DOUBLE_EQ(squared_distance(a, b), 9);
}

TEST(DeriveSeed, DeterministicAndDistinct) {
  EXPECT_EQ(derive_seed(1, "run", 3), derive_seed(1, "run", 3));
  EXPECT_NE(derive_seed(1, "run", 3), derive_seed(1, "run", 4));
  EXPECT_NE(derive_seed(1, "run", 3), derive_seed(1, "data", 3));
  EXPECT_NE(derive_seed(1, "run", 3), derive_seed(2, "run", 3));
}

TEST(MeanSe, SampleStandardError) {
  const std::vector<double> v{1, 2, 3, 4};
  const auto s = mean_and_se(v);
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
  EXPECT_NEAR(s.se, std::sqrt(5.0 / 3.0) / 2.0, 1e-15);
}
