#include <gtest/gtest.h>

#include <cmath>

#include "semimemes/rng.hpp"
#include "semimemes/tensor.hpp"

using semimemes::Matrix;

namespace {

Matrix<double> random_matrix(semimemes::Rng& rng, std::size_t r, std::size_t c) {
  Matrix<double> m(r, c);
  for (auto& v : m.values()) v = rng.uniform(-1.0, 1.0);
  return m;
}

double max_relative_diff(const Matrix<double>& a, const Matrix<double>& b) {
  double scale = 0.0, diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    scale = std::max(scale, std::abs(b.values()[i]));
    diff = std::max(diff, std::abs(a.values()[i] - b.values()[i]));
  }
  return diff / std::max(scale, 1e-300);
}

}  // namespace

TEST(Matmul, IdentityLeavesOperandUnchanged) {
  const Matrix<double> id{{1, 0}, {0, 1}};
  const Matrix<double> b{{5, 6}, {7, 8}};
  EXPECT_EQ(semimemes::matmul(id, b), b);
}

TEST(Matmul, RowTimesColumnIsDotProduct) {
  const Matrix<double> a{{1, 2}};
  const Matrix<double> b{{3}, {4}};
  EXPECT_EQ(semimemes::matmul(a, b), (Matrix<double>{{11}}));
}

TEST(Matmul, DimensionMismatchReportsBothShapes) {
  const Matrix<double> a(2, 3), b(4, 2);
  try {
    semimemes::matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const semimemes::ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2x3"), std::string::npos);
    EXPECT_NE(msg.find("4x2"), std::string::npos);
  }
}

TEST(Matmul, TransposedVariantsAgreeWithExplicitTranspose) {
  semimemes::Rng rng(3);
  const auto a = random_matrix(rng, 5, 3);
  const auto b = random_matrix(rng, 5, 4);
  const auto c = random_matrix(rng, 6, 3);
  EXPECT_LT(max_relative_diff(semimemes::matmul_tn(a, b), semimemes::matmul(semimemes::transpose(a), b)), 1e-15);
  EXPECT_LT(max_relative_diff(semimemes::matmul_nt(a, c), semimemes::matmul(a, semimemes::transpose(c))), 1e-15);
}

TEST(Elementwise, AddScaleAndMismatch) {
  EXPECT_EQ(semimemes::add(Matrix<double>{{1, 2}}, Matrix<double>{{3, 4}}), (Matrix<double>{{4, 6}}));
  EXPECT_EQ(semimemes::scale(Matrix<double>{{1, -2}}, 0.5), (Matrix<double>{{0.5, -1}}));
  EXPECT_THROW(semimemes::sub(Matrix<double>(1, 2), Matrix<double>(2, 1)), semimemes::ShapeError);
  EXPECT_EQ(semimemes::mul(Matrix<double>{{2, 3}}, Matrix<double>{{4, -1}}), (Matrix<double>{{8, -3}}));
  EXPECT_EQ(semimemes::map(Matrix<double>{{1, 4}}, [](double v) { return std::sqrt(v); }), (Matrix<double>{{1, 2}}));
}

TEST(Elementwise, NonFiniteResultIsAnError) {
  const Matrix<double> big{{1e308}};
  EXPECT_THROW(semimemes::scale(big, 10.0), semimemes::NumericalError);
  EXPECT_THROW(semimemes::map(Matrix<double>{{-1}}, [](double v) { return std::log(v); }), semimemes::NumericalError);
}

TEST(MatmulProperty, AssociativityOnRandomChains) {
  semimemes::Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.below(8), p = 1 + rng.below(8), q = 1 + rng.below(8), r = 1 + rng.below(8);
    const auto a = random_matrix(rng, n, p), b = random_matrix(rng, p, q), c = random_matrix(rng, q, r);
    const auto left = semimemes::matmul(semimemes::matmul(a, b), c);
    const auto right = semimemes::matmul(a, semimemes::matmul(b, c));
    EXPECT_LT(max_relative_diff(left, right), 1e-6) << "trial " << trial;
  }
}

TEST(MatmulProperty, RightDistributivity) {
  semimemes::Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.below(8), p = 1 + rng.below(8), q = 1 + rng.below(8);
    const auto a = random_matrix(rng, n, p), b = random_matrix(rng, n, p), c = random_matrix(rng, p, q);
    const auto lhs = semimemes::matmul(semimemes::add(a, b), c);
    const auto rhs = semimemes::add(semimemes::matmul(a, c), semimemes::matmul(b, c));
    EXPECT_LT(max_relative_diff(lhs, rhs), 1e-6) << "trial " << trial;
  }
}

TEST(Layout, ConcatAndColumnBlockInvert) {
  semimemes::Rng rng(5);
  const auto a = random_matrix(rng, 3, 2), b = random_matrix(rng, 3, 4);
  const std::array<const Matrix<double>*, 2> parts = {&a, &b};
  const auto cat = semimemes::hconcat<double>(parts);
  EXPECT_EQ(cat.cols(), 6u);
  EXPECT_EQ(semimemes::column_block(cat, 0, 2), a);
  EXPECT_EQ(semimemes::column_block(cat, 2, 4), b);
}
