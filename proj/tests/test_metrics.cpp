#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "support.hpp"
#include "tcc/metrics.hpp"

using tcc::Shape;
using tcc::Tensor;
using testing_support::to_tensor;

namespace {

/// Random rotation (via Gram-Schmidt) plus a translation, applied to every row.
Tensor isometry(const Tensor& x, std::mt19937_64& rng) {
  const std::size_t d = x.cols();
  auto q = oracle::random_matrix(d, d, rng);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += q[i][c] * q[j][c];
      for (std::size_t c = 0; c < d; ++c) q[i][c] -= dot * q[j][c];
    }
    double norm = 0.0;
    for (double v : q[i]) norm += v * v;
    for (double& v : q[i]) v /= std::sqrt(norm);
  }
  const auto shift = oracle::random_matrix(1, d, rng, 5.0)[0];
  Tensor out(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t i = 0; i < d; ++i) {
      double s = shift[i];
      for (std::size_t c = 0; c < d; ++c) s += q[i][c] * x(r, c);
      out(r, i) = s;
    }
  return out;
}

Tensor column(const std::vector<double>& v) {
  Tensor t(Shape{v.size(), 1});
  for (std::size_t i = 0; i < v.size(); ++i) t(i, 0) = v[i];
  return t;
}

}  // namespace

TEST(CycleConsistency, PerfectAndHalf) {
  const Tensor line = Tensor::from_rows({{0}, {1}, {2}, {3}});
  EXPECT_EQ(tcc::cycle_consistency_fraction(line, line), 1.0);
  const Tensor two = Tensor::from_rows({{0}, {10}});
  EXPECT_EQ(tcc::cycle_consistency_fraction(two, Tensor::from_rows({{0}})), 0.5);
}

TEST(CycleConsistency, MatchesOracle) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 200; ++t) {
    const auto u = oracle::random_matrix(1 + t % 10, 3, rng), v = oracle::random_matrix(1 + (t / 10) % 10, 3, rng);
    EXPECT_EQ(tcc::cycle_consistency_fraction(to_tensor(u), to_tensor(v)), oracle::cycle_fraction(u, v));
  }
}

TEST(KendallsTau, IdentityAndReversal) {
  const Tensor line = Tensor::from_rows({{0}, {1}, {2}, {3}, {4}});
  EXPECT_EQ(tcc::kendalls_tau(line, line), 1.0);
  EXPECT_EQ(tcc::kendalls_tau(line, Tensor::from_rows({{4}, {3}, {2}, {1}, {0}})), -1.0);
}

TEST(KendallsTau, MatchesOracle) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 200; ++t) {
    const auto u = oracle::random_matrix(2 + t % 9, 2, rng), v = oracle::random_matrix(1 + (t / 9) % 10, 2, rng);
    EXPECT_EQ(tcc::kendalls_tau(to_tensor(u), to_tensor(v)), oracle::kendalls_tau(u, v));
  }
}

TEST(KendallsTau, TooFewFramesThrows) {
  EXPECT_THROW(tcc::kendalls_tau(Tensor::from_rows({{0}}), Tensor::from_rows({{0}, {1}})), tcc::ContractError);
}

TEST(Metrics, InvariantUnderSharedIsometry) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 30; ++t) {
    const Tensor u = to_tensor(oracle::random_matrix(8, 4, rng)), v = to_tensor(oracle::random_matrix(7, 4, rng));
    std::mt19937_64 a(100 + t), b(100 + t);
    const Tensor u2 = isometry(u, a), v2 = isometry(v, b);
    EXPECT_EQ(tcc::kendalls_tau(u, v), tcc::kendalls_tau(u2, v2));
    EXPECT_EQ(tcc::cycle_consistency_fraction(u, v), tcc::cycle_consistency_fraction(u2, v2));
  }
}

TEST(PhaseProgression, TargetsExample) {
  tcc::PhaseAnnotation ann{{0, 3, 7}, {0, 0, 0, 1, 1, 1, 1, 1}};
  const Tensor t = tcc::phase_progression_targets(ann, 8);
  EXPECT_EQ(t.shape(), (Shape{8, 3}));
  EXPECT_EQ(t(1, 1), -0.25);
  EXPECT_EQ(t(7, 0), 7.0 / 8.0);
  EXPECT_EQ(t(7, 2), 0.0);
  EXPECT_THROW(tcc::phase_progression_targets(ann, 5), tcc::ContractError);
}

TEST(RSquared, Examples) {
  const std::vector<double> y{1, 2, 3};
  EXPECT_EQ(tcc::r_squared(y, y), 1.0);
  EXPECT_EQ(tcc::r_squared(y, std::vector<double>{2, 2, 2}), 0.0);
  EXPECT_EQ(tcc::r_squared(y, std::vector<double>{3, 2, 1}), -3.0);
  EXPECT_THROW(tcc::r_squared(std::vector<double>{2, 2}, std::vector<double>{1, 3}), tcc::UndefinedError);
  EXPECT_THROW(tcc::r_squared(y, std::vector<double>{1, 2}), tcc::ShapeError);
}

TEST(RSquared, InvariantUnderSharedAffineMap) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> y(12), yh(12), y2(12), yh2(12);
    const double a = 0.1 + std::abs(n(rng)) * 3.0, b = n(rng) * 10.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      y[i] = n(rng);
      yh[i] = y[i] + 0.5 * n(rng);
      y2[i] = a * y[i] + b;
      yh2[i] = a * yh[i] + b;
    }
    EXPECT_NEAR(tcc::r_squared(y, yh), tcc::r_squared(y2, yh2), 1e-12);
  }
}

TEST(Classifier, SeparableDataIsPerfect) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 0.3);
  Tensor x(Shape{60, 2});
  std::vector<int> labels(60);
  for (std::size_t i = 0; i < 60; ++i) {
    labels[i] = static_cast<int>(i % 3);
    x(i, 0) = 4.0 * labels[i] + n(rng);
    x(i, 1) = -2.0 * labels[i] + n(rng);
  }
  const auto model = tcc::fit_linear_classifier(x, labels, 0);
  EXPECT_EQ(tcc::classify_accuracy(model, x, labels), 1.0);
}

TEST(Classifier, RandomLabelsGeneraliseAtChance) {
  std::mt19937_64 rng(6);
  std::bernoulli_distribution coin(0.5);
  auto draw = [&](std::size_t n, Tensor& x, std::vector<int>& y) {
    x = to_tensor(oracle::random_matrix(n, 5, rng));
    y.resize(n);
    for (auto& l : y) l = coin(rng) ? 1 : 0;
  };
  Tensor xtr, xte;
  std::vector<int> ytr, yte;
  draw(400, xtr, ytr);
  draw(2000, xte, yte);
  const auto model = tcc::fit_linear_classifier(xtr, ytr, 1);
  EXPECT_NEAR(tcc::classify_accuracy(model, xte, yte), 0.5, 0.1);
}

TEST(Classifier, DeterministicForSeed) {
  std::mt19937_64 rng(7);
  const Tensor x = to_tensor(oracle::random_matrix(40, 3, rng));
  std::vector<int> y(40);
  for (std::size_t i = 0; i < 40; ++i) y[i] = x(i, 0) + 0.3 * x(i, 1) > 0 ? 1 : 0;
  const auto a = tcc::fit_linear_classifier(x, y, 3), b = tcc::fit_linear_classifier(x, y, 3);
  EXPECT_EQ(a.weights, b.weights);
  EXPECT_EQ(a.bias, b.bias);
  EXPECT_EQ(a.predict(x), b.predict(x));
}

TEST(Classifier, SingleClassThrows) {
  const Tensor x = Tensor::from_rows({{0}, {1}, {2}});
  EXPECT_THROW(tcc::fit_linear_classifier(x, std::vector<int>{1, 1, 1}, 0), tcc::DegenerateModelError);
  EXPECT_THROW(tcc::fit_linear_classifier(x, std::vector<int>{0, 1}, 0), tcc::ShapeError);
}

TEST(Regressor, ExactLinearTargetsGiveUnitRSquared) {
  std::mt19937_64 rng(8);
  const Tensor x = to_tensor(oracle::random_matrix(50, 3, rng));
  Tensor y(Shape{50, 2});
  for (std::size_t i = 0; i < 50; ++i) {
    y(i, 0) = 2.0 * x(i, 0) - x(i, 2) + 0.5;
    y(i, 1) = -x(i, 1) + 3.0;
  }
  const auto r = tcc::fit_linear_regressor(x, y, 0.0);
  EXPECT_NEAR(tcc::mean_r_squared(y, r.predict(x)), 1.0, 1e-12);
}

TEST(Regressor, UnrelatedTargetsGiveNoHeldOutSkill) {
  std::mt19937_64 rng(9);
  const Tensor xtr = to_tensor(oracle::random_matrix(500, 3, rng)), ytr = to_tensor(oracle::random_matrix(500, 1, rng));
  const Tensor xte = to_tensor(oracle::random_matrix(2000, 3, rng)), yte = to_tensor(oracle::random_matrix(2000, 1, rng));
  const auto r = tcc::fit_linear_regressor(xtr, ytr);
  EXPECT_NEAR(tcc::mean_r_squared(yte, r.predict(xte)), 0.0, 0.02);
}

TEST(Regressor, RidgeShrinksTheSlope) {
  const Tensor x = column({-1, 0, 1, 2});
  const Tensor y = column({-2, 0, 2, 4});
  const auto plain = tcc::fit_linear_regressor(x, y, 0.0);
  const auto ridged = tcc::fit_linear_regressor(x, y, 5.0);
  EXPECT_NEAR(plain.weights(0, 0), 2.0, 1e-12);
  // centred Sxx = 5, Sxy = 10: slope 10 / (5 + 5)
  EXPECT_NEAR(ridged.weights(0, 0), 1.0, 1e-12);
  EXPECT_THROW(tcc::fit_linear_regressor(x, y, -1.0), tcc::ContractError);
}
