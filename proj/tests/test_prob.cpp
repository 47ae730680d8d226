#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "fusegram/prob.hpp"
#include "oracles.hpp"

using namespace fusegram;

TEST(Prob, NormalizeShiftsByMinimum) {
  const std::vector<double> x{1, 2, 3};
  const auto p = to_prob(x, {ProbMode::normalize, 0.0, 1.0});
  EXPECT_DOUBLE_EQ(p.probs[0], 0.0);
  EXPECT_DOUBLE_EQ(p.probs[1], 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(p.probs[2], 2.0 / 3.0);
}

TEST(Prob, EpsilonKeepsEveryStatePositive) {
  const std::vector<double> x{5, 5, 5, 9};
  const auto p = to_prob(x, {ProbMode::normalize, 1e-10, 1.0});
  for (double v : p.probs) EXPECT_GT(v, 0.0);
  EXPECT_NEAR(std::accumulate(p.probs.begin(), p.probs.end(), 0.0), 1.0, 1e-15);
}

TEST(Prob, ConstantVectorWithoutEpsilonIsDegenerate) {
  const std::vector<double> x{2, 2, 2};
  EXPECT_THROW(to_prob(x, {ProbMode::normalize, 0.0, 1.0}), NumericError);
  const auto p = to_prob(x, {ProbMode::normalize, 1e-10, 1.0});
  for (double v : p.probs) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Prob, KdeSmoothingPreservesMassAndSpreads) {
  std::vector<double> x(14, 0.0);
  x[6] = 10.0;
  const auto p = to_prob(x, {ProbMode::kde_smoothed, 0.0, 1.5});
  EXPECT_NEAR(std::accumulate(p.probs.begin(), p.probs.end(), 0.0), 1.0, 1e-12);
  EXPECT_GT(p.probs[5], 0.0);
  EXPECT_GT(p.probs[7], 0.0);
  EXPECT_LT(p.probs[6], 1.0);
  EXPECT_NEAR(p.probs[5], p.probs[7], 1e-15);
}

TEST(Prob, RejectsBadInput) {
  EXPECT_THROW(to_prob(std::vector<double>{}), UsageError);
  EXPECT_THROW(to_prob(std::vector<double>{1, NAN}), NumericError);
  EXPECT_THROW(to_prob(std::vector<double>{1, 2}, {ProbMode::kde_smoothed, 0.0, 0.0}), UsageError);
  EXPECT_THROW(parse_prob_mode("histogram"), UsageError);
}

TEST(Prob, SilvermanBandwidthMatchesHandComputation) {
  const std::vector<double> x{1, 2, 3, 4, 5};
  // sd = sqrt(2.5)
  EXPECT_NEAR(silverman_bandwidth(x), 1.06 * std::sqrt(2.5) * std::pow(5.0, -0.2), 1e-15);
  EXPECT_THROW(silverman_bandwidth(std::vector<double>{1}), UsageError);
  EXPECT_THROW(silverman_bandwidth(std::vector<double>{3, 3, 3}), NumericError);
}

TEST(Prob, KdeIntegratesToOne) {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n(3.0, 2.0);
  std::vector<double> x(400);
  for (auto& v : x) v = n(rng);
  const double h = silverman_bandwidth(x);
  const auto grid = density_grid(x, h, 4001, 6.0);
  const auto est = kde_density(x, h, grid);
  EXPECT_NEAR(est.integral(), 1.0, 1e-6);
  EXPECT_NEAR(oracle::trapezoid(est.grid, est.density), est.integral(), 1e-15);
}

TEST(Prob, KdeOfSinglePointIsTheKernel) {
  const std::vector<double> x{0.0};
  const std::vector<double> grid{-1.0, 0.0, 1.0};
  const auto est = kde_density(x, 2.0, grid);
  const double peak = 1.0 / (2.0 * std::sqrt(2.0 * M_PI));
  EXPECT_NEAR(est.density[1], peak, 1e-15);
  EXPECT_NEAR(est.density[0], peak * std::exp(-0.125), 1e-15);
  EXPECT_THROW(kde_density(x, 1.0, std::vector<double>{1.0, 0.0}), UsageError);
}
