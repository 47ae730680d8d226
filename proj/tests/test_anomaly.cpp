#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "fusegram/anomaly.hpp"
#include "oracles.hpp"

using namespace fusegram;

namespace {

std::vector<std::vector<double>> gaussian_with_outliers(std::uint64_t seed, std::size_t inliers = 500) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<std::vector<double>> x;
  for (std::size_t i = 0; i < inliers; ++i) x.push_back({g(rng), g(rng)});
  for (int k = 0; k < 5; ++k) {
    const double a = 2.0 * M_PI * k / 5.0;
    x.push_back({10.0 * std::cos(a), 10.0 * std::sin(a)});
  }
  return x;
}

} // namespace

TEST(IsolationForest, PathLengthNormalizer) {
  EXPECT_EQ(average_path_length(1), 0.0);
  EXPECT_EQ(average_path_length(2), 1.0);
  EXPECT_NEAR(average_path_length(3), 2.0 * 1.5 - 4.0 / 3.0, 1e-15);
  EXPECT_NEAR(average_path_length(256), 2.0 * (std::log(255.0) + 0.5772156649) - 2.0 * 255.0 / 256.0, 1e-12);
  EXPECT_EQ(isolation_score(average_path_length(256), 256), 0.5);
  EXPECT_EQ(isolation_score(0.0, 256), 1.0);
}

TEST(IsolationForest, PlantedOutliersRankFirst) {
  const auto x = gaussian_with_outliers(4);
  const auto m = fit_iforest(x, 100, 256, 4);
  std::vector<std::pair<double, std::size_t>> s;
  for (std::size_t i = 0; i < x.size(); ++i) s.emplace_back(iforest_score(m, x[i]), i);
  std::sort(s.rbegin(), s.rend());
  for (int k = 0; k < 5; ++k) EXPECT_GE(s[k].second, 500u);
  for (const auto& [score, i] : s) {
    EXPECT_GT(score, 0.0);
    EXPECT_LE(score, 1.0);
  }
}

TEST(IsolationForest, TreesRespectHeightLimitAndSplitRange) {
  const auto x = gaussian_with_outliers(2);
  const auto m = fit_iforest(x, 20, 64, 2);
  EXPECT_EQ(m.height_limit, 6u);
  for (const auto& t : m.trees) {
    EXPECT_LE(t.depth(), m.height_limit);
    for (const auto& n : t.nodes)
      if (!n.leaf()) {
        EXPECT_GE(n.split, -12.0);
        EXPECT_LE(n.split, 12.0);
      }
  }
}

TEST(IsolationForest, DeterministicAndClampsPsi) {
  const auto x = gaussian_with_outliers(5, 50);
  const auto a = fit_iforest(x, 10, 256, 77);
  const auto b = fit_iforest(x, 10, 256, 77);
  EXPECT_TRUE(a.psi_clamped);
  EXPECT_EQ(a.psi, x.size());
  EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
  EXPECT_EQ(to_json(iforest_from_json(to_json(a))).dump(), to_json(a).dump());
}

TEST(IsolationForest, IdenticalPointsGiveSingleLeafTrees) {
  const std::vector<std::vector<double>> x{{1.0, 2.0}, {1.0, 2.0}};
  const auto m = fit_iforest(x, 5, 2, 1);
  for (const auto& t : m.trees) EXPECT_EQ(t.nodes.size(), 1u);
  EXPECT_THROW(fit_iforest(x, 5, 1, 1), UsageError);
}

TEST(Gmm, SingleComponentIsClosedForm) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> g(2.0, 3.0);
  std::vector<std::vector<double>> x(300, std::vector<double>(3));
  for (auto& r : x)
    for (auto& v : r) v = g(rng);
  GmmOptions opt;
  opt.components = 1;
  const auto m = fit_gmm(x, opt);
  for (std::size_t d = 0; d < 3; ++d) {
    double mean = 0.0;
    for (const auto& r : x) mean += r[d];
    mean /= x.size();
    double var = 0.0;
    for (const auto& r : x) var += (r[d] - mean) * (r[d] - mean);
    var /= x.size();
    EXPECT_NEAR(m.means[0][d], mean, 1e-9);
    EXPECT_NEAR(m.variances[0][d], var, 1e-9);
  }
}

TEST(Gmm, LogLikelihoodNeverDecreases) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<std::vector<double>> x;
    for (int i = 0; i < 120; ++i) x.push_back({g(rng) + (i % 3) * 4.0, g(rng) - (i % 2) * 3.0});
    GmmOptions opt;
    opt.components = 3;
    opt.seed = seed;
    const auto m = fit_gmm(x, opt);
    for (std::size_t i = 1; i < m.log_likelihood_trace.size(); ++i)
      EXPECT_GE(m.log_likelihood_trace[i], m.log_likelihood_trace[i - 1] - 1e-9);
  }
}

TEST(Gmm, FullCovarianceSingleComponentAndMonotone) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<std::vector<double>> x;
  for (int i = 0; i < 200; ++i) {
    const double a = g(rng), b = g(rng);
    x.push_back({a + (i % 2) * 5.0, 0.8 * a + 0.3 * b, -a + b});
  }
  GmmOptions opt;
  opt.components = 1;
  opt.covariance = CovarianceType::full;
  const auto m = fit_gmm(x, opt);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double mi = 0.0, mj = 0.0, c = 0.0;
      for (const auto& r : x) mi += r[i], mj += r[j];
      mi /= x.size(), mj /= x.size();
      for (const auto& r : x) c += (r[i] - mi) * (r[j] - mj);
      c /= x.size();
      if (i == j) c += opt.reg;
      EXPECT_NEAR(m.covariances[0](i, j), c, 1e-9) << i << "," << j;
    }

  opt.components = 2;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    opt.seed = seed;
    const auto k2 = fit_gmm(x, opt);
    for (std::size_t t = 1; t < k2.log_likelihood_trace.size(); ++t)
      EXPECT_GE(k2.log_likelihood_trace[t], k2.log_likelihood_trace[t - 1] - 1e-9);
  }
}

TEST(Gmm, RecoversSeparatedClusters) {
  std::mt19937_64 rng(10);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<std::vector<double>> x;
  for (int i = 0; i < 2000; ++i) x.push_back({g(rng) + (i % 2 ? 10.0 : -10.0), g(rng)});
  GmmOptions opt;
  opt.components = 2;
  opt.seed = 3;
  const auto m = fit_gmm(x, opt);
  std::vector<double> centers{m.means[0][0], m.means[1][0]};
  std::sort(centers.begin(), centers.end());
  EXPECT_NEAR(centers[0], -10.0, 0.1);
  EXPECT_NEAR(centers[1], 10.0, 0.1);
  EXPECT_NEAR(m.weights[0] + m.weights[1], 1.0, 1e-12);
  const auto r = m.responsibilities(x[0]);
  EXPECT_NEAR(r[0] + r[1], 1.0, 1e-12);
}

TEST(Gmm, VarianceFloorAndErrors) {
  const std::vector<std::vector<double>> x{{1.0, 1.0}, {1.0, 1.0}, {1.0, 1.0}};
  GmmOptions opt;
  opt.components = 1;
  opt.reg = 1e-3;
  const auto m = fit_gmm(x, opt);
  EXPECT_GE(m.variances[0].minCoeff(), 1e-3);
  opt.components = 4;
  EXPECT_THROW(fit_gmm(x, opt), DataError);
  opt.components = 0;
  EXPECT_THROW(fit_gmm(x, opt), UsageError);
}

TEST(Isotonic, WorkedExamples) {
  const std::vector<double> s{1, 2, 3};
  EXPECT_EQ(pava(s, std::vector<double>{1, 0, 1}).fitted, (std::vector<double>{0.5, 0.5, 1.0}));
  EXPECT_EQ(pava(s, std::vector<double>{0, 0.5, 1}).fitted, (std::vector<double>{0, 0.5, 1}));
  const auto constant = pava(s, std::vector<double>{0.3, 0.3, 0.3});
  EXPECT_EQ(constant.map(-100.0), 0.3);
  EXPECT_EQ(constant.map(100.0), 0.3);
  EXPECT_THROW(pava(std::vector<double>{}, std::vector<double>{}), UsageError);
}

TEST(Isotonic, MatchesBruteForce) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 1 + rng() % 10;
    std::vector<double> scores(n), y(n), w(n);
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = static_cast<double>(i);
      y[i] = u(rng);
      w[i] = 0.5 + u(rng);
    }
    const auto fit = pava(scores, y, w);
    const auto ref = oracle::isotonic_brute(y, w);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(fit.fitted[i], ref[i], 1e-9);
    for (std::size_t i = 1; i < n; ++i) EXPECT_LE(fit.fitted[i - 1], fit.fitted[i]);
  }
}

TEST(Isotonic, TiedScoresShareOneValue) {
  const std::vector<double> s{1, 1, 2};
  const auto fit = pava(s, std::vector<double>{1, 0, 1});
  EXPECT_EQ(fit.fitted[0], fit.fitted[1]);
  EXPECT_EQ(fit.map(1.0), 0.5);
}

TEST(Detector, CalibratedGmmSeparatesKnownClass) {
  std::mt19937_64 rng(30);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<std::vector<double>> known, other;
  for (int i = 0; i < 300; ++i) known.push_back({g(rng), g(rng)});
  for (int i = 0; i < 300; ++i) other.push_back({g(rng) + 12.0, g(rng)});
  GmmOptions opt;
  opt.components = 2;
  auto gmm = fit_gmm(std::vector<std::vector<double>>(known.begin(), known.begin() + 200), opt);
  std::vector<double> scores;
  std::vector<int> labels;
  for (int i = 200; i < 250; ++i) {
    scores.push_back(gmm.log_likelihood(known[i]));
    labels.push_back(1);
    scores.push_back(gmm.log_likelihood(other[i]));
    labels.push_back(0);
  }
  const auto det = calibrate_and_detect(gmm, scores, labels, 0.5);
  for (int i = 250; i < 300; ++i) {
    EXPECT_TRUE(det.inlier(known[i]));
    EXPECT_FALSE(det.inlier(other[i]));
  }
  const auto everything = calibrate_and_detect(gmm, scores, labels, 0.0);
  EXPECT_TRUE(everything.inlier(other[299]));
  EXPECT_THROW(calibrate_and_detect(gmm, std::vector<double>{1.0}, std::vector<int>{1}), DataError);
}

TEST(Detector, ThresholdTradesSpecificityMonotonically) {
  const auto x = gaussian_with_outliers(11, 300);
  const auto forest = fit_iforest(std::vector<std::vector<double>>(x.begin(), x.begin() + 200), 50, 128, 11);
  std::size_t prev_rejected = x.size() + 1;
  for (double th : {0.3, 0.4, 0.5, 0.6, 0.7, 1.0}) {
    const IsolationDetector det{forest, th};
    std::size_t rejected = 0;
    for (const auto& r : x) rejected += !det.inlier(r);
    EXPECT_LE(rejected, prev_rejected);
    prev_rejected = rejected;
  }
  EXPECT_EQ(prev_rejected, 0u);
}
