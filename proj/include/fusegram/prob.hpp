#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fusegram/error.hpp"

namespace fusegram {

/// Probability mass over N states; entries >= 0 and summing to 1.
struct ProbVector {
  std::vector<double> probs;

  [[nodiscard]] std::size_t n_states() const { return probs.size(); }
  [[nodiscard]] double operator[](std::size_t i) const { return probs[i]; }
};

enum class ProbMode { normalize, kde_smoothed };

struct ProbConfig {
  ProbMode mode = ProbMode::normalize;
  double epsilon = 1e-10;
  double bandwidth = 1.0; ///< In units of state index; kde_smoothed only.
};

inline const char* to_string(ProbMode m) { return m == ProbMode::normalize ? "normalize" : "kde_smoothed"; }

inline ProbMode parse_prob_mode(const std::string& s) {
  if (s == "normalize") return ProbMode::normalize;
  if (s == "kde_smoothed" || s == "kde") return ProbMode::kde_smoothed;
  throw UsageError("unknown prob mode '" + s + "' (expected normalize|kde_smoothed)");
}

namespace detail {

/// Half-sample symmetric reflection of an arbitrary index into [0, n).
inline std::size_t reflect_index(long long i, long long n) {
  const long long period = 2 * n;
  long long m = i % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < n ? m : period - 1 - m);
}

/// Discrete Gaussian smoothing over state indices; mass preserving.
inline std::vector<double> smooth_states(std::span<const double> x, double bandwidth) {
  const auto n = static_cast<long long>(x.size());
  const auto radius = static_cast<long long>(std::ceil(4.0 * bandwidth));
  std::vector<double> w(static_cast<std::size_t>(2 * radius + 1));
  for (long long k = -radius; k <= radius; ++k)
    w[static_cast<std::size_t>(k + radius)] = std::exp(-0.5 * static_cast<double>(k * k) / (bandwidth * bandwidth));
  const double wsum = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& v : w) v /= wsum;

  std::vector<double> out(x.size(), 0.0);
  for (long long j = 0; j < n; ++j) {
    double acc = 0.0;
    for (long long k = -radius; k <= radius; ++k)
      acc += w[static_cast<std::size_t>(k + radius)] * x[reflect_index(j - k, n)];
    out[static_cast<std::size_t>(j)] = acc;
  }
  return out;
}

} // namespace detail

/**
 * Turns a feature vector into a distribution over its positions. Values are
 * shifted so the minimum maps to zero; kde_smoothed mode then blurs the
 * sequence with a discrete Gaussian. Finally epsilon is added to every state
 * and the result renormalized.
 */
inline ProbVector to_prob(std::span<const double> values, const ProbConfig& cfg = {}) {
  if (values.empty()) throw UsageError("to_prob: empty feature vector");
  if (!(cfg.epsilon >= 0.0)) throw UsageError("to_prob: epsilon must be >= 0");
  for (double v : values)
    if (!std::isfinite(v)) throw NumericError("to_prob: non-finite feature value");

  const double lo = *std::min_element(values.begin(), values.end());
  std::vector<double> mass(values.size());
  std::transform(values.begin(), values.end(), mass.begin(), [lo](double v) { return v - lo; });

  if (cfg.mode == ProbMode::kde_smoothed) {
    if (!(cfg.bandwidth > 0.0)) throw UsageError("to_prob: kde_smoothed mode needs bandwidth > 0");
    mass = detail::smooth_states(mass, cfg.bandwidth);
  }
  for (double& m : mass) m += cfg.epsilon;
  const double total = std::accumulate(mass.begin(), mass.end(), 0.0);
  if (!(total > 0.0)) throw NumericError("degenerate distribution; use epsilon > 0");
  for (double& m : mass) m /= total;
  return ProbVector{std::move(mass)};
}

/// Silverman's rule of thumb, h = 1.06 * sd * n^(-1/5) with the Bessel-corrected sd.
inline double silverman_bandwidth(std::span<const double> values) {
  if (values.size() < 2) throw UsageError("silverman_bandwidth: need at least 2 values");
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  if (!(sd > 0.0)) throw NumericError("silverman_bandwidth: zero spread");
  return 1.06 * sd * std::pow(n, -0.2);
}

struct DensityEstimate {
  std::vector<double> grid;
  std::vector<double> density;
  double bandwidth = 0.0;

  /// Trapezoid rule over the grid.
  [[nodiscard]] double integral() const {
    double s = 0.0;
    for (std::size_t i = 1; i < grid.size(); ++i)
      s += 0.5 * (density[i] + density[i - 1]) * (grid[i] - grid[i - 1]);
    return s;
  }
};

/// Evenly spaced grid covering the data plus `pad_bandwidths` bandwidths each side.
inline std::vector<double> density_grid(std::span<const double> values, double bandwidth, std::size_t points,
                                        double pad_bandwidths = 4.0) {
  if (values.empty() || points < 2) throw UsageError("density_grid: need values and >= 2 points");
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double a = *lo - pad_bandwidths * bandwidth;
  const double b = *hi + pad_bandwidths * bandwidth;
  std::vector<double> g(points);
  for (std::size_t i = 0; i < points; ++i)
    g[i] = a + (b - a) * static_cast<double>(i) / static_cast<double>(points - 1);
  return g;
}

/// Gaussian-kernel Rosenblatt-Parzen estimate evaluated on `grid`.
inline DensityEstimate kde_density(std::span<const double> values, double bandwidth, std::span<const double> grid) {
  if (values.empty()) throw UsageError("kde_density: empty values");
  if (!(bandwidth > 0.0)) throw UsageError("kde_density: bandwidth must be > 0");
  if (!std::is_sorted(grid.begin(), grid.end())) throw UsageError("kde_density: grid must be sorted");

  const double norm = 1.0 / (static_cast<double>(values.size()) * bandwidth * std::sqrt(2.0 * M_PI));
  DensityEstimate est;
  est.bandwidth = bandwidth;
  est.grid.assign(grid.begin(), grid.end());
  est.density.resize(grid.size());
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double acc = 0.0;
    for (double x : values) {
      const double z = (grid[g] - x) / bandwidth;
      acc += std::exp(-0.5 * z * z);
    }
    est.density[g] = norm * acc;
  }
  return est;
}

} // namespace fusegram
