#pragma once

#include <algorithm>
#include <numeric>
#include <span>
#include <vector>

#include <json.hpp>

#include "fusegram/error.hpp"

namespace fusegram {

/// Non-decreasing step function of a score. Below the first breakpoint the
/// first value applies; at or above breakpoint b the value of its block.
struct IsotonicMap {
  std::vector<double> breakpoints;
  std::vector<double> values;

  [[nodiscard]] double operator()(double score) const {
    const auto it = std::upper_bound(breakpoints.begin(), breakpoints.end(), score);
    const std::size_t block = it == breakpoints.begin() ? 0 : static_cast<std::size_t>(it - breakpoints.begin()) - 1;
    return std::clamp(values[block], 0.0, 1.0);
  }
};

struct IsotonicFit {
  IsotonicMap map;
  std::vector<double> fitted; ///< one value per input, in input order
};

/**
 * Weighted pool-adjacent-violators. Inputs are ordered by score; tied scores
 * are pooled before fitting so the result is a function of the score.
 */
inline IsotonicFit pava(std::span<const double> scores, std::span<const double> targets,
                        std::span<const double> weights = {}) {
  const std::size_t n = scores.size();
  if (n == 0) throw UsageError("pava: empty input");
  if (targets.size() != n || (!weights.empty() && weights.size() != n))
    throw UsageError("pava: scores, targets and weights differ in length");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });

  struct Block {
    double value;
    double weight;
    std::size_t first; // index into order
    std::size_t last;  // exclusive
  };
  std::vector<Block> blocks;
  for (std::size_t r = 0; r < n;) {
    std::size_t e = r;
    double wsum = 0.0, ysum = 0.0;
    while (e < n && scores[order[e]] == scores[order[r]]) {
      const double w = weights.empty() ? 1.0 : weights[order[e]];
      if (!(w > 0.0)) throw UsageError("pava: weights must be > 0");
      wsum += w;
      ysum += w * targets[order[e]];
      ++e;
    }
    blocks.push_back({ysum / wsum, wsum, r, e});
    while (blocks.size() > 1 && blocks[blocks.size() - 2].value > blocks.back().value) {
      Block b = blocks.back();
      blocks.pop_back();
      Block& a = blocks.back();
      const double w = a.weight + b.weight;
      a.value = (a.weight * a.value + b.weight * b.value) / w;
      a.weight = w;
      a.last = b.last;
    }
    r = e;
  }

  IsotonicFit fit;
  fit.fitted.assign(n, 0.0);
  for (const auto& b : blocks) {
    fit.map.breakpoints.push_back(scores[order[b.first]]);
    fit.map.values.push_back(b.value);
    for (std::size_t r = b.first; r < b.last; ++r) fit.fitted[order[r]] = b.value;
  }
  return fit;
}

inline nlohmann::json to_json(const IsotonicMap& m) { return {{"breakpoints", m.breakpoints}, {"values", m.values}}; }

inline IsotonicMap isotonic_from_json(const nlohmann::json& j) {
  try {
    IsotonicMap m{j.at("breakpoints").get<std::vector<double>>(), j.at("values").get<std::vector<double>>()};
    if (m.breakpoints.size() != m.values.size() || m.values.empty()) throw DataError("isotonic map: malformed");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("isotonic map: ") + e.what());
  }
}

} // namespace fusegram
