#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fusegram/data.hpp"
#include "fusegram/error.hpp"
#include "fusegram/util.hpp"

namespace fusegram {

inline constexpr double kEulerGamma = 0.5772156649;

/// Harmonic number; exact sum up to 10, ln(i) + gamma beyond.
inline double harmonic(std::size_t i) {
  if (i == 0) return 0.0;
  if (i <= 10) {
    double h = 0.0;
    for (std::size_t k = 1; k <= i; ++k) h += 1.0 / static_cast<double>(k);
    return h;
  }
  return std::log(static_cast<double>(i)) + kEulerGamma;
}

/// Average unsuccessful-search path length in a BST of n nodes.
inline double average_path_length(std::size_t n) {
  if (n <= 1) return 0.0;
  if (n == 2) return 1.0;
  const double nd = static_cast<double>(n);
  return 2.0 * harmonic(n - 1) - 2.0 * (nd - 1.0) / nd;
}

/// Anomaly score from an expected path length; 0.5 at E[h] = c(psi), -> 1 as E[h] -> 0.
inline double isolation_score(double expected_path, std::size_t psi) {
  const double c = average_path_length(psi);
  if (c <= 0.0) return 1.0;
  return std::pow(2.0, -expected_path / c);
}

struct IsolationNode {
  int feature = -1; ///< -1 marks a leaf
  double split = 0.0;
  std::size_t left = 0;
  std::size_t right = 0;
  std::size_t size = 0; ///< training points that reached a leaf
  std::size_t depth = 0;

  [[nodiscard]] bool leaf() const { return feature < 0; }
};

/// Flat node array; node 0 is the root.
struct IsolationTree {
  std::vector<IsolationNode> nodes;

  [[nodiscard]] double path_length(std::span<const double> x) const {
    std::size_t at = 0;
    double edges = 0.0;
    while (!nodes[at].leaf()) {
      const auto& n = nodes[at];
      at = x[static_cast<std::size_t>(n.feature)] < n.split ? n.left : n.right;
      edges += 1.0;
    }
    return edges + average_path_length(nodes[at].size);
  }

  [[nodiscard]] std::size_t depth() const {
    std::size_t d = 0;
    for (const auto& n : nodes) d = std::max(d, n.depth);
    return d;
  }
};

struct IsolationForestModel {
  std::vector<IsolationTree> trees;
  std::size_t psi = 256;
  std::size_t height_limit = 8;
  std::uint64_t seed = 0;
  std::size_t dim = 0;
  bool psi_clamped = false;

  [[nodiscard]] double expected_path_length(std::span<const double> x) const {
    double s = 0.0;
    for (const auto& t : trees) s += t.path_length(x);
    return s / static_cast<double>(trees.size());
  }
};

namespace detail {

inline std::size_t grow(IsolationTree& tree, const std::vector<std::vector<double>>& rows, std::vector<std::size_t> idx,
                        std::size_t depth, std::size_t limit, Rng& rng) {
  const std::size_t me = tree.nodes.size();
  tree.nodes.push_back({});
  tree.nodes[me].depth = depth;
  tree.nodes[me].size = idx.size();
  if (depth >= limit || idx.size() <= 1) return me;

  // Only features with spread can separate the node.
  const std::size_t dim = rows[idx.front()].size();
  std::vector<std::size_t> candidates;
  std::vector<std::pair<double, double>> range(dim);
  for (std::size_t f = 0; f < dim; ++f) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (auto i : idx) {
      lo = std::min(lo, rows[i][f]);
      hi = std::max(hi, rows[i][f]);
    }
    range[f] = {lo, hi};
    if (hi > lo) candidates.push_back(f);
  }
  if (candidates.empty()) return me;

  const std::size_t f = candidates[static_cast<std::size_t>(rng() % candidates.size())];
  const auto [lo, hi] = range[f];
  double u = uniform01(rng);
  while (u <= 0.0) u = uniform01(rng);
  double split = lo + u * (hi - lo);
  if (split <= lo || split > hi) split = 0.5 * (lo + hi);

  std::vector<std::size_t> left, right;
  for (auto i : idx) (rows[i][f] < split ? left : right).push_back(i);

  tree.nodes[me].feature = static_cast<int>(f);
  tree.nodes[me].split = split;
  const auto l = grow(tree, rows, std::move(left), depth + 1, limit, rng);
  const auto r = grow(tree, rows, std::move(right), depth + 1, limit, rng);
  tree.nodes[me].left = l;
  tree.nodes[me].right = r;
  return me;
}

} // namespace detail

/**
 * Fits `trees` isolation trees, each on a psi-subsample drawn without
 * replacement. Tree i uses the seed (seed xor i), so the forest is the same
 * whatever order trees are grown in. psi larger than n is clamped to n and
 * reported through `psi_clamped`.
 */
inline IsolationForestModel fit_iforest(const std::vector<std::vector<double>>& data, std::size_t trees = 100,
                                        std::size_t psi = 256, std::uint64_t seed = 0) {
  if (data.empty()) throw UsageError("fit_iforest: empty data");
  if (psi < 2) throw UsageError("fit_iforest: psi must be >= 2");
  if (trees < 1) throw UsageError("fit_iforest: need at least one tree");
  IsolationForestModel m;
  m.seed = seed;
  m.dim = data.front().size();
  for (const auto& r : data)
    if (r.size() != m.dim) throw DataError("fit_iforest: ragged data");
  m.psi_clamped = psi > data.size();
  m.psi = std::min(psi, data.size());
  m.height_limit = static_cast<std::size_t>(std::ceil(std::log2(static_cast<double>(std::max<std::size_t>(m.psi, 2)))));
  m.trees.resize(trees);
  for (std::size_t t = 0; t < trees; ++t) {
    Rng rng(seed ^ static_cast<std::uint64_t>(t));
    std::vector<std::size_t> all(data.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    for (std::size_t i = 0; i < m.psi; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng() % (all.size() - i));
      std::swap(all[i], all[j]);
    }
    all.resize(m.psi);
    detail::grow(m.trees[t], data, std::move(all), 0, m.height_limit, rng);
  }
  return m;
}

inline double iforest_score(const IsolationForestModel& m, std::span<const double> x) {
  if (x.size() != m.dim) throw UsageError("iforest_score: dimension mismatch");
  return isolation_score(m.expected_path_length(x), m.psi);
}

inline nlohmann::json to_json(const IsolationForestModel& m) {
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& t : m.trees) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : t.nodes)
      nodes.push_back({{"feature", n.feature}, {"split", n.split}, {"left", n.left}, {"right", n.right},
                       {"size", n.size}, {"depth", n.depth}});
    trees.push_back(std::move(nodes));
  }
  return {{"kind", "iforest"}, {"psi", m.psi},   {"height_limit", m.height_limit}, {"seed", m.seed},
          {"dim", m.dim},      {"trees", trees}, {"psi_clamped", m.psi_clamped}};
}

inline IsolationForestModel iforest_from_json(const nlohmann::json& j) {
  try {
    IsolationForestModel m;
    m.psi = j.at("psi").get<std::size_t>();
    m.height_limit = j.at("height_limit").get<std::size_t>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.dim = j.at("dim").get<std::size_t>();
    m.psi_clamped = j.value("psi_clamped", false);
    for (const auto& jt : j.at("trees")) {
      IsolationTree t;
      for (const auto& jn : jt)
        t.nodes.push_back({jn.at("feature").get<int>(), jn.at("split").get<double>(), jn.at("left").get<std::size_t>(),
                           jn.at("right").get<std::size_t>(), jn.at("size").get<std::size_t>(),
                           jn.at("depth").get<std::size_t>()});
      m.trees.push_back(std::move(t));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("iforest model: ") + e.what());
  }
}

} // namespace fusegram
