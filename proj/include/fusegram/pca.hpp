#pragma once

#include <algorithm>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <json.hpp>

#include "fusegram/error.hpp"

namespace fusegram {

struct PcaModel {
  std::vector<double> mean;
  std::vector<std::vector<double>> components; ///< orthonormal rows, strongest first
  std::vector<double> explained_ratio;         ///< non-increasing, sums to 1 when rank > 0
  std::vector<double> explained_variance;
  std::size_t rank = 0;

  [[nodiscard]] std::vector<double> cumulative() const {
    std::vector<double> c(explained_ratio.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = acc += explained_ratio[i];
    return c;
  }

  /// Scores on the first k components (all when k == 0).
  [[nodiscard]] std::vector<double> transform(std::span<const double> x, std::size_t k = 0) const {
    if (x.size() != mean.size()) throw UsageError("pca transform: dimension mismatch");
    if (k == 0 || k > components.size()) k = components.size();
    std::vector<double> out(k, 0.0);
    for (std::size_t c = 0; c < k; ++c)
      for (std::size_t j = 0; j < x.size(); ++j) out[c] += (x[j] - mean[j]) * components[c][j];
    return out;
  }

  [[nodiscard]] std::vector<double> reconstruct(std::span<const double> scores) const {
    std::vector<double> x = mean;
    for (std::size_t c = 0; c < scores.size(); ++c)
      for (std::size_t j = 0; j < x.size(); ++j) x[j] += scores[c] * components[c][j];
    return x;
  }
};

/**
 * PCA through the thin SVD of the centered data matrix. Eigenvalues are
 * s_i^2 / (n - 1). Zero-variance data yields rank 0 with a single zero ratio.
 */
inline PcaModel pca_fit(const std::vector<std::vector<double>>& data) {
  if (data.size() < 2) throw UsageError("pca_fit: need at least 2 rows");
  const auto n = static_cast<Eigen::Index>(data.size());
  const auto d = static_cast<Eigen::Index>(data.front().size());
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (static_cast<Eigen::Index>(data[static_cast<std::size_t>(i)].size()) != d) throw DataError("pca_fit: ragged data");
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = data[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
  const Eigen::RowVectorXd mu = x.colwise().mean();
  x.rowwise() -= mu;

  PcaModel m;
  m.mean.assign(mu.data(), mu.data() + d);
  const Eigen::BDCSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinV);
  const Eigen::VectorXd sv = svd.singularValues();
  const Eigen::MatrixXd v = svd.matrixV();
  const double total = sv.squaredNorm();
  if (!(total > 0.0)) {
    m.explained_ratio = {0.0};
    m.explained_variance = {0.0};
    m.rank = 0;
    return m;
  }
  const double cutoff = sv(0) * std::max<double>(static_cast<double>(n), static_cast<double>(d)) * 1e-14;
  for (Eigen::Index c = 0; c < sv.size(); ++c) {
    const Eigen::VectorXd col = v.col(c);
    m.components.emplace_back(col.data(), col.data() + d);
    m.explained_variance.push_back(sv(c) * sv(c) / static_cast<double>(n - 1));
    m.explained_ratio.push_back(sv(c) * sv(c) / total);
    if (sv(c) > cutoff) ++m.rank;
  }
  return m;
}

/// Smallest k whose cumulative explained ratio reaches `threshold`.
inline std::size_t pca_select_k(const PcaModel& m, double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) throw UsageError("pca_select_k: threshold must lie in (0,1]");
  const auto cum = m.cumulative();
  for (std::size_t k = 0; k < cum.size(); ++k)
    if (cum[k] >= threshold - 1e-12) return k + 1;
  return cum.size();
}

inline nlohmann::json to_json(const PcaModel& m) {
  return {{"kind", "pca"},
          {"mean", m.mean},
          {"components", m.components},
          {"explained_ratio", m.explained_ratio},
          {"explained_variance", m.explained_variance},
          {"rank", m.rank}};
}

inline PcaModel pca_from_json(const nlohmann::json& j) {
  try {
    PcaModel m;
    m.mean = j.at("mean").get<std::vector<double>>();
    m.components = j.at("components").get<std::vector<std::vector<double>>>();
    m.explained_ratio = j.at("explained_ratio").get<std::vector<double>>();
    m.explained_variance = j.value("explained_variance", std::vector<double>{});
    m.rank = j.at("rank").get<std::size_t>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("pca model: ") + e.what());
  }
}

} // namespace fusegram
