#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <json.hpp>

#include "fusegram/error.hpp"
#include "fusegram/util.hpp"

namespace fusegram {

enum class CovarianceType { diagonal, full };

struct GmmOptions {
  std::size_t components = 5;
  double reg = 1e-6;
  std::size_t max_iter = 200;
  double tol = 1e-8; ///< on the change of mean per-sample log-likelihood
  std::uint64_t seed = 0;
  CovarianceType covariance = CovarianceType::diagonal;
};

/**
 * Gaussian mixture. Diagonal models keep per-dimension variances floored at
 * `reg`; full models add `reg` to the covariance diagonal.
 */
struct GmmModel {
  CovarianceType covariance = CovarianceType::diagonal;
  double reg = 1e-6;
  std::vector<double> weights;
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::VectorXd> variances;   ///< diagonal models
  std::vector<Eigen::MatrixXd> covariances; ///< full models
  std::vector<double> log_likelihood_trace; ///< mean per-sample log-likelihood after each E-step
  std::size_t iterations = 0;
  bool converged = false;

  [[nodiscard]] std::size_t components() const { return weights.size(); }
  [[nodiscard]] std::size_t dim() const { return means.empty() ? 0 : static_cast<std::size_t>(means.front().size()); }

  /// log w_k + log N(x | mu_k, Sigma_k) for every component.
  [[nodiscard]] std::vector<double> component_log_densities(const Eigen::VectorXd& x) const {
    const double d = static_cast<double>(x.size());
    std::vector<double> out(components());
    for (std::size_t k = 0; k < components(); ++k) {
      const Eigen::VectorXd diff = x - means[k];
      double quad = 0.0;
      double logdet = 0.0;
      if (covariance == CovarianceType::diagonal) {
        quad = (diff.array().square() / variances[k].array()).sum();
        logdet = variances[k].array().log().sum();
      } else {
        const Eigen::LLT<Eigen::MatrixXd> llt(covariances[k]);
        const Eigen::VectorXd z = llt.matrixL().solve(diff);
        quad = z.squaredNorm();
        logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
      }
      out[k] = std::log(weights[k]) - 0.5 * (d * std::log(2.0 * M_PI) + logdet + quad);
    }
    return out;
  }

  [[nodiscard]] double log_likelihood(std::span<const double> x) const {
    const Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
    const auto lp = component_log_densities(v);
    const double mx = *std::max_element(lp.begin(), lp.end());
    double s = 0.0;
    for (double l : lp) s += std::exp(l - mx);
    return mx + std::log(s);
  }

  [[nodiscard]] std::vector<double> responsibilities(std::span<const double> x) const {
    const Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
    auto lp = component_log_densities(v);
    const double mx = *std::max_element(lp.begin(), lp.end());
    double s = 0.0;
    for (double& l : lp) s += (l = std::exp(l - mx));
    for (double& l : lp) l /= s;
    return lp;
  }
};

namespace detail {

inline std::vector<std::size_t> kmeans_pp_seeds(const std::vector<Eigen::VectorXd>& x, std::size_t k, Rng& rng) {
  const std::size_t n = x.size();
  std::vector<std::size_t> centers{static_cast<std::size_t>(rng() % n)};
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  while (centers.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], (x[i] - x[centers.back()]).squaredNorm());
      total += d2[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      const double target = uniform01(rng) * total;
      double acc = 0.0;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc > target && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<std::size_t>(rng() % n);
    }
    centers.push_back(pick);
  }
  return centers;
}

} // namespace detail

/**
 * EM for a K-component mixture with k-means++ seeding. Starts from the seeded
 * means, the pooled per-dimension variance and equal weights, then alternates
 * E and M steps until the mean log-likelihood moves by less than `tol`.
 */
inline GmmModel fit_gmm(const std::vector<std::vector<double>>& data, const GmmOptions& opt = {}) {
  if (opt.components == 0) throw UsageError("fit_gmm: K must be > 0");
  if (data.size() < opt.components) throw DataError("fit_gmm: fewer samples than components");
  if (!(opt.reg > 0.0)) throw UsageError("fit_gmm: reg must be > 0");
  const std::size_t n = data.size();
  const std::size_t K = opt.components;
  const auto d = static_cast<Eigen::Index>(data.front().size());

  std::vector<Eigen::VectorXd> x;
  x.reserve(n);
  for (const auto& r : data) {
    if (static_cast<Eigen::Index>(r.size()) != d) throw DataError("fit_gmm: ragged data");
    x.emplace_back(Eigen::Map<const Eigen::VectorXd>(r.data(), d));
  }

  GmmModel m;
  m.covariance = opt.covariance;
  m.reg = opt.reg;
  Rng rng(opt.seed);
  Eigen::VectorXd global_mean = Eigen::VectorXd::Zero(d);
  for (const auto& v : x) global_mean += v;
  global_mean /= static_cast<double>(n);
  Eigen::VectorXd global_var = Eigen::VectorXd::Zero(d);
  for (const auto& v : x) global_var.array() += (v - global_mean).array().square();
  global_var /= static_cast<double>(n);
  global_var = global_var.cwiseMax(opt.reg);

  for (auto c : detail::kmeans_pp_seeds(x, K, rng)) m.means.push_back(x[c]);
  m.weights.assign(K, 1.0 / static_cast<double>(K));
  if (m.covariance == CovarianceType::diagonal) {
    m.variances.assign(K, global_var);
  } else {
    Eigen::MatrixXd cov = global_var.asDiagonal();
    m.covariances.assign(K, cov);
  }

  std::vector<std::vector<double>> resp(n, std::vector<double>(K));
  double prev = -std::numeric_limits<double>::infinity();
  for (std::size_t it = 0; it < opt.max_iter; ++it) {
    // E-step
    double ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      auto lp = m.component_log_densities(x[i]);
      const double mx = *std::max_element(lp.begin(), lp.end());
      double s = 0.0;
      for (double& l : lp) s += (l = std::exp(l - mx));
      for (std::size_t k = 0; k < K; ++k) resp[i][k] = lp[k] / s;
      ll += mx + std::log(s);
    }
    ll /= static_cast<double>(n);
    m.log_likelihood_trace.push_back(ll);
    if (!std::isfinite(ll)) throw NumericError("fit_gmm: log-likelihood is not finite");
    if (std::fabs(ll - prev) < opt.tol) {
      m.converged = true;
      break;
    }
    prev = ll;

    // M-step
    for (std::size_t k = 0; k < K; ++k) {
      double nk = 0.0;
      Eigen::VectorXd mu = Eigen::VectorXd::Zero(d);
      for (std::size_t i = 0; i < n; ++i) {
        nk += resp[i][k];
        mu += resp[i][k] * x[i];
      }
      if (nk <= std::numeric_limits<double>::min()) {
        // Empty component: keep its parameters, drop its weight to the floor.
        m.weights[k] = std::numeric_limits<double>::min();
        continue;
      }
      mu /= nk;
      m.means[k] = mu;
      m.weights[k] = nk / static_cast<double>(n);
      if (m.covariance == CovarianceType::diagonal) {
        Eigen::VectorXd var = Eigen::VectorXd::Zero(d);
        for (std::size_t i = 0; i < n; ++i) var.array() += resp[i][k] * (x[i] - mu).array().square();
        m.variances[k] = (var / nk).cwiseMax(opt.reg);
      } else {
        Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
        for (std::size_t i = 0; i < n; ++i) {
          const Eigen::VectorXd diff = x[i] - mu;
          cov.noalias() += resp[i][k] * diff * diff.transpose();
        }
        cov /= nk;
        cov.diagonal().array() += opt.reg;
        m.covariances[k] = cov;
      }
    }
    double wsum = 0.0;
    for (double w : m.weights) wsum += w;
    for (double& w : m.weights) w /= wsum;
    m.iterations = it + 1;
  }
  return m;
}

inline nlohmann::json to_json(const GmmModel& m) {
  nlohmann::json comps = nlohmann::json::array();
  for (std::size_t k = 0; k < m.components(); ++k) {
    nlohmann::json c{{"weight", m.weights[k]},
                     {"mean", std::vector<double>(m.means[k].data(), m.means[k].data() + m.means[k].size())}};
    if (m.covariance == CovarianceType::diagonal) {
      c["variance"] = std::vector<double>(m.variances[k].data(), m.variances[k].data() + m.variances[k].size());
    } else {
      std::vector<std::vector<double>> rows;
      for (Eigen::Index r = 0; r < m.covariances[k].rows(); ++r) {
        const Eigen::VectorXd row = m.covariances[k].row(r);
        rows.emplace_back(row.data(), row.data() + row.size());
      }
      c["covariance"] = rows;
    }
    comps.push_back(std::move(c));
  }
  return {{"kind", "gmm"},
          {"covariance", m.covariance == CovarianceType::diagonal ? "diagonal" : "full"},
          {"reg", m.reg},
          {"iterations", m.iterations},
          {"converged", m.converged},
          {"components", comps}};
}

inline GmmModel gmm_from_json(const nlohmann::json& j) {
  try {
    GmmModel m;
    m.covariance = j.at("covariance").get<std::string>() == "full" ? CovarianceType::full : CovarianceType::diagonal;
    m.reg = j.at("reg").get<double>();
    m.iterations = j.value("iterations", std::size_t{0});
    m.converged = j.value("converged", false);
    for (const auto& c : j.at("components")) {
      m.weights.push_back(c.at("weight").get<double>());
      const auto mu = c.at("mean").get<std::vector<double>>();
      m.means.emplace_back(Eigen::Map<const Eigen::VectorXd>(mu.data(), static_cast<Eigen::Index>(mu.size())));
      if (m.covariance == CovarianceType::diagonal) {
        const auto v = c.at("variance").get<std::vector<double>>();
        m.variances.emplace_back(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
      } else {
        const auto rows = c.at("covariance").get<std::vector<std::vector<double>>>();
        Eigen::MatrixXd cov(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.size()));
        for (std::size_t r = 0; r < rows.size(); ++r)
          for (std::size_t s = 0; s < rows.size(); ++s)
            cov(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(s)) = rows[r].at(s);
        m.covariances.push_back(cov);
      }
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("gmm model: ") + e.what());
  }
}

} // namespace fusegram
