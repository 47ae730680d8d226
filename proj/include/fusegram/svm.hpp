#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fusegram/error.hpp"
#include "fusegram/kernels.hpp"
#include "fusegram/util.hpp"

namespace fusegram {

/**
 * Dual problem in the form
 *   minimize 0.5 a'Qa + p'a  s.t.  y'a = const,  0 <= a_i <= upper_i
 * with Q_ij = y_i y_j K_ij. Both C-SVC and the one-class SVM reduce to it.
 */
struct SmoProblem {
  const SquareMatrix* kernel = nullptr;
  std::vector<double> linear;     ///< p
  std::vector<signed char> y;     ///< +1 / -1
  std::vector<double> upper;      ///< box upper bounds
  std::vector<double> alpha;      ///< feasible starting point
};

struct SmoOptions {
  double tol = 1e-3;
  std::size_t max_iter = 0; ///< 0 selects max(10^7, 100 n).
  /// Called after every update with (iteration, primal objective 0.5 a'Qa + p'a).
  std::function<void(std::size_t, double)> observer;
};

struct SmoResult {
  std::vector<double> alpha;
  std::vector<double> gradient;
  double rho = 0.0;
  double objective = 0.0; ///< 0.5 a'Qa + p'a at the solution
  std::size_t iterations = 0;
  bool converged = false;
};

namespace detail {

inline constexpr double kTau = 1e-12;

inline bool at_upper(double a, double c) { return a >= c; }
inline bool at_lower(double a) { return a <= 0.0; }

inline double smo_objective(std::span<const double> alpha, std::span<const double> grad, std::span<const double> p) {
  double f = 0.0;
  for (std::size_t i = 0; i < alpha.size(); ++i) f += alpha[i] * (grad[i] + p[i]);
  return 0.5 * f;
}

/// Maximal violating pair. Returns the gap m - M and the pair (i, j).
inline double select_pair(std::span<const double> alpha, std::span<const double> grad, std::span<const signed char> y,
                          std::span<const double> upper, std::size_t& out_i, std::size_t& out_j) {
  double gmax = -std::numeric_limits<double>::infinity();
  double gmin = std::numeric_limits<double>::infinity();
  out_i = out_j = alpha.size();
  for (std::size_t t = 0; t < alpha.size(); ++t) {
    const double v = -y[t] * grad[t];
    const bool up = y[t] > 0 ? !at_upper(alpha[t], upper[t]) : !at_lower(alpha[t]);
    const bool low = y[t] > 0 ? !at_lower(alpha[t]) : !at_upper(alpha[t], upper[t]);
    if (up && v > gmax) {
      gmax = v;
      out_i = t;
    }
    if (low && v < gmin) {
      gmin = v;
      out_j = t;
    }
  }
  if (out_i == alpha.size() || out_j == alpha.size()) return 0.0;
  return gmax - gmin;
}

inline double compute_rho(std::span<const double> alpha, std::span<const double> grad, std::span<const signed char> y,
                          std::span<const double> upper) {
  double ub = std::numeric_limits<double>::infinity();
  double lb = -std::numeric_limits<double>::infinity();
  double sum_free = 0.0;
  std::size_t n_free = 0;
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    const double yg = y[i] * grad[i];
    if (at_upper(alpha[i], upper[i])) {
      if (y[i] < 0) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else if (at_lower(alpha[i])) {
      if (y[i] > 0) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else {
      ++n_free;
      sum_free += yg;
    }
  }
  if (n_free > 0) return sum_free / static_cast<double>(n_free);
  if (std::isinf(ub) && std::isinf(lb)) return 0.0;
  if (std::isinf(ub)) return lb;
  if (std::isinf(lb)) return ub;
  return 0.5 * (ub + lb);
}

} // namespace detail

/**
 * Sequential minimal optimization with first-order maximal-violating-pair
 * selection and no shrinking. Non-positive curvature along the chosen pair
 * is replaced by a tiny constant, so indefinite kernels still make monotone
 * progress toward a box-constrained stationary point.
 */
inline SmoResult solve_smo(const SmoProblem& prob, const SmoOptions& opt = {}) {
  const SquareMatrix& K = *prob.kernel;
  const std::size_t n = K.size();
  if (prob.linear.size() != n || prob.y.size() != n || prob.upper.size() != n || prob.alpha.size() != n)
    throw UsageError("solve_smo: inconsistent problem sizes");

  SmoResult res;
  res.alpha = prob.alpha;
  auto& a = res.alpha;
  auto Q = [&](std::size_t i, std::size_t j) { return static_cast<double>(prob.y[i] * prob.y[j]) * K(i, j); };

  res.gradient = prob.linear;
  auto& G = res.gradient;
  for (std::size_t i = 0; i < n; ++i)
    if (a[i] != 0.0)
      for (std::size_t k = 0; k < n; ++k) G[k] += Q(k, i) * a[i];

  const std::size_t max_iter = opt.max_iter ? opt.max_iter : std::max<std::size_t>(10'000'000, 100 * n);
  std::size_t iter = 0;
  for (; iter < max_iter; ++iter) {
    std::size_t i = 0, j = 0;
    const double gap = detail::select_pair(a, G, prob.y, prob.upper, i, j);
    if (gap < opt.tol || i == j) {
      res.converged = true;
      break;
    }
    const double Ci = prob.upper[i];
    const double Cj = prob.upper[j];
    const double old_ai = a[i];
    const double old_aj = a[j];

    if (prob.y[i] != prob.y[j]) {
      double quad = K(i, i) + K(j, j) + 2.0 * Q(i, j);
      if (quad <= 0.0) quad = detail::kTau;
      const double delta = (-G[i] - G[j]) / quad;
      const double diff = a[i] - a[j];
      a[i] += delta;
      a[j] += delta;
      if (diff > 0.0) {
        if (a[j] < 0.0) {
          a[j] = 0.0;
          a[i] = diff;
        }
      } else if (a[i] < 0.0) {
        a[i] = 0.0;
        a[j] = -diff;
      }
      if (diff > Ci - Cj) {
        if (a[i] > Ci) {
          a[i] = Ci;
          a[j] = Ci - diff;
        }
      } else if (a[j] > Cj) {
        a[j] = Cj;
        a[i] = Cj + diff;
      }
    } else {
      double quad = K(i, i) + K(j, j) - 2.0 * Q(i, j);
      if (quad <= 0.0) quad = detail::kTau;
      const double delta = (G[i] - G[j]) / quad;
      const double sum = a[i] + a[j];
      a[i] -= delta;
      a[j] += delta;
      if (sum > Ci) {
        if (a[i] > Ci) {
          a[i] = Ci;
          a[j] = sum - Ci;
        }
      } else if (a[j] < 0.0) {
        a[j] = 0.0;
        a[i] = sum;
      }
      if (sum > Cj) {
        if (a[j] > Cj) {
          a[j] = Cj;
          a[i] = sum - Cj;
        }
      } else if (a[i] < 0.0) {
        a[i] = 0.0;
        a[j] = sum;
      }
    }

    const double dai = a[i] - old_ai;
    const double daj = a[j] - old_aj;
    for (std::size_t k = 0; k < n; ++k) G[k] += Q(k, i) * dai + Q(k, j) * daj;
    if (opt.observer) opt.observer(iter, detail::smo_objective(a, G, prob.linear));
  }
  res.iterations = iter;
  res.rho = detail::compute_rho(a, G, prob.y, prob.upper);
  res.objective = detail::smo_objective(a, G, prob.linear);
  return res;
}

enum class SvmKind { csvc, ocsvm };

/**
 * Trained SVM. `coef` holds alpha_i * y_i for C-SVC and alpha_i for the
 * one-class machine; `support_ids` index into the training set. The decision
 * value is sum coef_s K(x_s, x) + bias.
 */
struct SvmModel {
  SvmKind kind = SvmKind::csvc;
  KernelSpec spec;
  std::vector<std::size_t> support_ids;
  std::vector<double> coef;
  double bias = 0.0;
  double regularization = 1.0; ///< C or nu
  std::size_t n_train = 0;
  std::size_t iterations = 0;
  bool converged = false;
  std::vector<std::vector<double>> support_vectors; ///< Optional; needed only to score raw features.

  /// Full-length dual vector (unsigned alphas).
  [[nodiscard]] std::vector<double> dual(std::span<const int> labels_pm1 = {}) const {
    std::vector<double> a(n_train, 0.0);
    for (std::size_t s = 0; s < support_ids.size(); ++s) {
      const double sign = labels_pm1.empty() ? 1.0 : static_cast<double>(labels_pm1[support_ids[s]]);
      a[support_ids[s]] = coef[s] * sign;
    }
    return a;
  }
};

struct Prediction {
  int label = 1;
  double decision = 0.0;
};

namespace detail {

inline void check_gram(const SquareMatrix& k) {
  for (std::size_t i = 0; i < k.size(); ++i)
    for (std::size_t j = 0; j < k.size(); ++j)
      if (!std::isfinite(k(i, j))) throw NumericError("svm: non-finite Gram entry");
  for (std::size_t i = 0; i < k.size(); ++i)
    for (std::size_t j = i + 1; j < k.size(); ++j) {
      const double tol = 1e-10 * std::max({1.0, std::fabs(k(i, j)), std::fabs(k(j, i))});
      if (std::fabs(k(i, j) - k(j, i)) > tol)
        throw NumericError("svm: Gram matrix not symmetric at (" + std::to_string(i) + ", " + std::to_string(j) + ")");
    }
}

} // namespace detail

/// C-SVC on a precomputed Gram matrix; labels must be -1/+1.
inline SvmModel train_csvc(const SquareMatrix& gram, std::span<const int> labels, double C = 1.0, double tol = 1e-3,
                           const SmoOptions& extra = {}) {
  const std::size_t n = gram.size();
  if (labels.size() != n) throw UsageError("train_csvc: label count does not match Gram size");
  if (!(C > 0.0)) throw UsageError("train_csvc: C must be > 0");
  bool pos = false, neg = false;
  for (int l : labels) {
    if (l == 1) pos = true;
    else if (l == -1) neg = true;
    else throw UsageError("train_csvc: labels must be -1 or +1");
  }
  if (!pos || !neg) throw DataError("train_csvc: both classes must be present");
  detail::check_gram(gram);

  SmoProblem prob;
  prob.kernel = &gram;
  prob.linear.assign(n, -1.0);
  prob.y.assign(labels.begin(), labels.end());
  prob.upper.assign(n, C);
  prob.alpha.assign(n, 0.0);
  SmoOptions opt = extra;
  opt.tol = tol;
  const auto res = solve_smo(prob, opt);

  SvmModel m;
  m.kind = SvmKind::csvc;
  m.regularization = C;
  m.n_train = n;
  m.bias = -res.rho;
  m.iterations = res.iterations;
  m.converged = res.converged;
  for (std::size_t i = 0; i < n; ++i) {
    if (res.alpha[i] > 0.0) {
      m.support_ids.push_back(i);
      m.coef.push_back(res.alpha[i] * labels[i]);
    }
  }
  return m;
}

inline SvmModel train_csvc(const GramMatrix& gram, std::span<const int> labels, double C = 1.0, double tol = 1e-3) {
  auto m = train_csvc(gram.values, labels, C, tol);
  m.spec = gram.spec;
  return m;
}

/**
 * nu one-class SVM: minimize 0.5 a'Ka subject to sum a = 1 and
 * 0 <= a_i <= 1/(nu n). Decision f(x) = sum a_i K(x_i, x) - rho; f >= 0 is an inlier.
 */
inline SvmModel train_ocsvm(const SquareMatrix& gram, double nu, double tol = 1e-3, const SmoOptions& extra = {}) {
  const std::size_t n = gram.size();
  if (!(nu > 0.0 && nu <= 1.0)) throw UsageError("train_ocsvm: nu must lie in (0,1]");
  if (n == 0) throw UsageError("train_ocsvm: empty Gram matrix");
  detail::check_gram(gram);

  const double cap = 1.0 / (nu * static_cast<double>(n));
  SmoProblem prob;
  prob.kernel = &gram;
  prob.linear.assign(n, 0.0);
  prob.y.assign(n, 1);
  prob.upper.assign(n, cap);
  prob.alpha.assign(n, 0.0);
  // Fill whole boxes first, then the remainder, so sum a = 1 from the start.
  double remaining = 1.0;
  for (std::size_t i = 0; i < n && remaining > 0.0; ++i) {
    prob.alpha[i] = std::min(cap, remaining);
    remaining -= prob.alpha[i];
  }
  if (remaining > 0.0) prob.alpha[n - 1] += remaining;
  SmoOptions opt = extra;
  opt.tol = tol;
  const auto res = solve_smo(prob, opt);

  SvmModel m;
  m.kind = SvmKind::ocsvm;
  m.regularization = nu;
  m.n_train = n;
  m.bias = -res.rho;
  m.iterations = res.iterations;
  m.converged = res.converged;
  for (std::size_t i = 0; i < n; ++i) {
    if (res.alpha[i] > 0.0) {
      m.support_ids.push_back(i);
      m.coef.push_back(res.alpha[i]);
    }
  }
  return m;
}

/// Decision value and label for one query; an exact zero counts as +1.
inline Prediction predict(const SvmModel& model, std::span<const double> kernel_row) {
  if (kernel_row.size() != model.n_train)
    throw UsageError("predict: kernel row has " + std::to_string(kernel_row.size()) + " entries, model expects " +
                     std::to_string(model.n_train));
  double f = model.bias;
  for (std::size_t s = 0; s < model.support_ids.size(); ++s) f += model.coef[s] * kernel_row[model.support_ids[s]];
  return {f >= 0.0 ? 1 : -1, f};
}

/// Largest KKT gap m(a) - M(a) of a C-SVC solution; < tol at convergence.
inline double csvc_kkt_violation(const SquareMatrix& gram, std::span<const int> labels, std::span<const double> alpha,
                                 double C) {
  const std::size_t n = gram.size();
  std::vector<double> G(n, -1.0);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < n; ++i) G[k] += labels[k] * labels[i] * gram(k, i) * alpha[i];
  std::vector<signed char> y(labels.begin(), labels.end());
  std::vector<double> upper(n, C);
  std::size_t i = 0, j = 0;
  return detail::select_pair(alpha, G, y, upper, i, j);
}

// ---------------------------------------------------------------------------
// Precomputed-kernel text format: "<label> 0:<serial> 1:<K(i,1)> ... n:<K(i,n)>"

inline void write_precomputed(std::ostream& out, const SquareMatrix& gram, std::span<const int> labels) {
  for (std::size_t i = 0; i < gram.size(); ++i) {
    out << labels[i] << " 0:" << (i + 1);
    for (std::size_t j = 0; j < gram.size(); ++j) out << ' ' << (j + 1) << ':' << format_double(gram(i, j));
    out << '\n';
  }
}

inline void export_precomputed(const SquareMatrix& gram, std::span<const int> labels, const std::string& path) {
  if (gram.size() == 0) throw UsageError("export_precomputed: empty dataset");
  if (labels.size() != gram.size()) throw UsageError("export_precomputed: label count does not match Gram size");
  std::ostringstream body;
  write_precomputed(body, gram, labels);
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << body.str();
  if (!out) throw DataError("write failed for " + path);
}

struct PrecomputedData {
  SquareMatrix gram;
  std::vector<int> labels;
};

inline PrecomputedData read_precomputed(std::istream& in) {
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string tok;
    if (!(ls >> tok)) continue;
    const auto lab = parse_int(tok);
    if (!lab) throw DataError("precomputed line " + std::to_string(lineno) + ": bad label");
    labels.push_back(static_cast<int>(*lab));
    std::vector<double> row;
    std::size_t expect = 0;
    while (ls >> tok) {
      const auto colon = tok.find(':');
      if (colon == std::string::npos) throw DataError("precomputed line " + std::to_string(lineno) + ": missing ':'");
      const auto idx = parse_int(std::string_view(tok).substr(0, colon));
      const auto val = parse_double(std::string_view(tok).substr(colon + 1));
      if (!idx || !val || static_cast<std::size_t>(*idx) != expect)
        throw DataError("precomputed line " + std::to_string(lineno) + ": bad entry '" + tok + "'");
      if (expect == 0) {
        if (static_cast<std::size_t>(*val) != rows.size() + 1)
          throw DataError("precomputed line " + std::to_string(lineno) + ": serial out of sequence");
      } else {
        row.push_back(*val);
      }
      ++expect;
    }
    rows.push_back(std::move(row));
  }
  PrecomputedData d;
  d.gram = SquareMatrix(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows.size()) throw DataError("precomputed: matrix is not square");
    for (std::size_t j = 0; j < rows.size(); ++j) d.gram(i, j) = rows[i][j];
  }
  d.labels = std::move(labels);
  return d;
}

inline PrecomputedData parse_precomputed(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return read_precomputed(in);
}

// ---------------------------------------------------------------------------
// JSON persistence

inline nlohmann::json to_json(const KernelSpec& s) {
  return {{"family", to_string(s.family)}, {"mean", to_string(s.mean)}, {"form", to_string(s.form)},
          {"sigma", s.sigma},              {"epsilon", s.epsilon},      {"tag", s.tag()}};
}

inline KernelSpec kernel_spec_from_json(const nlohmann::json& j) {
  const std::string tag = std::string(j.at("family").get<std::string>()) + ":" + j.at("mean").get<std::string>() + ":" +
                          j.at("form").get<std::string>();
  return parse_kernel_spec(tag, j.at("sigma").get<double>(), j.at("epsilon").get<double>());
}

inline nlohmann::json to_json(const SvmModel& m) {
  nlohmann::json j{{"kind", m.kind == SvmKind::csvc ? "csvc" : "ocsvm"},
                   {"spec", to_json(m.spec)},
                   {"support_ids", m.support_ids},
                   {"alphas", m.coef},
                   {"bias", m.bias},
                   {m.kind == SvmKind::csvc ? "C" : "nu", m.regularization},
                   {"n_train", m.n_train},
                   {"iterations", m.iterations},
                   {"converged", m.converged}};
  if (!m.support_vectors.empty()) j["support_vectors"] = m.support_vectors;
  return j;
}

inline SvmModel svm_from_json(const nlohmann::json& j) {
  try {
    SvmModel m;
    m.kind = j.at("kind").get<std::string>() == "csvc" ? SvmKind::csvc : SvmKind::ocsvm;
    m.spec = kernel_spec_from_json(j.at("spec"));
    m.support_ids = j.at("support_ids").get<std::vector<std::size_t>>();
    m.coef = j.at("alphas").get<std::vector<double>>();
    m.bias = j.at("bias").get<double>();
    m.regularization = j.at(m.kind == SvmKind::csvc ? "C" : "nu").get<double>();
    m.n_train = j.at("n_train").get<std::size_t>();
    m.iterations = j.value("iterations", std::size_t{0});
    m.converged = j.value("converged", false);
    if (j.contains("support_vectors")) m.support_vectors = j["support_vectors"].get<std::vector<std::vector<double>>>();
    if (m.coef.size() != m.support_ids.size()) throw DataError("svm model: alphas and support_ids differ in length");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("svm model: ") + e.what());
  }
}

/**
 * Scores raw features with a model that carries its support vectors. The
 * kernel row is built against the support vectors only, so the model does not
 * need the rest of the training set.
 */
inline Prediction predict_features(const SvmModel& m, std::span<const double> x, const ProbConfig& cfg) {
  if (m.support_vectors.size() != m.support_ids.size())
    throw UsageError("predict_features: model was saved without support vectors");
  FeatureSet sv;
  sv.rows = m.support_vectors;
  const auto row = kernel_row(m.spec, x, sv, cfg);
  double f = m.bias;
  for (std::size_t s = 0; s < row.size(); ++s) f += m.coef[s] * row[s];
  return {f >= 0.0 ? 1 : -1, f};
}

} // namespace fusegram
