#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "fusegram/data.hpp"
#include "fusegram/error.hpp"
#include "fusegram/prob.hpp"
#include "fusegram/util.hpp"

namespace fusegram {

enum class Family { cjsd, mcjsd, rbf };
enum class MeanKind { am, gm, hm };
enum class Form { amplified, scaled, amplified_scaled, plain };

inline const char* to_string(Family f) {
  switch (f) {
  case Family::cjsd: return "cjsd";
  case Family::mcjsd: return "mcjsd";
  case Family::rbf: return "rbf";
  }
  return "?";
}

inline const char* to_string(MeanKind m) {
  switch (m) {
  case MeanKind::am: return "am";
  case MeanKind::gm: return "gm";
  case MeanKind::hm: return "hm";
  }
  return "?";
}

inline const char* to_string(Form f) {
  switch (f) {
  case Form::amplified: return "amplified";
  case Form::scaled: return "scaled";
  case Form::amplified_scaled: return "amplified_scaled";
  case Form::plain: return "plain";
  }
  return "?";
}

/// Kernel family, midpoint mean, functional form and bandwidth. For RBF the
/// mean is only a dataset-randomization tag.
struct KernelSpec {
  Family family = Family::rbf;
  MeanKind mean = MeanKind::am;
  Form form = Form::plain;
  double sigma = 1.0;
  double epsilon = 1e-10;

  /// "family:mean:form", e.g. "mcjsd:am:amplified".
  [[nodiscard]] std::string tag() const {
    return std::string(to_string(family)) + ":" + to_string(mean) + ":" + to_string(form);
  }

  void validate() const {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw UsageError("kernel " + tag() + ": sigma must be > 0");
    if (!(epsilon >= 0.0)) throw UsageError("kernel " + tag() + ": epsilon must be >= 0");
    if ((family == Family::rbf) != (form == Form::plain))
      throw UsageError("kernel " + tag() + ": plain form is RBF-only and RBF takes only the plain form");
  }

  bool operator==(const KernelSpec&) const = default;
};

/// Parses "family:mean:form"; "rbf" and "rbf:gm" default the remaining fields.
inline KernelSpec parse_kernel_spec(const std::string& text, double sigma = 1.0, double epsilon = 1e-10) {
  const auto parts = split_view(text, ':');
  KernelSpec spec;
  spec.sigma = sigma;
  spec.epsilon = epsilon;
  auto bad = [&] { return UsageError("bad kernel spec '" + text + "' (expected family:mean:form)"); };

  const std::string fam(trim(parts[0]));
  if (fam == "cjsd") spec.family = Family::cjsd;
  else if (fam == "mcjsd") spec.family = Family::mcjsd;
  else if (fam == "rbf") spec.family = Family::rbf;
  else throw bad();

  if (parts.size() > 1) {
    const std::string m(trim(parts[1]));
    if (m == "am") spec.mean = MeanKind::am;
    else if (m == "gm") spec.mean = MeanKind::gm;
    else if (m == "hm") spec.mean = MeanKind::hm;
    else throw bad();
  } else if (spec.family != Family::rbf) {
    throw bad();
  }

  if (parts.size() > 2) {
    const std::string f(trim(parts[2]));
    if (f == "amplified") spec.form = Form::amplified;
    else if (f == "scaled") spec.form = Form::scaled;
    else if (f == "amplified_scaled" || f == "amplifiedscaled" || f == "amplified-scaled")
      spec.form = Form::amplified_scaled;
    else if (f == "plain") spec.form = Form::plain;
    else throw bad();
  } else if (spec.family != Family::rbf) {
    throw bad();
  }
  if (parts.size() > 3) throw bad();
  spec.validate();
  return spec;
}

/// Arithmetic, geometric or harmonic mean of two non-negative reals.
inline double chisini_mean(double p, double q, MeanKind kind) {
  switch (kind) {
  case MeanKind::am: return 0.5 * (p + q);
  case MeanKind::gm: return std::sqrt(p * q);
  case MeanKind::hm: {
    const double s = p + q;
    return s > 0.0 ? 2.0 * p * q / s : 0.0;
  }
  }
  return 0.0;
}

/**
 * Chisini-Jensen-Shannon divergence in nats:
 *   0.5 * (sum p_i ln(p_i/M_i) + sum q_i ln(q_i/M_i)),  M_i = chisini_mean(p_i, q_i).
 * Zero-mass states contribute nothing. A vanishing midpoint under positive
 * mass means the inputs were not epsilon-smoothed.
 */
inline double cjsd(std::span<const double> p, std::span<const double> q, MeanKind kind) {
  if (p.size() != q.size()) throw UsageError("cjsd: distributions differ in length");
  double sp = 0.0;
  double sq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    // equal states add exactly zero for every midpoint
    if (p[i] == q[i]) continue;
    const double m = chisini_mean(p[i], q[i], kind);
    if (m <= 0.0) {
      if (p[i] > 0.0 || q[i] > 0.0) throw NumericError("cjsd: unsmoothed zero state at index " + std::to_string(i));
      continue;
    }
    if (p[i] > 0.0) sp += p[i] * std::log(p[i] / m);
    if (q[i] > 0.0) sq += q[i] * std::log(q[i] / m);
  }
  return std::max(0.0, 0.5 * (sp + sq));
}

inline double cjsd(const ProbVector& p, const ProbVector& q, MeanKind kind) { return cjsd(p.probs, q.probs, kind); }

/// Square root of cjsd; a metric for the arithmetic midpoint.
inline double mcjsd(std::span<const double> p, std::span<const double> q, MeanKind kind) {
  return std::sqrt(cjsd(p, q, kind));
}

inline double mcjsd(const ProbVector& p, const ProbVector& q, MeanKind kind) { return mcjsd(p.probs, q.probs, kind); }

inline double divergence(Family family, std::span<const double> p, std::span<const double> q, MeanKind kind) {
  switch (family) {
  case Family::cjsd: return cjsd(p, q, kind);
  case Family::mcjsd: return mcjsd(p, q, kind);
  case Family::rbf: return 0.0;
  }
  return 0.0;
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw UsageError("feature vectors differ in length");
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    s += d * d;
  }
  return s;
}

/// Combines divergence D and scaled distance r = |x_i - x_j|^2 / (2 sigma^2).
inline double kernel_from_parts(Form form, double d, double r) {
  switch (form) {
  case Form::amplified: return d * std::exp(-r);
  case Form::scaled: return std::exp(-d * r);
  case Form::amplified_scaled: return d * std::exp(-d * r);
  case Form::plain: return std::exp(-r);
  }
  return 0.0;
}

inline double kernel_value(const KernelSpec& spec, std::span<const double> xi, std::span<const double> xj,
                           const ProbVector& p, const ProbVector& q) {
  if (!(spec.sigma > 0.0)) throw UsageError("kernel_value: sigma must be > 0");
  const double r = squared_distance(xi, xj) / (2.0 * spec.sigma * spec.sigma);
  const double d = spec.family == Family::rbf ? 0.0 : divergence(spec.family, p.probs, q.probs, spec.mean);
  return kernel_from_parts(spec.form, d, r);
}

/// The 18 divergence kernels followed by the three RBF randomization tags.
inline std::vector<KernelSpec> enumerate_kernels(double sigma, double epsilon = 1e-10) {
  if (!(sigma > 0.0)) throw UsageError("enumerate_kernels: sigma must be > 0");
  std::vector<KernelSpec> out;
  for (Family fam : {Family::cjsd, Family::mcjsd})
    for (MeanKind m : {MeanKind::am, MeanKind::gm, MeanKind::hm})
      for (Form f : {Form::amplified, Form::scaled, Form::amplified_scaled})
        out.push_back({fam, m, f, sigma, epsilon});
  for (MeanKind m : {MeanKind::am, MeanKind::gm, MeanKind::hm})
    out.push_back({Family::rbf, m, Form::plain, sigma, epsilon});
  return out;
}

/// Symmetric n x n matrix stored row-major.
class SquareMatrix {
public:
  SquareMatrix() = default;
  explicit SquareMatrix(std::size_t n, double fill = 0.0) : n_(n), v_(n * n, fill) {}

  [[nodiscard]] std::size_t size() const { return n_; }
  double& operator()(std::size_t i, std::size_t j) { return v_[i * n_ + j]; }
  [[nodiscard]] double operator()(std::size_t i, std::size_t j) const { return v_[i * n_ + j]; }
  [[nodiscard]] std::span<const double> row(std::size_t i) const { return {v_.data() + i * n_, n_}; }

  [[nodiscard]] SquareMatrix submatrix(std::span<const std::size_t> idx) const {
    SquareMatrix out(idx.size());
    for (std::size_t a = 0; a < idx.size(); ++a)
      for (std::size_t b = 0; b < idx.size(); ++b) out(a, b) = (*this)(idx[a], idx[b]);
    return out;
  }

  bool operator==(const SquareMatrix&) const = default;

private:
  std::size_t n_ = 0;
  std::vector<double> v_;
};

struct GramMatrix {
  SquareMatrix values;
  KernelSpec spec;
  std::vector<std::size_t> sample_ids;

  [[nodiscard]] std::size_t size() const { return values.size(); }
  double operator()(std::size_t i, std::size_t j) const { return values(i, j); }
};

namespace detail {

/// Fills the upper triangle with fn(i, j) and mirrors it. Each entry is
/// computed independently so the result does not depend on `workers`.
template <typename Fn>
SquareMatrix fill_symmetric(std::size_t n, unsigned workers, Fn&& fn) {
  SquareMatrix m(n);
  auto rows = [&](std::size_t first, std::size_t stride) {
    for (std::size_t i = first; i < n; i += stride)
      for (std::size_t j = i; j < n; ++j) m(i, j) = fn(i, j);
  };
  if (workers <= 1 || n < 64) {
    rows(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(rows, w, workers);
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) m(j, i) = m(i, j);
  return m;
}

} // namespace detail

inline std::vector<ProbVector> to_probs(const FeatureSet& fs, const ProbConfig& cfg) {
  std::vector<ProbVector> out;
  out.reserve(fs.size());
  for (const auto& r : fs.rows) out.push_back(to_prob(r, cfg));
  return out;
}

/**
 * Pairwise quantities that do not depend on sigma. Cross-validation reuses
 * them for every sigma on the grid and every fold.
 */
struct PairwiseTables {
  SquareMatrix sqdist;
  SquareMatrix div; ///< Empty for RBF.
  Family family = Family::rbf;
  MeanKind mean = MeanKind::am;

  static PairwiseTables build(const FeatureSet& fs, Family family, MeanKind mean, const ProbConfig& cfg,
                              unsigned workers = 1) {
    PairwiseTables t;
    t.family = family;
    t.mean = mean;
    t.sqdist = detail::fill_symmetric(fs.size(), workers,
                                      [&](std::size_t i, std::size_t j) { return squared_distance(fs.rows[i], fs.rows[j]); });
    if (family != Family::rbf) {
      const auto probs = to_probs(fs, cfg);
      t.div = detail::fill_symmetric(fs.size(), workers, [&](std::size_t i, std::size_t j) {
        return fusegram::divergence(family, probs[i].probs, probs[j].probs, mean);
      });
    }
    return t;
  }

  [[nodiscard]] SquareMatrix kernel(Form form, double sigma) const {
    const std::size_t n = sqdist.size();
    SquareMatrix k(n);
    const double denom = 2.0 * sigma * sigma;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        k(i, j) = kernel_from_parts(form, family == Family::rbf ? 0.0 : div(i, j), sqdist(i, j) / denom);
    return k;
  }
};

/// Median pairwise Euclidean distance; falls back to 1 when all rows coincide.
inline double median_heuristic_sigma(const FeatureSet& fs) {
  std::vector<double> d;
  d.reserve(fs.size() * (fs.size() - (fs.empty() ? 0 : 1)) / 2);
  for (std::size_t i = 0; i < fs.size(); ++i)
    for (std::size_t j = i + 1; j < fs.size(); ++j) d.push_back(std::sqrt(squared_distance(fs.rows[i], fs.rows[j])));
  const double m = median(std::move(d));
  return m > 0.0 ? m : 1.0;
}

/**
 * Gram matrix over all pairs of `fs`. `jitter` is added to the diagonal; it
 * defaults to zero, so amplified forms keep their zero diagonal.
 */
inline GramMatrix gram(const KernelSpec& spec, const FeatureSet& fs, const ProbConfig& cfg, unsigned workers = 1,
                       double jitter = 0.0) {
  if (fs.empty()) throw UsageError("gram: empty dataset");
  spec.validate();
  ProbConfig pc = cfg;
  pc.epsilon = spec.epsilon;
  std::vector<ProbVector> probs;
  if (spec.family != Family::rbf) probs = to_probs(fs, pc);
  const double denom = 2.0 * spec.sigma * spec.sigma;
  GramMatrix g;
  g.spec = spec;
  g.sample_ids = fs.ids;
  g.values = detail::fill_symmetric(fs.size(), workers, [&](std::size_t i, std::size_t j) {
    const double r = squared_distance(fs.rows[i], fs.rows[j]) / denom;
    const double d = spec.family == Family::rbf ? 0.0 : divergence(spec.family, probs[i].probs, probs[j].probs, spec.mean);
    return kernel_from_parts(spec.form, d, r);
  });
  for (std::size_t i = 0; i < fs.size(); ++i) {
    g.values(i, i) += jitter;
    for (std::size_t j = 0; j < fs.size(); ++j)
      if (!std::isfinite(g.values(i, j))) throw NumericError("gram: non-finite entry for " + spec.tag());
  }
  return g;
}

/// Kernel values between `query` and every row of `train` (same order).
inline std::vector<double> kernel_row(const KernelSpec& spec, std::span<const double> query, const FeatureSet& train,
                                      const ProbConfig& cfg) {
  ProbConfig pc = cfg;
  pc.epsilon = spec.epsilon;
  ProbVector pq;
  if (spec.family != Family::rbf) pq = to_prob(query, pc);
  std::vector<double> row(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    ProbVector pt;
    if (spec.family != Family::rbf) pt = to_prob(train.rows[i], pc);
    row[i] = kernel_value(spec, train.rows[i], query, pt, pq);
  }
  return row;
}

} // namespace fusegram
