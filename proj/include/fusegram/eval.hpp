#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "fusegram/data.hpp"
#include "fusegram/error.hpp"
#include "fusegram/kernels.hpp"
#include "fusegram/svm.hpp"
#include "fusegram/util.hpp"

namespace fusegram {

/// 2x2 counts laid out rows = actual, columns = predicted, positive class first.
struct ConfusionMatrix {
  std::size_t tp = 0, fn = 0, fp = 0, tn = 0;
  int positive_class = 1;

  [[nodiscard]] std::size_t total() const { return tp + fn + fp + tn; }
  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    tp += o.tp;
    fn += o.fn;
    fp += o.fp;
    tn += o.tn;
    return *this;
  }
  bool operator==(const ConfusionMatrix&) const = default;
};

inline ConfusionMatrix confusion(std::span<const int> actual, std::span<const int> predicted, int positive_class = 1) {
  if (actual.size() != predicted.size()) throw UsageError("confusion: actual and predicted differ in length");
  ConfusionMatrix cm;
  cm.positive_class = positive_class;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    const bool a = actual[i] == positive_class;
    const bool p = predicted[i] == positive_class;
    if (a && p) ++cm.tp;
    else if (a) ++cm.fn;
    else if (p) ++cm.fp;
    else ++cm.tn;
  }
  return cm;
}

struct Metrics {
  double accuracy = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  std::vector<std::string> warnings;
};

/// Rates with no denominator are reported as 1.0 and flagged in `warnings`.
inline Metrics metrics(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw UsageError("metrics: empty confusion matrix");
  Metrics m;
  m.accuracy = static_cast<double>(cm.tp + cm.tn) / static_cast<double>(cm.total());
  if (cm.tp + cm.fn == 0) {
    m.sensitivity = 1.0;
    m.warnings.emplace_back("sensitivity undefined (no actual positives); reported as 1.0");
  } else {
    m.sensitivity = static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fn);
  }
  if (cm.tn + cm.fp == 0) {
    m.specificity = 1.0;
    m.warnings.emplace_back("specificity undefined (no actual negatives); reported as 1.0");
  } else {
    m.specificity = static_cast<double>(cm.tn) / static_cast<double>(cm.tn + cm.fp);
  }
  return m;
}

struct ErrorBars {
  double mean = 0.0;
  double stderr_ = 0.0;

  [[nodiscard]] double ci95_low() const { return mean - 1.96 * stderr_; }
  [[nodiscard]] double ci95_high() const { return mean + 1.96 * stderr_; }
};

/// Sample mean and Bessel-corrected standard error of the mean.
inline ErrorBars error_bars(std::span<const double> values) {
  if (values.size() < 2) throw UsageError("error_bars: need at least 2 values");
  const double m = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / m;
  // shifted sums: identical values give exactly zero spread
  double sd = 0.0, sd2 = 0.0;
  for (double v : values) {
    sd += v - values[0];
    sd2 += (v - values[0]) * (v - values[0]);
  }
  const double ss = std::max(0.0, sd2 - sd * sd / m);
  return {mean, std::sqrt(ss / (m - 1.0)) / std::sqrt(m)};
}

/**
 * Fold index for every sample. Each class is shuffled and dealt round-robin,
 * so per-fold class counts differ by at most one.
 */
inline std::vector<std::size_t> stratified_folds(std::span<const int> labels, std::size_t folds, Rng& rng) {
  if (folds < 2) throw UsageError("stratified_folds: need at least 2 folds");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  std::vector<std::size_t> fold(labels.size(), 0);
  for (auto& [label, idx] : by_class) {
    if (idx.size() < folds)
      throw DataError("class " + std::to_string(label) + " has " + std::to_string(idx.size()) +
                      " samples, too few for " + std::to_string(folds) + " folds");
    stable_shuffle(idx, rng);
    for (std::size_t k = 0; k < idx.size(); ++k) fold[idx[k]] = k % folds;
  }
  return fold;
}

struct FoldResult {
  std::size_t fold = 0;
  double accuracy = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  std::optional<double> sigma;
  ConfusionMatrix confusion;
};

struct EvalReport {
  std::string spec;
  std::uint64_t seed = 0;
  std::vector<FoldResult> folds;
  std::optional<ErrorBars> accuracy; ///< present when there are >= 2 folds
  ConfusionMatrix pooled;
  Metrics pooled_metrics;
  std::vector<std::string> warnings;
};

/// Train on the first index list, return predicted labels for the second.
using FitPredict = std::function<std::vector<int>(const std::vector<std::size_t>& train,
                                                  const std::vector<std::size_t>& test, std::size_t fold)>;

/// Stratified k-fold driver shared by every model.
inline EvalReport cross_validate(std::span<const int> labels, std::size_t folds, std::uint64_t seed,
                                 const FitPredict& fit_predict, int positive_class = 1) {
  Rng rng(seed);
  const auto fold_of = stratified_folds(labels, folds, rng);
  EvalReport rep;
  rep.seed = seed;
  rep.pooled.positive_class = positive_class;
  std::vector<double> acc;
  for (std::size_t f = 0; f < folds; ++f) {
    std::vector<std::size_t> train, test;
    for (std::size_t i = 0; i < labels.size(); ++i) (fold_of[i] == f ? test : train).push_back(i);
    const auto pred = fit_predict(train, test, f);
    std::vector<int> actual;
    for (auto i : test) actual.push_back(labels[i]);
    FoldResult fr;
    fr.fold = f;
    fr.confusion = confusion(actual, pred, positive_class);
    const auto m = metrics(fr.confusion);
    fr.accuracy = m.accuracy;
    fr.sensitivity = m.sensitivity;
    fr.specificity = m.specificity;
    for (const auto& w : m.warnings) rep.warnings.push_back("fold " + std::to_string(f) + ": " + w);
    rep.pooled += fr.confusion;
    acc.push_back(fr.accuracy);
    rep.folds.push_back(fr);
  }
  rep.accuracy = error_bars(acc);
  rep.pooled_metrics = metrics(rep.pooled);
  return rep;
}

struct NestedCvOptions {
  std::size_t outer_folds = 10;
  std::size_t inner_folds = 3;
  std::vector<double> sigma_multipliers{0.25, 0.5, 1.0, 2.0, 4.0};
  double base_sigma = 0.0; ///< 0 selects the median pairwise distance
  double C = 1.0;
  double tol = 1e-3;
  ProbConfig prob;
  std::uint64_t seed_base = 0;
  unsigned workers = 1;
  int positive_class = 1;
};

/// Seed used to randomize the dataset for a spec: one per AM/GM/HM tag.
inline std::uint64_t randomization_seed(std::uint64_t base, MeanKind mean) {
  return base ^ fnv1a(to_string(mean));
}

namespace detail {

inline std::vector<int> to_pm1(std::span<const int> labels, const std::vector<std::size_t>& idx, int positive) {
  std::vector<int> y;
  y.reserve(idx.size());
  for (auto i : idx) y.push_back(labels[i] == positive ? 1 : -1);
  return y;
}

/// Trains on `train` rows of `k` and predicts `test` rows, all against the same full-data kernel.
inline std::vector<int> svm_fit_predict(const SquareMatrix& k, std::span<const int> labels,
                                        const std::vector<std::size_t>& train, const std::vector<std::size_t>& test,
                                        double C, double tol, int positive, int negative) {
  const auto y = to_pm1(labels, train, positive);
  const auto model = train_csvc(k.submatrix(train), y, C, tol);
  std::vector<int> pred;
  pred.reserve(test.size());
  std::vector<double> row(train.size());
  for (auto t : test) {
    for (std::size_t a = 0; a < train.size(); ++a) row[a] = k(t, train[a]);
    pred.push_back(predict(model, row).label > 0 ? positive : negative);
  }
  return pred;
}

} // namespace detail

/**
 * Nested cross-validation of C-SVC over a list of kernel specs. Each spec
 * sees the dataset shuffled with its mean tag's seed; the outer loop is
 * stratified k-fold and the inner loop picks sigma from
 * base_sigma * sigma_multipliers by mean inner-fold accuracy (first best wins).
 */
inline std::vector<EvalReport> nested_cv(const FeatureSet& fs, const std::vector<KernelSpec>& specs,
                                         const NestedCvOptions& opt = {}) {
  if (fs.empty()) throw UsageError("nested_cv: empty dataset");
  if (opt.sigma_multipliers.empty()) throw UsageError("nested_cv: empty sigma grid");
  const int positive = opt.positive_class;
  const int negative = positive == 1 ? 0 : 1;
  const double base_sigma = opt.base_sigma > 0.0 ? opt.base_sigma : median_heuristic_sigma(fs);

  // Pairwise tables depend only on (family, mean); build each once.
  std::map<std::pair<int, int>, PairwiseTables> tables;
  for (const auto& s : specs) {
    s.validate();
    const auto key = std::make_pair(static_cast<int>(s.family), s.family == Family::rbf ? 0 : static_cast<int>(s.mean));
    if (!tables.contains(key)) {
      ProbConfig pc = opt.prob;
      pc.epsilon = s.epsilon;
      tables.emplace(key, PairwiseTables::build(fs, s.family, s.mean, pc, opt.workers));
    }
  }

  std::vector<EvalReport> reports(specs.size());
  auto run_spec = [&](std::size_t si) {
    const auto& spec = specs[si];
    const auto key =
        std::make_pair(static_cast<int>(spec.family), spec.family == Family::rbf ? 0 : static_cast<int>(spec.mean));
    const auto& tab = tables.at(key);
    std::vector<SquareMatrix> kernels;
    for (double m : opt.sigma_multipliers) kernels.push_back(tab.kernel(spec.form, base_sigma * m));

    const std::uint64_t seed = randomization_seed(opt.seed_base, spec.mean);
    // Randomized copy of the dataset: a seeded permutation of sample order.
    Rng perm_rng(seed);
    std::vector<std::size_t> perm(fs.size());
    std::iota(perm.begin(), perm.end(), 0);
    stable_shuffle(perm, perm_rng);
    std::vector<int> labels(fs.size());
    for (std::size_t i = 0; i < perm.size(); ++i) labels[i] = fs.labels[perm[i]];

    std::vector<double> chosen(opt.outer_folds, base_sigma);
    auto outer = [&](const std::vector<std::size_t>& train, const std::vector<std::size_t>& test, std::size_t fold) {
      std::vector<std::size_t> otrain(train.size()), otest(test.size());
      for (std::size_t a = 0; a < train.size(); ++a) otrain[a] = perm[train[a]];
      for (std::size_t a = 0; a < test.size(); ++a) otest[a] = perm[test[a]];

      std::vector<int> inner_labels;
      for (auto i : otrain) inner_labels.push_back(fs.labels[i]);
      Rng inner_rng(seed ^ (0x9e3779b97f4a7c15ULL * (fold + 1)));
      const auto inner_fold = stratified_folds(inner_labels, opt.inner_folds, inner_rng);

      std::size_t best = 0;
      double best_acc = -1.0;
      for (std::size_t g = 0; g < kernels.size(); ++g) {
        double acc = 0.0;
        for (std::size_t f = 0; f < opt.inner_folds; ++f) {
          std::vector<std::size_t> itrain, itest;
          for (std::size_t a = 0; a < otrain.size(); ++a) (inner_fold[a] == f ? itest : itrain).push_back(otrain[a]);
          const auto pred = detail::svm_fit_predict(kernels[g], fs.labels, itrain, itest, opt.C, opt.tol, positive, negative);
          std::size_t ok = 0;
          for (std::size_t a = 0; a < itest.size(); ++a) ok += pred[a] == fs.labels[itest[a]];
          acc += static_cast<double>(ok) / static_cast<double>(itest.size());
        }
        acc /= static_cast<double>(opt.inner_folds);
        if (acc > best_acc) {
          best_acc = acc;
          best = g;
        }
      }
      chosen[fold] = base_sigma * opt.sigma_multipliers[best];
      return detail::svm_fit_predict(kernels[best], fs.labels, otrain, otest, opt.C, opt.tol, positive, negative);
    };

    EvalReport rep = cross_validate(labels, opt.outer_folds, seed, outer, positive);
    rep.spec = spec.tag();
    for (std::size_t f = 0; f < rep.folds.size(); ++f) rep.folds[f].sigma = chosen[f];
    reports[si] = std::move(rep);
  };

  if (opt.workers <= 1 || specs.size() <= 1) {
    for (std::size_t si = 0; si < specs.size(); ++si) run_spec(si);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < opt.workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t si = w; si < specs.size(); si += opt.workers) run_spec(si);
      });
  }
  return reports;
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json to_json(const ConfusionMatrix& cm) {
  return {{"positive_class", cm.positive_class}, {"tp", cm.tp}, {"fn", cm.fn}, {"fp", cm.fp}, {"tn", cm.tn}};
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json folds = nlohmann::json::array();
  for (const auto& f : r.folds) {
    nlohmann::json jf{{"fold", f.fold},
                      {"accuracy", f.accuracy},
                      {"sensitivity", f.sensitivity},
                      {"specificity", f.specificity},
                      {"confusion", to_json(f.confusion)}};
    if (f.sigma) jf["sigma"] = *f.sigma;
    folds.push_back(std::move(jf));
  }
  nlohmann::json j{{"spec", r.spec},
                   {"seed", r.seed},
                   {"folds", folds},
                   {"pooled_confusion", to_json(r.pooled)},
                   {"pooled", {{"accuracy", r.pooled_metrics.accuracy},
                               {"sensitivity", r.pooled_metrics.sensitivity},
                               {"specificity", r.pooled_metrics.specificity}}},
                   {"warnings", r.warnings}};
  if (r.accuracy) {
    j["accuracy_mean"] = r.accuracy->mean;
    j["accuracy_stderr"] = r.accuracy->stderr_;
    j["accuracy_ci95"] = {r.accuracy->ci95_low(), r.accuracy->ci95_high()};
  }
  return j;
}

/// One row per fold: spec, seed, fold, accuracy, sensitivity, specificity, sigma.
inline void write_report_csv(std::ostream& out, const std::vector<EvalReport>& reports) {
  out << "spec,seed,fold,accuracy,sensitivity,specificity,sigma\n";
  for (const auto& r : reports)
    for (const auto& f : r.folds)
      out << r.spec << ',' << r.seed << ',' << f.fold << ',' << format_double(f.accuracy) << ','
          << format_double(f.sensitivity) << ',' << format_double(f.specificity) << ','
          << (f.sigma ? format_double(*f.sigma) : std::string()) << '\n';
}

/// Fig. 8 layout: rows actual, columns predicted, positive class first.
inline void write_confusion_csv(std::ostream& out, const ConfusionMatrix& cm) {
  const int pos = cm.positive_class;
  const int neg = pos == 1 ? 0 : 1;
  out << ",predicted_" << pos << ",predicted_" << neg << '\n';
  out << "actual_" << pos << ',' << cm.tp << ',' << cm.fn << '\n';
  out << "actual_" << neg << ',' << cm.fp << ',' << cm.tn << '\n';
}

} // namespace fusegram
