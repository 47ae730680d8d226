#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "fusegram/anomaly.hpp"
#include "fusegram/data.hpp"
#include "fusegram/eval.hpp"
#include "fusegram/kernels.hpp"
#include "fusegram/svm.hpp"

namespace fusegram {

enum class NoveltyModel { ocsvm, iforest, gmm };

inline const char* to_string(NoveltyModel m) {
  switch (m) {
  case NoveltyModel::ocsvm: return "ocsvm";
  case NoveltyModel::iforest: return "iforest";
  case NoveltyModel::gmm: return "gmm";
  }
  return "?";
}

struct NoveltyOptions {
  NoveltyModel model = NoveltyModel::iforest;
  int positive_class = 1;            ///< the known class the detector is trained on
  double train_fraction = 0.8;       ///< share of the known class used for training
  double calibration_fraction = 0.5; ///< share of the test side used to fit the isotonic map (gmm)
  std::uint64_t seed = 0;
  // isolation forest
  std::size_t trees = 100;
  std::size_t psi = 256;
  double iforest_threshold = 0.5;
  // gmm
  GmmOptions gmm;
  double gmm_threshold = 0.5;
  // one-class svm
  KernelSpec kernel{Family::rbf, MeanKind::am, Form::plain, 0.0, 1e-10}; ///< sigma 0 = median heuristic on training rows
  double nu = 0.1;
  double tol = 1e-3;
  ProbConfig prob;
};

/**
 * Novelty-detection protocol: train on a share of the known class only, then
 * test on the held-out known samples plus every sample of the other class.
 * The GMM detector additionally needs labeled scores for its isotonic map;
 * those come from a stratified slice of the test side, and the reported
 * metrics cover only the remaining test samples.
 */
inline EvalReport evaluate_novelty(const FeatureSet& fs, const NoveltyOptions& opt) {
  if (fs.empty()) throw UsageError("evaluate_novelty: empty dataset");
  const int pos = opt.positive_class;
  const int neg = pos == 1 ? 0 : 1;
  std::vector<std::size_t> known, other;
  for (std::size_t i = 0; i < fs.size(); ++i) (fs.labels[i] == pos ? known : other).push_back(i);
  if (known.size() < 2) throw DataError("evaluate_novelty: known class needs at least 2 samples");

  Rng rng(opt.seed);
  stable_shuffle(known, rng);
  auto n_test = static_cast<std::size_t>(std::floor(static_cast<double>(known.size()) * (1.0 - opt.train_fraction) + 1e-9));
  n_test = std::clamp<std::size_t>(n_test, 1, known.size() - 1);
  const std::vector<std::size_t> train(known.begin(), known.end() - static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> test(known.end() - static_cast<std::ptrdiff_t>(n_test), known.end());
  test.insert(test.end(), other.begin(), other.end());
  std::sort(test.begin(), test.end());

  std::vector<std::vector<double>> train_rows;
  for (auto i : train) train_rows.push_back(fs.rows[i]);

  EvalReport rep;
  rep.seed = opt.seed;
  std::vector<int> actual, predicted;

  switch (opt.model) {
  case NoveltyModel::iforest: {
    IsolationDetector det{fit_iforest(train_rows, opt.trees, opt.psi, opt.seed), opt.iforest_threshold};
    if (det.forest.psi_clamped)
      rep.warnings.push_back("psi clamped to training size " + std::to_string(det.forest.psi));
    rep.spec = "iforest";
    for (auto i : test) {
      actual.push_back(fs.labels[i]);
      predicted.push_back(det.inlier(fs.rows[i]) ? pos : neg);
    }
    break;
  }
  case NoveltyModel::gmm: {
    GmmModel gmm = fit_gmm(train_rows, opt.gmm);
    if (!gmm.converged) rep.warnings.push_back("gmm stopped at max_iter without converging");
    std::vector<int> test_labels;
    for (auto i : test) test_labels.push_back(fs.labels[i]);
    std::vector<std::size_t> calib, eval;
    {
      std::vector<std::size_t> side_pos, side_neg;
      for (std::size_t a = 0; a < test.size(); ++a) (test_labels[a] == pos ? side_pos : side_neg).push_back(a);
      if (side_pos.size() < 2 || side_neg.size() < 2)
        throw DataError("evaluate_novelty: gmm calibration needs >= 2 samples of each class on the test side");
      for (auto* side : {&side_pos, &side_neg}) {
        stable_shuffle(*side, rng);
        auto nc = static_cast<std::size_t>(std::floor(static_cast<double>(side->size()) * opt.calibration_fraction + 1e-9));
        nc = std::clamp<std::size_t>(nc, 1, side->size() - 1);
        calib.insert(calib.end(), side->begin(), side->begin() + static_cast<std::ptrdiff_t>(nc));
        eval.insert(eval.end(), side->begin() + static_cast<std::ptrdiff_t>(nc), side->end());
      }
      std::sort(calib.begin(), calib.end());
      std::sort(eval.begin(), eval.end());
    }
    std::vector<double> scores;
    std::vector<int> targets;
    for (auto a : calib) {
      scores.push_back(gmm.log_likelihood(fs.rows[test[a]]));
      targets.push_back(test_labels[a] == pos ? 1 : 0);
    }
    const auto det = calibrate_and_detect(std::move(gmm), scores, targets, opt.gmm_threshold);
    rep.spec = "gmm_isotonic";
    for (auto a : eval) {
      actual.push_back(test_labels[a]);
      predicted.push_back(det.inlier(fs.rows[test[a]]) ? pos : neg);
    }
    break;
  }
  case NoveltyModel::ocsvm: {
    FeatureSet tr = fs.subset(train);
    KernelSpec spec = opt.kernel;
    if (!(spec.sigma > 0.0)) spec.sigma = median_heuristic_sigma(tr);
    const auto g = gram(spec, tr, opt.prob);
    const auto model = train_ocsvm(g.values, opt.nu, opt.tol);
    rep.spec = "ocsvm:" + spec.tag();
    for (auto i : test) {
      actual.push_back(fs.labels[i]);
      const auto row = kernel_row(spec, fs.rows[i], tr, opt.prob);
      predicted.push_back(predict(model, row).label > 0 ? pos : neg);
    }
    break;
  }
  }

  FoldResult fr;
  fr.fold = 0;
  fr.confusion = confusion(actual, predicted, pos);
  const auto m = metrics(fr.confusion);
  fr.accuracy = m.accuracy;
  fr.sensitivity = m.sensitivity;
  fr.specificity = m.specificity;
  rep.warnings.insert(rep.warnings.end(), m.warnings.begin(), m.warnings.end());
  rep.folds.push_back(fr);
  rep.pooled = fr.confusion;
  rep.pooled_metrics = m;
  return rep;
}

} // namespace fusegram
