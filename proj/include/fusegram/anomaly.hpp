#pragma once

#include <span>
#include <vector>

#include <json.hpp>

#include "fusegram/error.hpp"
#include "fusegram/gmm.hpp"
#include "fusegram/iforest.hpp"
#include "fusegram/isotonic.hpp"

namespace fusegram {

/// Isolation Forest used as a novelty detector: inlier iff score <= threshold.
struct IsolationDetector {
  IsolationForestModel forest;
  double threshold = 0.5;

  [[nodiscard]] double score(std::span<const double> x) const { return iforest_score(forest, x); }
  [[nodiscard]] bool inlier(std::span<const double> x) const { return score(x) <= threshold; }
};

/**
 * GMM log-likelihood mapped through an isotonic fit to P(known class).
 * A point is predicted as the known class iff the calibrated probability is
 * at least `threshold`; p = 1 therefore stays positive at threshold 1.0.
 */
struct CalibratedGmmDetector {
  GmmModel gmm;
  IsotonicMap calibration;
  double threshold = 0.5;

  [[nodiscard]] double raw_score(std::span<const double> x) const { return gmm.log_likelihood(x); }
  [[nodiscard]] double probability(std::span<const double> x) const { return calibration(raw_score(x)); }
  [[nodiscard]] bool inlier(std::span<const double> x) const { return probability(x) >= threshold; }
};

/// `calib_labels` are 1 for the known class and 0 otherwise; both must occur.
inline CalibratedGmmDetector calibrate_and_detect(GmmModel gmm, std::span<const double> calib_scores,
                                                  std::span<const int> calib_labels, double threshold = 0.5) {
  if (calib_scores.size() != calib_labels.size()) throw UsageError("calibrate: scores and labels differ in length");
  bool pos = false, neg = false;
  std::vector<double> targets;
  targets.reserve(calib_labels.size());
  for (int l : calib_labels) {
    if (l != 0 && l != 1) throw UsageError("calibrate: labels must be 0 or 1");
    (l == 1 ? pos : neg) = true;
    targets.push_back(static_cast<double>(l));
  }
  if (!pos || !neg) throw DataError("calibrate: calibration set must contain both labels");
  CalibratedGmmDetector det;
  det.gmm = std::move(gmm);
  det.calibration = pava(calib_scores, targets).map;
  det.threshold = threshold;
  return det;
}

inline nlohmann::json to_json(const CalibratedGmmDetector& d) {
  return {{"kind", "gmm_isotonic"}, {"gmm", to_json(d.gmm)}, {"calibration", to_json(d.calibration)},
          {"threshold", d.threshold}};
}

inline nlohmann::json to_json(const IsolationDetector& d) {
  return {{"kind", "iforest"}, {"forest", to_json(d.forest)}, {"threshold", d.threshold}};
}

} // namespace fusegram
