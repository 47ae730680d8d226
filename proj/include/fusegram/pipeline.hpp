#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fusegram/codec.hpp"
#include "fusegram/data.hpp"
#include "fusegram/error.hpp"
#include "fusegram/eval.hpp"
#include "fusegram/gist.hpp"
#include "fusegram/kernels.hpp"
#include "fusegram/novelty.hpp"
#include "fusegram/pca.hpp"
#include "fusegram/util.hpp"

namespace fusegram {

enum class FeaturePath { signal, gist, gist4 };
enum class ModelKind { csvc, ocsvm, iforest, gmm };

inline const char* to_string(FeaturePath f) {
  switch (f) {
  case FeaturePath::signal: return "signal";
  case FeaturePath::gist: return "gist";
  case FeaturePath::gist4: return "gist4";
  }
  return "?";
}

inline const char* to_string(ModelKind m) {
  switch (m) {
  case ModelKind::csvc: return "csvc";
  case ModelKind::ocsvm: return "ocsvm";
  case ModelKind::iforest: return "iforest";
  case ModelKind::gmm: return "gmm";
  }
  return "?";
}

/// One configurable setting: its key, default and a one-line description.
struct ConfigKey {
  const char* name;
  const char* fallback;
  const char* help;
};

inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys{
      {"input", "-", "16-column CSV, '-' for stdin, or 'synth' for a generated dataset"},
      {"has_header", "true", "input CSV starts with a header row"},
      {"synth_n", "100", "synthetic samples per class"},
      {"separation", "10", "synthetic class-mean distance in noise standard deviations"},
      {"noise_std", "1", "synthetic per-channel noise standard deviation"},
      {"seed", "7", "base seed for synthesis, splits, folds and models"},
      {"features", "signal", "feature path: signal | gist (256x256 resize) | gist4 (raw 4x4)"},
      {"gist_side", "256", "resize side for the gist path"},
      {"pca_variance", "0.99", "explained-variance target for PCA on gist features"},
      {"prob_mode", "normalize", "normalize | kde_smoothed"},
      {"epsilon", "1e-10", "probability smoothing added to every state"},
      {"bandwidth", "1", "state-index bandwidth for kde_smoothed"},
      {"kernel", "all", "comma-separated kernel tags (family:mean:form) or 'all'"},
      {"sigma", "0", "kernel sigma; 0 uses the median pairwise distance"},
      {"sigma_grid", "0.25,0.5,1,2,4", "inner-CV sigma multipliers"},
      {"model", "csvc", "csvc | ocsvm | iforest | gmm"},
      {"C", "1", "C-SVC box constraint"},
      {"nu", "0.1", "one-class SVM nu"},
      {"tol", "0.001", "SMO stopping tolerance"},
      {"trees", "100", "isolation forest tree count"},
      {"psi", "256", "isolation forest subsample size"},
      {"iforest_threshold", "0.5", "isolation score at or below which a point is an inlier"},
      {"gmm_k", "5", "GMM components"},
      {"gmm_reg", "1e-6", "GMM variance floor"},
      {"gmm_max_iter", "200", "GMM EM iteration cap"},
      {"gmm_covariance", "diagonal", "diagonal | full"},
      {"threshold", "0.5", "calibrated-probability threshold for the GMM detector"},
      {"folds", "10", "outer cross-validation folds"},
      {"inner_folds", "3", "inner cross-validation folds"},
      {"positive_class", "1", "label treated as positive / known class"},
      {"train_fraction", "0.8", "known-class training share for novelty detectors"},
      {"calibration_fraction", "0.5", "test-side share used to calibrate the GMM detector"},
      {"out", "", "output directory; empty writes the JSON report to stdout"},
      {"workers", "1", "worker threads (results do not depend on it)"},
  };
  return keys;
}

/// Keys that only affect where results go, not what they are.
inline bool is_output_key(const std::string& k) { return k == "out" || k == "workers"; }

struct PipelineConfig {
  std::string input;
  bool has_header = true;
  std::size_t synth_n = 100;
  double separation = 10.0;
  double noise_std = 1.0;
  std::uint64_t seed = 7;
  FeaturePath features = FeaturePath::signal;
  std::size_t gist_side = 256;
  double pca_variance = 0.99;
  ProbConfig prob;
  std::vector<std::string> kernels;
  double sigma = 0.0;
  std::vector<double> sigma_grid;
  ModelKind model = ModelKind::csvc;
  double C = 1.0;
  double nu = 0.1;
  double tol = 1e-3;
  std::size_t trees = 100;
  std::size_t psi = 256;
  double iforest_threshold = 0.5;
  std::size_t gmm_k = 5;
  double gmm_reg = 1e-6;
  std::size_t gmm_max_iter = 200;
  CovarianceType gmm_covariance = CovarianceType::diagonal;
  double threshold = 0.5;
  std::size_t folds = 10;
  std::size_t inner_folds = 3;
  int positive_class = 1;
  double train_fraction = 0.8;
  double calibration_fraction = 0.5;
  std::string out;
  unsigned workers = 1;

  std::map<std::string, std::string> settings; ///< effective key/value text

  /// Canonical "key=value" lines over result-affecting keys, sorted by key.
  [[nodiscard]] std::string canonical() const {
    std::string s;
    for (const auto& [k, v] : settings)
      if (!is_output_key(k)) s += k + "=" + v + "\n";
    return s;
  }
  [[nodiscard]] std::uint64_t hash() const { return fnv1a(canonical()); }

  [[nodiscard]] std::vector<KernelSpec> kernel_specs(double resolved_sigma) const {
    if (kernels.size() == 1 && kernels.front() == "all") return enumerate_kernels(resolved_sigma, prob.epsilon);
    std::vector<KernelSpec> out;
    for (const auto& k : kernels) out.push_back(parse_kernel_spec(k, resolved_sigma, prob.epsilon));
    return out;
  }
};

/// Reads "key = value" lines; '#' starts a comment. A JSON report is also
/// accepted, in which case its embedded "config" object is used.
inline std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  std::map<std::string, std::string> kv;
  if (const auto t = trim(text); !t.empty() && t.front() == '{') {
    try {
      const auto j = nlohmann::json::parse(text);
      for (const auto& [k, v] : j.at("config").items()) kv[k] = v.get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw UsageError(path + ": " + e.what());
    }
    return kv;
  }
  std::istringstream lines(text);
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> problems;
  while (std::getline(lines, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos) {
      problems.push_back(path + ":" + std::to_string(lineno) + ": expected key = value");
      continue;
    }
    kv[std::string(trim(t.substr(0, eq)))] = std::string(trim(t.substr(eq + 1)));
  }
  if (!problems.empty()) {
    std::string msg = "invalid config:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw UsageError(msg);
  }
  return kv;
}

/**
 * Builds a validated config from overrides on top of the defaults. Every
 * problem is collected and reported together.
 */
inline PipelineConfig make_config(const std::map<std::string, std::string>& overrides, bool check_paths = true) {
  PipelineConfig c;
  std::vector<std::string> problems;
  for (const auto& key : config_keys()) c.settings[key.name] = key.fallback;
  for (const auto& [k, v] : overrides) {
    if (!c.settings.contains(k)) problems.push_back("unknown key '" + k + "'");
    else c.settings[k] = v;
  }
  const auto& s = c.settings;

  auto real = [&](const char* k, double& dst, auto&& ok, const char* what) {
    const auto v = parse_double(s.at(k));
    if (!v || !std::isfinite(*v)) problems.push_back(std::string(k) + ": not a number: '" + s.at(k) + "'");
    else if (!ok(*v)) problems.push_back(std::string(k) + ": must be " + what);
    else dst = *v;
  };
  auto count = [&](const char* k, auto& dst, long long lo) {
    const auto v = parse_int(s.at(k));
    if (!v) problems.push_back(std::string(k) + ": not an integer: '" + s.at(k) + "'");
    else if (*v < lo) problems.push_back(std::string(k) + ": must be >= " + std::to_string(lo));
    else dst = static_cast<std::remove_reference_t<decltype(dst)>>(*v);
  };
  auto positive = [](double v) { return v > 0.0; };
  auto nonneg = [](double v) { return v >= 0.0; };
  auto open01 = [](double v) { return v > 0.0 && v < 1.0; };

  c.input = s.at("input");
  if (c.input.empty()) {
    problems.push_back("input: must name a file, '-' or 'synth'");
  } else if (c.input == "-" || c.input == "synth") {
  } else if (check_paths && !std::filesystem::exists(c.input)) {
    problems.push_back("input: file does not exist: " + c.input);
  }
  if (s.at("has_header") == "true" || s.at("has_header") == "1") c.has_header = true;
  else if (s.at("has_header") == "false" || s.at("has_header") == "0") c.has_header = false;
  else problems.push_back("has_header: expected true|false");

  count("synth_n", c.synth_n, 1);
  real("separation", c.separation, nonneg, ">= 0");
  real("noise_std", c.noise_std, nonneg, ">= 0");
  {
    const auto v = parse_int(s.at("seed"));
    if (!v || *v < 0) problems.push_back("seed: expected a non-negative integer");
    else c.seed = static_cast<std::uint64_t>(*v);
  }
  if (s.at("features") == "signal") c.features = FeaturePath::signal;
  else if (s.at("features") == "gist") c.features = FeaturePath::gist;
  else if (s.at("features") == "gist4") c.features = FeaturePath::gist4;
  else problems.push_back("features: expected signal|gist|gist4");
  count("gist_side", c.gist_side, 4);
  if (c.gist_side % 4 != 0) problems.push_back("gist_side: must be a multiple of 4");
  real("pca_variance", c.pca_variance, [](double v) { return v > 0.0 && v <= 1.0; }, "in (0,1]");

  try {
    c.prob.mode = parse_prob_mode(s.at("prob_mode"));
  } catch (const UsageError& e) {
    problems.push_back(std::string("prob_mode: ") + e.what());
  }
  real("epsilon", c.prob.epsilon, nonneg, ">= 0");
  real("bandwidth", c.prob.bandwidth, positive, "> 0");

  for (auto k : split_view(s.at("kernel"), ',')) c.kernels.emplace_back(trim(k));
  if (!(c.kernels.size() == 1 && c.kernels.front() == "all")) {
    for (const auto& k : c.kernels) {
      try {
        parse_kernel_spec(k);
      } catch (const UsageError& e) {
        problems.push_back(std::string("kernel: ") + e.what());
      }
    }
  }
  real("sigma", c.sigma, nonneg, ">= 0 (0 = median heuristic)");
  for (auto g : split_view(s.at("sigma_grid"), ',')) {
    const auto v = parse_double(g);
    if (!v || !(*v > 0.0)) {
      problems.push_back("sigma_grid: entries must be positive numbers");
      break;
    }
    c.sigma_grid.push_back(*v);
  }

  const auto& model = s.at("model");
  if (model == "csvc") c.model = ModelKind::csvc;
  else if (model == "ocsvm") c.model = ModelKind::ocsvm;
  else if (model == "iforest") c.model = ModelKind::iforest;
  else if (model == "gmm") c.model = ModelKind::gmm;
  else problems.push_back("model: expected csvc|ocsvm|iforest|gmm");
  real("C", c.C, positive, "> 0");
  real("nu", c.nu, [](double v) { return v > 0.0 && v <= 1.0; }, "in (0,1]");
  real("tol", c.tol, positive, "> 0");
  count("trees", c.trees, 1);
  count("psi", c.psi, 2);
  real("iforest_threshold", c.iforest_threshold, [](double v) { return v > 0.0 && v <= 1.0; }, "in (0,1]");
  count("gmm_k", c.gmm_k, 1);
  real("gmm_reg", c.gmm_reg, positive, "> 0");
  count("gmm_max_iter", c.gmm_max_iter, 1);
  if (s.at("gmm_covariance") == "diagonal") c.gmm_covariance = CovarianceType::diagonal;
  else if (s.at("gmm_covariance") == "full") c.gmm_covariance = CovarianceType::full;
  else problems.push_back("gmm_covariance: expected diagonal|full");
  real("threshold", c.threshold, nonneg, ">= 0");
  count("folds", c.folds, 2);
  count("inner_folds", c.inner_folds, 2);
  {
    const auto v = parse_int(s.at("positive_class"));
    if (!v || (*v != 0 && *v != 1)) problems.push_back("positive_class: expected 0 or 1");
    else c.positive_class = static_cast<int>(*v);
  }
  real("train_fraction", c.train_fraction, open01, "in (0,1)");
  real("calibration_fraction", c.calibration_fraction, open01, "in (0,1)");
  c.out = s.at("out");
  count("workers", c.workers, 1);

  if (!problems.empty()) {
    std::string msg = "invalid configuration (" + std::to_string(problems.size()) + " problem" +
                      (problems.size() == 1 ? "" : "s") + "):";
    for (const auto& p : problems) msg += "\n  " + p;
    throw UsageError(msg);
  }
  return c;
}

inline LabeledDataset load_input(const PipelineConfig& c) {
  if (c.input == "synth") return synthesize(SynthSpec::separated(c.separation, c.noise_std, c.synth_n, c.seed));
  if (c.input == "-") return read_csv(std::cin, c.has_header, "<stdin>");
  return load_csv(c.input, c.has_header);
}

inline std::vector<double> gist_of(const FusedSample& s, const GaborBank& bank, std::size_t side) {
  const GrayImage raw = GrayImage::from(encode(s));
  return gist(side == kImageSide ? raw : resize_nearest(raw, side), bank);
}

struct FeatureInfo {
  std::string path;
  std::size_t dim = 0;
  std::optional<std::size_t> pca_k;
  std::optional<double> pca_explained;
  std::optional<PcaModel> pca;
};

inline std::size_t gist_side_for(const PipelineConfig& c) {
  return c.features == FeaturePath::gist ? c.gist_side : kImageSide;
}

/// Applies an already fitted projection; used to score new data with a saved model.
inline FeatureSet project_features(const PipelineConfig& c, const LabeledDataset& ds, const PcaModel* pca,
                                   std::size_t k) {
  FeatureSet fs = FeatureSet::from(ds);
  if (c.features == FeaturePath::signal) return fs;
  if (!pca) throw UsageError("gist features need a fitted PCA model");
  const std::size_t side = gist_side_for(c);
  const GaborBank bank(side, GistParams{});
  for (std::size_t i = 0; i < ds.size(); ++i) fs.rows[i] = pca->transform(gist_of(ds.samples[i], bank, side), k);
  return fs;
}

/// Feature rows for the configured path; gist paths end with a PCA projection.
inline FeatureSet extract_features(const PipelineConfig& c, const LabeledDataset& ds, FeatureInfo* info = nullptr) {
  FeatureSet fs = FeatureSet::from(ds);
  FeatureInfo fi;
  fi.path = to_string(c.features);
  if (c.features != FeaturePath::signal) {
    const std::size_t side = gist_side_for(c);
    const GaborBank bank(side, GistParams{});
    for (std::size_t i = 0; i < ds.size(); ++i) fs.rows[i] = gist_of(ds.samples[i], bank, side);
    auto pca = pca_fit(fs.rows);
    const std::size_t k = std::max<std::size_t>(1, pca_select_k(pca, c.pca_variance));
    for (auto& r : fs.rows) r = pca.transform(r, k);
    fi.pca_k = k;
    fi.pca_explained = pca.cumulative()[k - 1];
    fi.pca = std::move(pca);
  }
  fi.dim = fs.dim();
  if (info) *info = std::move(fi);
  return fs;
}

/**
 * Full evaluation run. Returns the JSON report; when `out` is set also
 * writes report.json, folds.csv and one confusion CSV per spec there.
 */
inline nlohmann::json run_eval(const PipelineConfig& c) {
  const LabeledDataset ds = load_input(c);
  if (ds.empty()) throw DataError("eval: dataset is empty");
  FeatureInfo info;
  const FeatureSet fs = extract_features(c, ds, &info);

  std::vector<EvalReport> reports;
  nlohmann::json seeds{{"seed", c.seed}};
  if (c.model == ModelKind::csvc) {
    const double base_sigma = c.sigma > 0.0 ? c.sigma : median_heuristic_sigma(fs);
    const auto specs = c.kernel_specs(base_sigma);
    NestedCvOptions opt;
    opt.outer_folds = c.folds;
    opt.inner_folds = c.inner_folds;
    opt.sigma_multipliers = c.sigma_grid;
    opt.base_sigma = base_sigma;
    opt.C = c.C;
    opt.tol = c.tol;
    opt.prob = c.prob;
    opt.seed_base = c.seed;
    opt.workers = c.workers;
    opt.positive_class = c.positive_class;
    reports = nested_cv(fs, specs, opt);
    seeds["base_sigma"] = base_sigma;
    nlohmann::json per_spec = nlohmann::json::object();
    for (const auto& s : specs) per_spec[s.tag()] = randomization_seed(c.seed, s.mean);
    seeds["per_spec"] = per_spec;
  } else {
    NoveltyOptions opt;
    opt.model = c.model == ModelKind::ocsvm ? NoveltyModel::ocsvm
                : c.model == ModelKind::iforest ? NoveltyModel::iforest
                                                : NoveltyModel::gmm;
    opt.positive_class = c.positive_class;
    opt.train_fraction = c.train_fraction;
    opt.calibration_fraction = c.calibration_fraction;
    opt.seed = c.seed;
    opt.trees = c.trees;
    opt.psi = c.psi;
    opt.iforest_threshold = c.iforest_threshold;
    opt.gmm.components = c.gmm_k;
    opt.gmm.reg = c.gmm_reg;
    opt.gmm.max_iter = c.gmm_max_iter;
    opt.gmm.seed = c.seed;
    opt.gmm.covariance = c.gmm_covariance;
    opt.gmm_threshold = c.threshold;
    opt.nu = c.nu;
    opt.tol = c.tol;
    opt.prob = c.prob;
    const auto specs = c.kernel_specs(c.sigma > 0.0 ? c.sigma : 1.0);
    opt.kernel = c.kernels.front() == "all" ? KernelSpec{Family::rbf, MeanKind::am, Form::plain, 1.0, c.prob.epsilon}
                                            : specs.front();
    if (!(c.sigma > 0.0)) opt.kernel.sigma = 0.0;
    reports.push_back(evaluate_novelty(fs, opt));
  }

  nlohmann::json jr = nlohmann::json::array();
  for (const auto& r : reports) jr.push_back(to_json(r));
  nlohmann::json features{{"path", info.path}, {"dim", info.dim}};
  if (info.pca_k) {
    features["pca_k"] = *info.pca_k;
    features["pca_explained"] = *info.pca_explained;
  }
  nlohmann::json config = nlohmann::json::object();
  for (const auto& [k, v] : c.settings)
    if (!is_output_key(k)) config[k] = v;
  nlohmann::json report{{"config", config},
                        {"config_hash", to_hex(c.hash())},
                        {"seeds", seeds},
                        {"model", to_string(c.model)},
                        {"dataset", {{"source", ds.source}, {"samples", ds.size()},
                                     {"class_0", ds.count(0)}, {"class_1", ds.count(1)}}},
                        {"features", features},
                        {"reports", jr}};

  if (!c.out.empty()) {
    std::filesystem::create_directories(c.out);
    const std::filesystem::path dir(c.out);
    {
      std::ofstream f(dir / "report.json");
      f << report.dump(2) << '\n';
    }
    {
      std::ofstream f(dir / "folds.csv");
      f << "# config_hash=" << to_hex(c.hash()) << " seed=" << c.seed << '\n';
      write_report_csv(f, reports);
    }
    for (const auto& r : reports) {
      std::string name = r.spec;
      for (char& ch : name)
        if (ch == ':') ch = '_';
      std::ofstream f(dir / ("confusion_" + name + ".csv"));
      write_confusion_csv(f, r.pooled);
    }
  }
  return report;
}

} // namespace fusegram
