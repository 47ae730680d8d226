// fusegram command-line tool. Every subcommand accepts the same configuration
// keys (as --key-name flags or through --config FILE) so any artifact can be
// regenerated from the hash and seed it records.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fusegram.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fusegram;

namespace {

struct Invocation {
  std::string config_file;
  std::map<std::string, std::string> flags;

  [[nodiscard]] PipelineConfig resolve(bool check_paths = true) const {
    std::map<std::string, std::string> kv;
    if (!config_file.empty()) kv = read_config_file(config_file);
    for (const auto& [k, v] : flags) kv[k] = v;
    return make_config(kv, check_paths);
  }
};

std::string dashed(std::string key) {
  for (char& c : key)
    if (c == '_') c = '-';
  return key;
}

void add_config_options(CLI::App* sub, Invocation& inv, bool positional_input) {
  sub->add_option("--config", inv.config_file, "key = value config file, or a report JSON to re-run");
  for (const auto& key : config_keys()) {
    const std::string name = key.name;
    auto* opt = sub->add_option_function<std::string>(
        "--" + dashed(name), [&inv, name](const std::string& v) { inv.flags[name] = v; },
        std::string(key.help) + " [" + key.fallback + "]");
    opt->type_name("VALUE");
  }
  if (positional_input)
    sub->add_option_function<std::string>("in", [&inv](const std::string& v) { inv.flags["input"] = v; },
                                          "input file (same as --input)");
}

std::string provenance(const PipelineConfig& c) {
  return "# fusegram config_hash=" + to_hex(c.hash()) + " seed=" + std::to_string(c.seed);
}

json provenance_json(const PipelineConfig& c) {
  json config = json::object();
  for (const auto& [k, v] : c.settings)
    if (!is_output_key(k)) config[k] = v;
  return {{"config", config}, {"config_hash", to_hex(c.hash())}, {"seed", c.seed}};
}

/// Opens `path` for writing, or stdout when it is empty or "-".
class Output {
public:
  explicit Output(const std::string& path) {
    if (path.empty() || path == "-") return;
    if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
    file_.open(path, std::ios::binary);
    if (!file_) throw DataError("cannot write " + path);
  }
  std::ostream& stream() { return file_.is_open() ? static_cast<std::ostream&>(file_) : std::cout; }

private:
  std::ofstream file_;
};

FeatureSet read_feature_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  FeatureSet out;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    const auto t = trim(line);
    if (t.empty() || t.front() == '#' || t.starts_with("id,")) continue;
    const auto fields = split_view(t, ',');
    if (fields.size() < 3) throw DataError(path + " row " + std::to_string(row) + ": expected id,label,values...");
    const auto id = parse_int(fields[0]);
    if (!id || *id < 0) throw DataError(path + " row " + std::to_string(row) + ": malformed id");
    const auto label = parse_int(fields[1]);
    std::vector<double> v;
    for (std::size_t k = 2; k < fields.size(); ++k) {
      const auto x = parse_double(fields[k]);
      if (!x || !std::isfinite(*x)) throw DataError(path + " row " + std::to_string(row) + ": malformed value");
      v.push_back(*x);
    }
    if (!out.rows.empty() && v.size() != out.dim()) throw DataError(path + " row " + std::to_string(row) + ": ragged row");
    out.ids.push_back(static_cast<std::size_t>(*id));
    out.labels.push_back(label ? static_cast<int>(*label) : -1);
    out.rows.push_back(std::move(v));
  }
  return out;
}

void write_feature_csv(std::ostream& out, const FeatureSet& f, const std::string& prefix, const std::string& comment) {
  out << comment << '\n' << "id,label";
  for (std::size_t k = 0; k < f.dim(); ++k) out << ',' << prefix << k;
  out << '\n';
  for (std::size_t i = 0; i < f.size(); ++i) {
    out << f.ids[i] << ',';
    if (f.labels[i] >= 0) out << f.labels[i];
    for (double v : f.rows[i]) out << ',' << format_double(v);
    out << '\n';
  }
}

json prob_json(const ProbConfig& p) {
  return {{"mode", to_string(p.mode)}, {"epsilon", p.epsilon}, {"bandwidth", p.bandwidth}};
}

ProbConfig prob_from_json(const json& j) {
  ProbConfig p;
  p.mode = parse_prob_mode(j.at("mode").get<std::string>());
  p.epsilon = j.at("epsilon").get<double>();
  p.bandwidth = j.at("bandwidth").get<double>();
  return p;
}

KernelSpec single_kernel(const PipelineConfig& c, double sigma, const char* fallback_tag) {
  if (c.kernels.size() == 1 && c.kernels.front() == "all") return parse_kernel_spec(fallback_tag, sigma, c.prob.epsilon);
  if (c.kernels.size() != 1) throw UsageError("this command takes exactly one kernel tag");
  return parse_kernel_spec(c.kernels.front(), sigma, c.prob.epsilon);
}

// Rows of the known class, or every row when the data is unlabeled.
std::vector<std::size_t> known_rows(const FeatureSet& f, int positive) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < f.size(); ++i)
    if (f.labels[i] == positive || f.labels[i] < 0) idx.push_back(i);
  if (idx.size() < 2) throw DataError("need at least 2 training rows of class " + std::to_string(positive));
  return idx;
}

FeatureSet labeled_features(const PipelineConfig& c, const LabeledDataset& ds, FeatureInfo* info) {
  FeatureSet f = extract_features(c, ds, info);
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (!ds.samples[i].label) f.labels[i] = -1;
  return f;
}

int cmd_synth(const Invocation& inv) {
  auto c = inv.resolve();
  const auto ds = synthesize(SynthSpec::separated(c.separation, c.noise_std, c.synth_n, c.seed));
  Output out(c.out);
  out.stream() << provenance(c) << '\n';
  write_csv(out.stream(), ds, true);
  return 0;
}

int cmd_encode(const Invocation& inv, bool pgm) {
  const auto c = inv.resolve();
  if (c.out.empty()) throw UsageError("encode: --out DIR is required");
  const auto ds = load_input(c);
  fs::create_directories(c.out);
  std::ofstream manifest(fs::path(c.out) / "manifest.csv");
  manifest << provenance(c) << '\n' << "file,id,pose,label\n";
  for (const auto& s : ds.samples) {
    std::ostringstream name;
    name << "sample_" << std::setw(6) << std::setfill('0') << s.id;
    const auto img = encode(s);
    write_sie(img, (fs::path(c.out) / (name.str() + ".sie")).string());
    if (pgm)
      write_pgm(img, (fs::path(c.out) / (name.str() + ".pgm")).string(),
                (fs::path(c.out) / (name.str() + ".json")).string());
    manifest << name.str() << ".sie," << s.id << ',' << s.pose << ',';
    if (s.label) manifest << *s.label;
    manifest << '\n';
  }
  if (!manifest) throw DataError("encode: failed writing manifest");
  return 0;
}

int cmd_decode(const Invocation& inv) {
  const auto c = inv.resolve();
  const fs::path dir = c.input;
  std::ifstream manifest(dir / "manifest.csv");
  if (!manifest) throw DataError("decode: no manifest.csv in " + dir.string());
  LabeledDataset ds;
  ds.source = dir.string();
  std::string line;
  std::size_t row = 0;
  while (std::getline(manifest, line)) {
    ++row;
    const auto t = trim(line);
    if (t.empty() || t.front() == '#' || t.starts_with("file,")) continue;
    const auto f = split_view(t, ',');
    if (f.size() != 4) throw DataError("manifest row " + std::to_string(row) + ": expected file,id,pose,label");
    FusedSample s = decode(read_sie((dir / std::string(f[0])).string()));
    const auto id = parse_int(f[1]);
    const auto pose = parse_int(f[2]);
    if (!id || !pose) throw DataError("manifest row " + std::to_string(row) + ": malformed id or pose");
    s.id = static_cast<std::size_t>(*id);
    s.pose = static_cast<int>(*pose);
    if (const auto label = parse_int(f[3])) s.label = static_cast<int>(*label);
    ds.samples.push_back(s);
  }
  Output out(c.out);
  out.stream() << provenance(c) << '\n';
  write_csv(out.stream(), ds, true);
  return 0;
}

int cmd_gist(const Invocation& inv, bool prefilter) {
  auto c = inv.resolve();
  const auto ds = load_input(c);
  const std::size_t side = gist_side_for(c);
  GistParams params;
  params.prefilter = prefilter;
  const GaborBank bank(side, params);
  FeatureSet f = FeatureSet::from(ds);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    f.rows[i] = gist_of(ds.samples[i], bank, side);
    if (!ds.samples[i].label) f.labels[i] = -1;
  }
  Output out(c.out);
  write_feature_csv(out.stream(), f, "g", provenance(c));
  return 0;
}

int cmd_pca(const Invocation& inv, const std::string& scores_path) {
  const auto c = inv.resolve();
  if (c.input == "-" || c.input == "synth") throw UsageError("pca: give a feature CSV written by 'fusegram gist'");
  const FeatureSet f = read_feature_csv(c.input);
  const auto model = pca_fit(f.rows);
  const std::size_t k = pca_select_k(model, c.pca_variance);
  json j = to_json(model);
  j["selected_k"] = k;
  j["variance_target"] = c.pca_variance;
  j["provenance"] = provenance_json(c);
  Output out(c.out);
  out.stream() << j.dump(2) << '\n';
  if (!scores_path.empty()) {
    FeatureSet proj = f;
    for (auto& r : proj.rows) r = model.transform(r, k);
    Output s(scores_path);
    write_feature_csv(s.stream(), proj, "pc", provenance(c));
  }
  std::cerr << "pca: k=" << k << " explains " << format_double(model.cumulative()[k - 1]) << " of the variance\n";
  return 0;
}

int cmd_gram(const Invocation& inv, bool libsvm) {
  const auto c = inv.resolve();
  const auto ds = load_input(c);
  const FeatureSet f = labeled_features(c, ds, nullptr);
  const double sigma = c.sigma > 0.0 ? c.sigma : median_heuristic_sigma(f);
  const auto spec = single_kernel(c, sigma, "mcjsd:am:scaled");
  const auto g = gram(spec, f, c.prob, c.workers);
  if (libsvm) {
    std::vector<int> labels;
    for (int l : f.labels) labels.push_back(l < 0 ? 0 : (l == c.positive_class ? 1 : -1));
    if (c.out.empty() || c.out == "-") {
      write_precomputed(std::cout, g.values, labels);
    } else {
      export_precomputed(g.values, labels, c.out);
    }
    return 0;
  }
  Output out(c.out);
  out.stream() << provenance(c) << " kernel=" << spec.tag() << " sigma=" << format_double(spec.sigma) << '\n';
  for (std::size_t i = 0; i < g.size(); ++i) {
    for (std::size_t j = 0; j < g.size(); ++j) out.stream() << (j ? "," : "") << format_double(g(i, j));
    out.stream() << '\n';
  }
  return 0;
}

int cmd_train(const Invocation& inv, const std::string& calibration_path) {
  const auto c = inv.resolve();
  const auto ds = load_input(c);
  FeatureInfo info;
  const FeatureSet f = labeled_features(c, ds, &info);
  json j;
  switch (c.model) {
  case ModelKind::csvc: {
    std::vector<int> y;
    for (std::size_t i = 0; i < f.size(); ++i) {
      if (f.labels[i] < 0) throw DataError("train: csvc needs labels on every row");
      y.push_back(f.labels[i] == c.positive_class ? 1 : -1);
    }
    const double sigma = c.sigma > 0.0 ? c.sigma : median_heuristic_sigma(f);
    const auto spec = single_kernel(c, sigma, "mcjsd:am:scaled");
    auto model = train_csvc(gram(spec, f, c.prob, c.workers), y, c.C, c.tol);
    for (auto id : model.support_ids) model.support_vectors.push_back(f.rows[id]);
    j = to_json(model);
    break;
  }
  case ModelKind::ocsvm: {
    const FeatureSet tr = f.subset(known_rows(f, c.positive_class));
    const double sigma = c.sigma > 0.0 ? c.sigma : median_heuristic_sigma(tr);
    const auto spec = single_kernel(c, sigma, "rbf:am:plain");
    auto model = train_ocsvm(gram(spec, tr, c.prob, c.workers).values, c.nu, c.tol);
    model.spec = spec;
    for (auto id : model.support_ids) model.support_vectors.push_back(tr.rows[id]);
    j = to_json(model);
    break;
  }
  case ModelKind::iforest: {
    const FeatureSet tr = f.subset(known_rows(f, c.positive_class));
    j = to_json(IsolationDetector{fit_iforest(tr.rows, c.trees, c.psi, c.seed), c.iforest_threshold});
    break;
  }
  case ModelKind::gmm: {
    const FeatureSet tr = f.subset(known_rows(f, c.positive_class));
    GmmOptions opt;
    opt.components = c.gmm_k;
    opt.reg = c.gmm_reg;
    opt.max_iter = c.gmm_max_iter;
    opt.seed = c.seed;
    opt.covariance = c.gmm_covariance;
    GmmModel gmm = fit_gmm(tr.rows, opt);
    if (calibration_path.empty()) {
      j = to_json(gmm);
      j["threshold"] = c.threshold;
      std::cerr << "train: no --calibration data; detect will report raw log-likelihoods only\n";
      break;
    }
    const auto cal_ds = load_csv(calibration_path, c.has_header);
    const FeatureSet cal = info.pca ? project_features(c, cal_ds, &*info.pca, *info.pca_k) : FeatureSet::from(cal_ds);
    std::vector<double> scores;
    std::vector<int> targets;
    for (std::size_t i = 0; i < cal.size(); ++i) {
      if (!cal_ds.samples[i].label) throw DataError("train: calibration rows need labels");
      scores.push_back(gmm.log_likelihood(cal.rows[i]));
      targets.push_back(cal.labels[i] == c.positive_class ? 1 : 0);
    }
    j = to_json(calibrate_and_detect(std::move(gmm), scores, targets, c.threshold));
    break;
  }
  }
  j["prob"] = prob_json(c.prob);
  j["positive_class"] = c.positive_class;
  if (info.pca) {
    j["pca"] = to_json(*info.pca);
    j["pca_k"] = *info.pca_k;
  }
  j["provenance"] = provenance_json(c);
  Output out(c.out);
  out.stream() << j.dump(2) << '\n';
  return 0;
}

int cmd_detect(const Invocation& inv, const std::string& model_path) {
  if (model_path.empty()) throw UsageError("detect: --model-file is required");
  std::ifstream mf(model_path);
  if (!mf) throw DataError("cannot open " + model_path);
  json j;
  try {
    j = json::parse(mf);
  } catch (const json::exception& e) {
    throw DataError(model_path + ": " + e.what());
  }
  // The model's own configuration governs feature extraction; command-line
  // flags only pick the input and output.
  std::map<std::string, std::string> kv;
  for (const auto& [k, v] : j.at("provenance").at("config").items()) kv[k] = v.get<std::string>();
  for (const auto& [k, v] : inv.flags) kv[k] = v;
  const auto c = make_config(kv);

  const auto ds = load_input(c);
  std::optional<PcaModel> pca;
  std::size_t k = 0;
  if (j.contains("pca")) {
    pca = pca_from_json(j["pca"]);
    k = j.at("pca_k").get<std::size_t>();
  }
  const FeatureSet f = project_features(c, ds, pca ? &*pca : nullptr, k);
  const int pos = j.value("positive_class", 1);
  const int neg = pos == 1 ? 0 : 1;
  const std::string kind = j.at("kind").get<std::string>();

  Output out(c.out);
  auto& os = out.stream();
  os << "# fusegram detect model=" << model_path << " config_hash=" << j["provenance"]["config_hash"].get<std::string>()
     << " seed=" << j["provenance"]["seed"].get<std::uint64_t>() << '\n';
  os << "id,label,score,probability,predicted\n";
  auto row = [&](std::size_t i, double score, std::optional<double> p, std::optional<int> pred) {
    os << f.ids[i] << ',';
    if (ds.samples[i].label) os << *ds.samples[i].label;
    os << ',' << format_double(score) << ',';
    if (p) os << format_double(*p);
    os << ',';
    if (pred) os << *pred;
    os << '\n';
  };
  if (kind == "csvc" || kind == "ocsvm") {
    const auto model = svm_from_json(j);
    const auto prob = prob_from_json(j.at("prob"));
    for (std::size_t i = 0; i < f.size(); ++i) {
      const auto p = predict_features(model, f.rows[i], prob);
      row(i, p.decision, std::nullopt, p.label > 0 ? pos : neg);
    }
  } else if (kind == "iforest") {
    const IsolationDetector det{iforest_from_json(j.at("forest")), j.at("threshold").get<double>()};
    for (std::size_t i = 0; i < f.size(); ++i) {
      const double s = det.score(f.rows[i]);
      row(i, s, std::nullopt, s <= det.threshold ? pos : neg);
    }
  } else if (kind == "gmm_isotonic") {
    const CalibratedGmmDetector det{gmm_from_json(j.at("gmm")), isotonic_from_json(j.at("calibration")),
                                    j.at("threshold").get<double>()};
    for (std::size_t i = 0; i < f.size(); ++i) {
      const double p = det.probability(f.rows[i]);
      row(i, det.raw_score(f.rows[i]), p, p >= det.threshold ? pos : neg);
    }
  } else if (kind == "gmm") {
    const auto gmm = gmm_from_json(j);
    for (std::size_t i = 0; i < f.size(); ++i) row(i, gmm.log_likelihood(f.rows[i]), std::nullopt, std::nullopt);
  } else {
    throw DataError("detect: unknown model kind '" + kind + "'");
  }
  return 0;
}

int cmd_eval(const Invocation& inv) {
  const auto c = inv.resolve();
  const auto report = run_eval(c);
  if (c.out.empty()) std::cout << report.dump(2) << '\n';
  else std::cerr << "eval: wrote " << (fs::path(c.out) / "report.json").string() << '\n';
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"fusegram: divergence-kernel gesture detection on fused EMG/IMU data"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "fusegram 1.0.0");

  struct Sub {
    CLI::App* app;
    Invocation inv;
  };
  std::map<std::string, Sub> subs;
  auto make = [&](const std::string& name, const std::string& desc, bool positional) -> Sub& {
    auto& s = subs[name];
    s.app = app.add_subcommand(name, desc);
    add_config_options(s.app, s.inv, positional);
    return s;
  };

  make("synth", "write a seeded two-class synthetic dataset as CSV", false);
  auto& enc = make("encode", "encode each row as a 4x4 image (.sie) plus manifest.csv in --out", true);
  bool pgm = false;
  enc.app->add_flag("--pgm", pgm, "also write PGM images with JSON sidecars");
  make("decode", "decode a directory written by encode back to CSV", true);
  auto& gi = make("gist", "512-d GIST descriptors of the encoded images", true);
  bool prefilter = false;
  gi.app->add_flag("--prefilter", prefilter, "apply local contrast normalization first");
  auto& pc = make("pca", "fit PCA to a feature CSV and select k by explained variance", true);
  std::string scores_path;
  pc.app->add_option("--scores", scores_path, "also write the projected features here");
  make("gram", "write the Gram matrix of one kernel as CSV", true);
  make("export-gram", "write the Gram matrix in libsvm precomputed-kernel format", true);
  auto& tr = make("train", "fit one model and write it as JSON", true);
  std::string calibration_path;
  tr.app->add_option("--calibration", calibration_path, "labeled CSV for the GMM isotonic calibration");
  auto& de = make("detect", "score a CSV with a model written by train", true);
  std::string model_path;
  de.app->add_option("--model-file", model_path, "model JSON from train")->required();
  make("eval", "run the configured pipeline and write the evaluation report", true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (subs["synth"].app->parsed()) return cmd_synth(subs["synth"].inv);
    if (subs["encode"].app->parsed()) return cmd_encode(subs["encode"].inv, pgm);
    if (subs["decode"].app->parsed()) return cmd_decode(subs["decode"].inv);
    if (subs["gist"].app->parsed()) return cmd_gist(subs["gist"].inv, prefilter);
    if (subs["pca"].app->parsed()) return cmd_pca(subs["pca"].inv, scores_path);
    if (subs["gram"].app->parsed()) return cmd_gram(subs["gram"].inv, false);
    if (subs["export-gram"].app->parsed()) return cmd_gram(subs["export-gram"].inv, true);
    if (subs["train"].app->parsed()) return cmd_train(subs["train"].inv, calibration_path);
    if (subs["detect"].app->parsed()) return cmd_detect(subs["detect"].inv, model_path);
    if (subs["eval"].app->parsed()) return cmd_eval(subs["eval"].inv);
  } catch (const Error& e) {
    std::cerr << "fusegram: " << e.what() << '\n';
    return e.exit_code();
  } catch (const json::exception& e) {
    std::cerr << "fusegram: malformed JSON: " << e.what() << '\n';
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "fusegram: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "fusegram: " << e.what() << '\n';
    return 3;
  }
  return 1;
}
