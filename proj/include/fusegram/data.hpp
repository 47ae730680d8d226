#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "fusegram/error.hpp"
#include "fusegram/util.hpp"

namespace fusegram {

inline constexpr std::size_t kEmgChannels = 8;
inline constexpr std::size_t kAccelChannels = 3;
inline constexpr std::size_t kGyroChannels = 3;
inline constexpr std::size_t kFusedChannels = kEmgChannels + kAccelChannels + kGyroChannels;
inline constexpr std::size_t kRecordColumns = kFusedChannels + 2;

using Channels = std::array<double, kFusedChannels>;

/// One raw 16-column row: EMG(8), accel(3), gyro(3), Myo pose code, label.
struct SensorRecord {
  std::array<double, kEmgChannels> emg{};
  std::array<double, kAccelChannels> accel{};
  std::array<double, kGyroChannels> gyro{};
  int myo_pose = 0;
  int label = 0;
};

/// Fused 14-channel sample. The pose code rides along as metadata and is never
/// part of the feature vector.
struct FusedSample {
  Channels channels{};
  std::optional<int> label;
  std::size_t id = 0;
  int pose = 0;

  [[nodiscard]] std::span<const double> features() const { return channels; }
  bool operator==(const FusedSample&) const = default;
};

inline FusedSample fuse(const SensorRecord& r, std::size_t id) {
  FusedSample s;
  auto out = s.channels.begin();
  out = std::copy(r.emg.begin(), r.emg.end(), out);
  out = std::copy(r.accel.begin(), r.accel.end(), out);
  std::copy(r.gyro.begin(), r.gyro.end(), out);
  s.label = r.label;
  s.id = id;
  s.pose = r.myo_pose;
  return s;
}

struct LabeledDataset {
  std::vector<FusedSample> samples;
  std::string source;
  std::optional<std::uint64_t> seed;

  [[nodiscard]] std::size_t size() const { return samples.size(); }
  [[nodiscard]] bool empty() const { return samples.empty(); }

  /// Per-label counts; unlabeled samples are not counted.
  [[nodiscard]] std::map<int, std::size_t> class_counts() const {
    std::map<int, std::size_t> counts;
    for (const auto& s : samples)
      if (s.label) ++counts[*s.label];
    return counts;
  }

  [[nodiscard]] std::size_t count(int label) const {
    const auto c = class_counts();
    const auto it = c.find(label);
    return it == c.end() ? 0 : it->second;
  }
};

/**
 * Row-major feature table shared by the kernel, SVM, anomaly and evaluation
 * code. Rows may be fused signals (14), GIST descriptors (512) or PCA scores.
 */
struct FeatureSet {
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  std::vector<std::size_t> ids;

  [[nodiscard]] std::size_t size() const { return rows.size(); }
  [[nodiscard]] bool empty() const { return rows.empty(); }
  [[nodiscard]] std::size_t dim() const { return rows.empty() ? 0 : rows.front().size(); }

  static FeatureSet from(const LabeledDataset& ds) {
    FeatureSet fs;
    fs.rows.reserve(ds.size());
    for (const auto& s : ds.samples) {
      if (!s.label) throw DataError("sample " + std::to_string(s.id) + " has no label");
      fs.rows.emplace_back(s.channels.begin(), s.channels.end());
      fs.labels.push_back(*s.label);
      fs.ids.push_back(s.id);
    }
    return fs;
  }

  /// Rows at `idx`, in that order.
  [[nodiscard]] FeatureSet subset(std::span<const std::size_t> idx) const {
    FeatureSet out;
    out.rows.reserve(idx.size());
    for (auto i : idx) {
      out.rows.push_back(rows[i]);
      out.labels.push_back(labels[i]);
      out.ids.push_back(ids[i]);
    }
    return out;
  }
};

inline const char* const kCsvHeader =
    "emg1,emg2,emg3,emg4,emg5,emg6,emg7,emg8,accel_x,accel_y,accel_z,gyro_x,gyro_y,gyro_z,pose,label";

namespace detail {

inline std::optional<int> parse_integral(std::string_view field) {
  const auto v = parse_double(field);
  if (!v || !std::isfinite(*v) || std::floor(*v) != *v) return std::nullopt;
  if (std::fabs(*v) > 2147483647.0) return std::nullopt;
  return static_cast<int>(*v);
}

[[noreturn]] inline void row_error(std::size_t row, const std::string& reason) {
  throw DataError("row " + std::to_string(row) + ": " + reason);
}

} // namespace detail

/**
 * Parses 16-column sensor records. Rows are numbered from 1 counting the header,
 * so error messages point at the line in the file. Lines starting with '#' are
 * comments.
 */
inline LabeledDataset read_csv(std::istream& in, bool has_header, std::string source = "<stream>") {
  LabeledDataset ds;
  ds.source = std::move(source);
  std::string line;
  std::size_t row = 0;
  bool header_pending = has_header;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty() || trim(line).front() == '#') continue;
    if (header_pending) {
      header_pending = false;
      continue;
    }
    const auto fields = split_view(trim(line), ',');
    if (fields.size() != kRecordColumns)
      detail::row_error(row, "wrong column count (expected 16, got " + std::to_string(fields.size()) + ")");

    SensorRecord rec;
    std::array<double, kFusedChannels> vals{};
    for (std::size_t c = 0; c < kFusedChannels; ++c) {
      const auto v = parse_double(fields[c]);
      if (!v) detail::row_error(row, "malformed numeric field in column " + std::to_string(c + 1));
      if (!std::isfinite(*v)) detail::row_error(row, "non-finite value in column " + std::to_string(c + 1));
      vals[c] = *v;
    }
    std::copy_n(vals.begin(), kEmgChannels, rec.emg.begin());
    std::copy_n(vals.begin() + kEmgChannels, kAccelChannels, rec.accel.begin());
    std::copy_n(vals.begin() + kEmgChannels + kAccelChannels, kGyroChannels, rec.gyro.begin());

    const auto pose = detail::parse_integral(fields[kFusedChannels]);
    if (!pose) detail::row_error(row, "malformed pose code in column 15");
    rec.myo_pose = *pose;

    FusedSample s;
    if (trim(fields[kFusedChannels + 1]).empty()) {
      s = fuse(rec, ds.samples.size());
      s.label.reset();
    } else {
      const auto label = detail::parse_integral(fields[kFusedChannels + 1]);
      if (!label) detail::row_error(row, "malformed label in column 16");
      if (*label != 0 && *label != 1) detail::row_error(row, "non-binary label " + std::to_string(*label));
      rec.label = *label;
      s = fuse(rec, ds.samples.size());
    }
    ds.samples.push_back(s);
  }
  return ds;
}

inline LabeledDataset load_csv(const std::string& path, bool has_header) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return read_csv(in, has_header, path);
}

inline void write_csv(std::ostream& out, const LabeledDataset& ds, bool with_header = true) {
  if (with_header) out << kCsvHeader << '\n';
  for (const auto& s : ds.samples) {
    for (double v : s.channels) out << format_double(v) << ',';
    out << s.pose << ',';
    if (s.label) out << *s.label;
    out << '\n';
  }
}

inline void save_csv(const LabeledDataset& ds, const std::string& path, bool with_header = true) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  write_csv(out, ds, with_header);
  if (!out) throw DataError("write failed for " + path);
}

/**
 * Stratified split. For each class the test share is floor(n_c * (1 - f)),
 * the remainder goes to train, and both sides keep at least one sample of the
 * class. Samples keep their source ids so the two halves can be matched back
 * to the input.
 */
inline std::pair<LabeledDataset, LabeledDataset> split(const LabeledDataset& ds, double train_fraction,
                                                       std::uint64_t seed) {
  if (ds.empty()) throw UsageError("split: empty dataset");
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw UsageError("split: train_fraction must lie in (0,1)");

  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (!ds.samples[i].label) throw DataError("split: sample " + std::to_string(ds.samples[i].id) + " has no label");
    by_class[*ds.samples[i].label].push_back(i);
  }

  Rng rng(seed);
  std::vector<std::size_t> train_idx, test_idx;
  for (auto& [label, idx] : by_class) {
    if (idx.size() < 2)
      throw DataError("split: class " + std::to_string(label) + " has fewer than 2 samples; cannot stratify");
    stable_shuffle(idx, rng);
    const double n = static_cast<double>(idx.size());
    auto n_test = static_cast<std::size_t>(std::floor(n * (1.0 - train_fraction) + 1e-9));
    n_test = std::clamp<std::size_t>(n_test, 1, idx.size() - 1);
    const std::size_t n_train = idx.size() - n_test;
    train_idx.insert(train_idx.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    test_idx.insert(test_idx.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());

  auto take = [&](const std::vector<std::size_t>& idx, const char* tag) {
    LabeledDataset out;
    out.source = ds.source + "#" + tag;
    out.seed = seed;
    out.samples.reserve(idx.size());
    for (auto i : idx) out.samples.push_back(ds.samples[i]);
    return out;
  };
  return {take(train_idx, "train"), take(test_idx, "test")};
}

/// Parameters for the two-class Gaussian generator.
struct SynthSpec {
  std::size_t n_per_class = 100;
  std::array<Channels, 2> class_means{};
  double noise_std = 1.0;
  std::uint64_t seed = 0;

  /**
   * Default layout: a shared baseline profile with class 1 displaced along a
   * fixed alternating-sign direction so the two classes differ in shape, not
   * just in level. Mean distance = separation * noise_std.
   */
  static SynthSpec separated(double separation, double noise_std, std::size_t n_per_class, std::uint64_t seed) {
    SynthSpec s;
    s.n_per_class = n_per_class;
    s.noise_std = noise_std;
    s.seed = seed;
    Channels dir{};
    double norm = 0.0;
    for (std::size_t k = 0; k < kFusedChannels; ++k) {
      s.class_means[0][k] = 20.0 + 4.0 * std::sin(2.0 * M_PI * static_cast<double>(k) / kFusedChannels);
      dir[k] = (k % 2 == 0 ? 1.0 : -1.0) * (1.0 + 0.5 * static_cast<double>(k % 3));
      norm += dir[k] * dir[k];
    }
    norm = std::sqrt(norm);
    for (std::size_t k = 0; k < kFusedChannels; ++k)
      s.class_means[1][k] = s.class_means[0][k] + separation * noise_std * dir[k] / norm;
    return s;
  }
};

/// Class-0 block followed by class-1 block; ids run 0..2n-1.
inline LabeledDataset synthesize(const SynthSpec& spec) {
  if (!(spec.noise_std >= 0.0)) throw UsageError("synthesize: noise_std must be >= 0");
  if (spec.n_per_class < 1) throw UsageError("synthesize: n_per_class must be >= 1");
  LabeledDataset ds;
  ds.source = "synth";
  ds.seed = spec.seed;
  Rng rng(spec.seed);
  for (int c = 0; c < 2; ++c) {
    for (std::size_t i = 0; i < spec.n_per_class; ++i) {
      FusedSample s;
      for (std::size_t k = 0; k < kFusedChannels; ++k) {
        const double z = standard_normal(rng);
        s.channels[k] = spec.noise_std == 0.0 ? spec.class_means[c][k] : spec.class_means[c][k] + spec.noise_std * z;
      }
      s.label = c;
      s.id = ds.samples.size();
      ds.samples.push_back(s);
    }
  }
  return ds;
}

} // namespace fusegram
