#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "wtcf/rng.hpp"

namespace wtcf {

enum class AnomalyType { point, contextual, collective };

std::string to_string(AnomalyType t);
std::optional<AnomalyType> anomaly_type_from_string(const std::string& s);

struct DataPoint {
  std::int64_t timestamp = 0;  // opaque ordering key
  double value = 0.0;
  bool is_anomaly = false;
  std::optional<AnomalyType> anomaly_type;  // synthetic corpora only

  bool operator==(const DataPoint&) const = default;
};

// One measurement file: non-empty, timestamps strictly increasing.
struct TimeSeriesFile {
  std::string file_id;
  std::vector<DataPoint> points;

  bool operator==(const TimeSeriesFile&) const = default;
};

struct SyntheticSpec {
  int num_files = 67;
  int points_per_file = 1500;
  std::uint64_t seed = 1;

  // base signal: level + amplitude * sin(2*pi*t/period) + N(0, noise_std)
  double level = 100.0;
  double amplitude = 30.0;
  double noise_std = 3.0;

  // expected fraction of points carrying each anomaly class
  double point_rate = 0.004;
  double contextual_rate = 0.004;
  double collective_rate = 0.012;

  int collective_len_min = 8;
  int collective_len_max = 16;
  double contextual_shift_sigma = 5.0;  // local deviation in noise std-devs, >= 4

  void validate() const;  // throws usage_error on violated invariants
};

struct DatasetStats {
  std::size_t num_files = 0;
  std::size_t total_points = 0;
  std::size_t anomalous_points = 0;
  double anomalous_fraction = 0.0;
};

// Loads one CSV (header `timestamp,value,is_anomaly[,anomaly_type]`, any
// column order). Malformed rows raise a data error with the line number;
// non-monotone timestamps or an empty data section raise integrity errors.
TimeSeriesFile load_csv(const std::filesystem::path& path);

void save_csv(const TimeSeriesFile& file, const std::filesystem::path& path);

// All *.csv files of a directory, sorted by filename.
std::vector<TimeSeriesFile> load_corpus_dir(const std::filesystem::path& dir);

// Deterministic labeled corpus with the three anomaly classes injected at
// the configured rates. Pure function of the spec, seed included.
std::vector<TimeSeriesFile> generate_synthetic(const SyntheticSpec& spec);

DatasetStats dataset_stats(const std::vector<TimeSeriesFile>& files);

}  // namespace wtcf
