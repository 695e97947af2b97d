#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "wtcf/dataset.hpp"
#include "wtcf/rng.hpp"

namespace wtcf {

struct WindowConfig {
  int length = 60;
  int step = 1;
  // A window is labeled anomalous when it holds at least this many flagged
  // points. 1 is the default rule; higher values exist for calibration.
  int min_anomalous_points = 1;

  void validate() const;
};

struct NormalizationParams {
  double x_min = 0.0;
  double x_max = 1.0;
};

// One fixed-length window. start_index is 1-based (the window at start i
// covers source points i .. i+w-1); anomaly offsets are 0-based within the
// window and strictly increasing.
struct WindowSample {
  std::string file_id;
  std::int64_t start_index = 1;
  std::vector<double> values;
  bool label = false;
  std::vector<int> anomaly_positions;
  std::vector<AnomalyType> anomaly_types;  // aligned with positions; empty if untyped
};

struct SplitSpec {
  enum class Mode { hold_out, k_fold };
  Mode mode = Mode::hold_out;
  double ratio = 0.7;  // hold-out train share
  int k = 10;          // fold count
  std::uint64_t seed = 1;

  void validate() const;
};

struct HoldOutSplit {
  std::vector<std::size_t> train;  // indices into the corpus
  std::vector<std::size_t> test;
};

// Number of windows a length-n series yields; 0 when n < w.
std::int64_t window_count(std::int64_t n, int w, int s);

// Raw (unnormalized) windows of one file; empty when the series is shorter
// than the window.
std::vector<WindowSample> slide(const TimeSeriesFile& series, const WindowConfig& cfg);

// Min-max to [0,1] with clamping; x_max == x_min maps everything to 0.
std::vector<double> normalize_window(const std::vector<double>& values,
                                     const NormalizationParams& params);

NormalizationParams file_range(const TimeSeriesFile& series);

// Slide + per-file min-max normalization + labeling over a whole corpus,
// in file order then start order. Files shorter than the window contribute
// nothing and leave a warning record when a sink is given.
std::vector<WindowSample> build_corpus(const std::vector<TimeSeriesFile>& files,
                                       const WindowConfig& cfg,
                                       std::vector<std::string>* warnings = nullptr);

HoldOutSplit hold_out_split(std::size_t n, double ratio, std::uint64_t seed);
std::vector<std::vector<std::size_t>> k_fold_split(std::size_t n, int k, std::uint64_t seed);

// Versioned binary cache of a built corpus; regeneration from the same CSV
// inputs and config writes byte-identical files.
void save_window_cache(const std::vector<WindowSample>& corpus, const WindowConfig& cfg,
                       const std::filesystem::path& path);
std::vector<WindowSample> load_window_cache(const std::filesystem::path& path, WindowConfig* cfg);

}  // namespace wtcf
