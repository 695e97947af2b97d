#include "wtcf/windowing.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>

#include "wtcf/common.hpp"

static_assert(std::endian::native == std::endian::little,
              "window cache and weight files assume a little-endian host");

namespace wtcf {

void WindowConfig::validate() const {
  if (length < 1) throw usage_error("window config: length must be >= 1");
  if (step < 1) throw usage_error("window config: step must be >= 1");
  if (min_anomalous_points < 1)
    throw usage_error("window config: min_anomalous_points must be >= 1");
}

void SplitSpec::validate() const {
  if (mode == Mode::hold_out && !(ratio > 0.0 && ratio < 1.0))
    throw usage_error("split: hold-out ratio must lie in (0,1)");
  if (mode == Mode::k_fold && k < 2) throw usage_error("split: k must be >= 2");
}

std::int64_t window_count(std::int64_t n, int w, int s) {
  if (w < 1 || s < 1) throw usage_error("window_count: w and s must be >= 1");
  if (n < w) return 0;
  return (n - w) / s + 1;
}

std::vector<WindowSample> slide(const TimeSeriesFile& series, const WindowConfig& cfg) {
  cfg.validate();
  const auto n = static_cast<std::int64_t>(series.points.size());
  const std::int64_t count = window_count(n, cfg.length, cfg.step);
  std::vector<WindowSample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (std::int64_t wi = 0; wi < count; ++wi) {
    const std::int64_t start = wi * cfg.step;  // 0-based into points
    WindowSample s;
    s.file_id = series.file_id;
    s.start_index = start + 1;
    s.values.resize(static_cast<std::size_t>(cfg.length));
    for (int j = 0; j < cfg.length; ++j) {
      const DataPoint& p = series.points[static_cast<std::size_t>(start + j)];
      s.values[static_cast<std::size_t>(j)] = p.value;
      if (p.is_anomaly) {
        s.anomaly_positions.push_back(j);
        if (p.anomaly_type) s.anomaly_types.push_back(*p.anomaly_type);
      }
    }
    s.label = static_cast<int>(s.anomaly_positions.size()) >= cfg.min_anomalous_points;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<double> normalize_window(const std::vector<double>& values,
                                     const NormalizationParams& params) {
  if (params.x_min > params.x_max)
    throw usage_error("normalize: x_min exceeds x_max");
  std::vector<double> out(values.size());
  const double range = params.x_max - params.x_min;
  if (range == 0.0) return out;  // degenerate rule: constant file -> all zeros
  for (std::size_t i = 0; i < values.size(); ++i)
    out[i] = std::clamp((values[i] - params.x_min) / range, 0.0, 1.0);
  return out;
}

NormalizationParams file_range(const TimeSeriesFile& series) {
  if (series.points.empty()) throw data_error("file_range: empty series");
  NormalizationParams p{series.points[0].value, series.points[0].value};
  for (const auto& pt : series.points) {
    p.x_min = std::min(p.x_min, pt.value);
    p.x_max = std::max(p.x_max, pt.value);
  }
  return p;
}

std::vector<WindowSample> build_corpus(const std::vector<TimeSeriesFile>& files,
                                       const WindowConfig& cfg,
                                       std::vector<std::string>* warnings) {
  std::vector<WindowSample> corpus;
  for (const auto& file : files) {
    if (static_cast<int>(file.points.size()) < cfg.length) {
      if (warnings)
        warnings->push_back(file.file_id + ": " + std::to_string(file.points.size()) +
                            " points is shorter than the window (" +
                            std::to_string(cfg.length) + "); no windows produced");
      continue;
    }
    const NormalizationParams params = file_range(file);
    for (auto& w : slide(file, cfg)) {
      w.values = normalize_window(w.values, params);
      corpus.push_back(std::move(w));
    }
  }
  return corpus;
}

HoldOutSplit hold_out_split(std::size_t n, double ratio, std::uint64_t seed) {
  if (n < 2) throw usage_error("split: need at least 2 samples");
  if (!(ratio > 0.0 && ratio < 1.0)) throw usage_error("split: ratio must lie in (0,1)");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  rng.shuffle(idx);
  const auto cut = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
  HoldOutSplit split;
  split.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(cut));
  split.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(cut), idx.end());
  return split;
}

std::vector<std::vector<std::size_t>> k_fold_split(std::size_t n, int k, std::uint64_t seed) {
  if (k < 2) throw usage_error("split: k must be >= 2");
  if (static_cast<std::size_t>(k) > n)
    throw usage_error("split: k = " + std::to_string(k) + " exceeds sample count " +
                      std::to_string(n));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  rng.shuffle(idx);
  std::vector<std::vector<std::size_t>> folds(static_cast<std::size_t>(k));
  const std::size_t base = n / static_cast<std::size_t>(k);
  const std::size_t extra = n % static_cast<std::size_t>(k);
  std::size_t at = 0;
  for (std::size_t f = 0; f < static_cast<std::size_t>(k); ++f) {
    const std::size_t len = base + (f < extra ? 1 : 0);
    folds[f].assign(idx.begin() + static_cast<std::ptrdiff_t>(at),
                    idx.begin() + static_cast<std::ptrdiff_t>(at + len));
    at += len;
  }
  return folds;
}

// ---------------------------------------------------------------------------
// binary cache

namespace {

constexpr char kCacheMagic[8] = {'W', 'T', 'C', 'F', 'W', 'I', 'N', '1'};

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::ifstream& in, const std::filesystem::path& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v))
    throw data_error("truncated window cache " + path.string());
  return v;
}

std::uint8_t type_code(AnomalyType t) { return static_cast<std::uint8_t>(t) + 1; }

AnomalyType type_from_code(std::uint8_t c, const std::filesystem::path& path) {
  if (c < 1 || c > 3) throw data_error("corrupt anomaly type in cache " + path.string());
  return static_cast<AnomalyType>(c - 1);
}

}  // namespace

void save_window_cache(const std::vector<WindowSample>& corpus, const WindowConfig& cfg,
                       const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot write " + path.string());
  out.write(kCacheMagic, sizeof kCacheMagic);
  put<std::uint32_t>(out, kArtifactFormatVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.length));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.step));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.min_anomalous_points));
  put<std::uint64_t>(out, corpus.size());

  // file table in first-appearance order
  std::vector<std::string> ids;
  std::map<std::string, std::uint32_t> id_index;
  for (const auto& w : corpus)
    if (id_index.emplace(w.file_id, static_cast<std::uint32_t>(ids.size())).second)
      ids.push_back(w.file_id);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ids.size()));
  for (const auto& id : ids) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(id.size()));
    out.write(id.data(), static_cast<std::streamsize>(id.size()));
  }

  const std::size_t w = static_cast<std::size_t>(cfg.length);
  std::vector<std::uint16_t> positions(w);
  std::vector<std::uint8_t> types(w);
  for (const auto& sample : corpus) {
    if (sample.values.size() != w)
      throw usage_error("window cache: sample width " + std::to_string(sample.values.size()) +
                        " does not match config length " + std::to_string(w));
    put<std::uint32_t>(out, id_index[sample.file_id]);
    put<std::int64_t>(out, sample.start_index);
    put<std::uint8_t>(out, sample.label ? 1 : 0);
    put<std::uint8_t>(out, sample.anomaly_types.empty() ? 0 : 1);
    put<std::uint16_t>(out, static_cast<std::uint16_t>(sample.anomaly_positions.size()));
    std::fill(positions.begin(), positions.end(), 0);
    std::fill(types.begin(), types.end(), 0);
    for (std::size_t i = 0; i < sample.anomaly_positions.size(); ++i) {
      positions[i] = static_cast<std::uint16_t>(sample.anomaly_positions[i]);
      if (i < sample.anomaly_types.size()) types[i] = type_code(sample.anomaly_types[i]);
    }
    out.write(reinterpret_cast<const char*>(positions.data()),
              static_cast<std::streamsize>(w * sizeof(std::uint16_t)));
    out.write(reinterpret_cast<const char*>(types.data()), static_cast<std::streamsize>(w));
    out.write(reinterpret_cast<const char*>(sample.values.data()),
              static_cast<std::streamsize>(w * sizeof(double)));
  }
  if (!out) throw data_error("write failed for " + path.string());
}

std::vector<WindowSample> load_window_cache(const std::filesystem::path& path, WindowConfig* cfg) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kCacheMagic, sizeof magic) != 0)
    throw data_error(path.string() + " is not a window cache");
  const auto version = get<std::uint32_t>(in, path);
  if (version != kArtifactFormatVersion)
    throw data_error("window cache " + path.string() + " has unsupported version " +
                     std::to_string(version));
  WindowConfig c;
  c.length = static_cast<int>(get<std::uint32_t>(in, path));
  c.step = static_cast<int>(get<std::uint32_t>(in, path));
  c.min_anomalous_points = static_cast<int>(get<std::uint32_t>(in, path));
  const auto count = get<std::uint64_t>(in, path);
  const auto id_count = get<std::uint32_t>(in, path);
  std::vector<std::string> ids(id_count);
  for (auto& id : ids) {
    const auto len = get<std::uint32_t>(in, path);
    id.resize(len);
    if (!in.read(id.data(), len)) throw data_error("truncated window cache " + path.string());
  }

  const std::size_t w = static_cast<std::size_t>(c.length);
  std::vector<std::uint16_t> positions(w);
  std::vector<std::uint8_t> types(w);
  std::vector<WindowSample> corpus;
  corpus.reserve(count);
  for (std::uint64_t s = 0; s < count; ++s) {
    WindowSample sample;
    const auto fid = get<std::uint32_t>(in, path);
    if (fid >= ids.size()) throw data_error("corrupt file index in cache " + path.string());
    sample.file_id = ids[fid];
    sample.start_index = get<std::int64_t>(in, path);
    sample.label = get<std::uint8_t>(in, path) != 0;
    const bool typed = get<std::uint8_t>(in, path) != 0;
    const auto pos_count = get<std::uint16_t>(in, path);
    if (pos_count > w) throw data_error("corrupt position count in cache " + path.string());
    if (!in.read(reinterpret_cast<char*>(positions.data()),
                 static_cast<std::streamsize>(w * sizeof(std::uint16_t))) ||
        !in.read(reinterpret_cast<char*>(types.data()), static_cast<std::streamsize>(w)))
      throw data_error("truncated window cache " + path.string());
    sample.values.resize(w);
    if (!in.read(reinterpret_cast<char*>(sample.values.data()),
                 static_cast<std::streamsize>(w * sizeof(double))))
      throw data_error("truncated window cache " + path.string());
    for (std::uint16_t i = 0; i < pos_count; ++i) {
      sample.anomaly_positions.push_back(positions[i]);
      if (typed) sample.anomaly_types.push_back(type_from_code(types[i], path));
    }
    corpus.push_back(std::move(sample));
  }
  if (cfg) *cfg = c;
  return corpus;
}

}  // namespace wtcf
