#include "wtcf/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "wtcf/common.hpp"

namespace wtcf {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;
constexpr int kDailyPeriod = 24;         // samples per cycle (hourly capture)
constexpr int kDefaultWindowLength = 60; // minimum usable file = 2 windows

}  // namespace

std::string to_string(AnomalyType t) {
  switch (t) {
    case AnomalyType::point: return "point";
    case AnomalyType::contextual: return "contextual";
    case AnomalyType::collective: return "collective";
  }
  return "?";
}

std::optional<AnomalyType> anomaly_type_from_string(const std::string& s) {
  if (s == "point") return AnomalyType::point;
  if (s == "contextual") return AnomalyType::contextual;
  if (s == "collective") return AnomalyType::collective;
  return std::nullopt;
}

void SyntheticSpec::validate() const {
  if (num_files < 1) throw usage_error("synthetic spec: num_files must be >= 1");
  if (points_per_file < 2 * kDefaultWindowLength)
    throw usage_error("synthetic spec: points_per_file must be >= " +
                      std::to_string(2 * kDefaultWindowLength));
  const double rates = point_rate + contextual_rate + collective_rate;
  if (point_rate < 0 || contextual_rate < 0 || collective_rate < 0 || rates > 0.2)
    throw usage_error("synthetic spec: anomaly rates must be >= 0 and sum to <= 0.2");
  if (collective_len_min < 2 || collective_len_max < collective_len_min)
    throw usage_error("synthetic spec: collective length range invalid");
  if (noise_std <= 0) throw usage_error("synthetic spec: noise_std must be > 0");
  if (contextual_shift_sigma < 4.0)
    throw usage_error("synthetic spec: contextual shift must be >= 4 noise std-devs");
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

[[noreturn]] void parse_fail(const std::filesystem::path& path, std::size_t line_no,
                             const std::string& what) {
  throw data_error(path.string() + ":" + std::to_string(line_no) + ": " + what);
}

}  // namespace

TimeSeriesFile load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw data_error(path.string() + ": empty file");
  const auto header = split_csv_line(strip_cr(line));
  int col_ts = -1, col_value = -1, col_flag = -1, col_type = -1;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == "timestamp") col_ts = static_cast<int>(i);
    else if (header[i] == "value") col_value = static_cast<int>(i);
    else if (header[i] == "is_anomaly") col_flag = static_cast<int>(i);
    else if (header[i] == "anomaly_type") col_type = static_cast<int>(i);
    else parse_fail(path, 1, "unknown header field '" + header[i] + "'");
  }
  if (col_ts < 0 || col_value < 0 || col_flag < 0)
    parse_fail(path, 1, "header must name timestamp, value and is_anomaly");

  TimeSeriesFile file;
  file.file_id = path.stem().string();
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size())
      parse_fail(path, line_no,
                 "expected " + std::to_string(header.size()) + " fields, got " +
                     std::to_string(fields.size()));

    DataPoint p;
    {
      const std::string& f = fields[static_cast<std::size_t>(col_ts)];
      char* end = nullptr;
      p.timestamp = std::strtoll(f.c_str(), &end, 10);
      if (f.empty() || end != f.c_str() + f.size())
        parse_fail(path, line_no, "bad timestamp '" + f + "'");
    }
    {
      const std::string& f = fields[static_cast<std::size_t>(col_value)];
      char* end = nullptr;
      p.value = std::strtod(f.c_str(), &end);
      if (f.empty() || end != f.c_str() + f.size() || !std::isfinite(p.value))
        parse_fail(path, line_no, "bad value '" + f + "'");
    }
    {
      const std::string& f = fields[static_cast<std::size_t>(col_flag)];
      if (f == "0") p.is_anomaly = false;
      else if (f == "1") p.is_anomaly = true;
      else parse_fail(path, line_no, "is_anomaly must be 0 or 1, got '" + f + "'");
    }
    if (col_type >= 0) {
      const std::string& f = fields[static_cast<std::size_t>(col_type)];
      if (!f.empty()) {
        p.anomaly_type = anomaly_type_from_string(f);
        if (!p.anomaly_type) parse_fail(path, line_no, "unknown anomaly_type '" + f + "'");
        if (!p.is_anomaly)
          parse_fail(path, line_no, "anomaly_type set on a row with is_anomaly=0");
      }
    }
    if (!file.points.empty() && p.timestamp <= file.points.back().timestamp)
      throw data_error(path.string() + ":" + std::to_string(line_no) +
                       ": timestamps not strictly increasing (" +
                       std::to_string(file.points.back().timestamp) + " then " +
                       std::to_string(p.timestamp) + ")");
    file.points.push_back(p);
  }
  if (file.points.empty()) throw data_error(path.string() + ": no data rows");
  return file;
}

void save_csv(const TimeSeriesFile& file, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw data_error("cannot write " + path.string());
  const bool typed = std::any_of(file.points.begin(), file.points.end(),
                                 [](const DataPoint& p) { return p.anomaly_type.has_value(); });
  out << (typed ? "timestamp,value,is_anomaly,anomaly_type\n" : "timestamp,value,is_anomaly\n");
  char buf[40];
  for (const auto& p : file.points) {
    std::snprintf(buf, sizeof buf, "%.17g", p.value);
    out << p.timestamp << ',' << buf << ',' << (p.is_anomaly ? '1' : '0');
    if (typed) {
      out << ',';
      if (p.anomaly_type) out << to_string(*p.anomaly_type);
    }
    out << '\n';
  }
  if (!out) throw data_error("write failed for " + path.string());
}

std::vector<TimeSeriesFile> load_corpus_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir))
    throw data_error(dir.string() + " is not a directory");
  std::vector<std::filesystem::path> paths;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".csv") paths.push_back(e.path());
  if (paths.empty()) throw data_error("no .csv files under " + dir.string());
  std::sort(paths.begin(), paths.end());
  std::vector<TimeSeriesFile> files;
  files.reserve(paths.size());
  for (const auto& p : paths) files.push_back(load_csv(p));
  return files;
}

// ---------------------------------------------------------------------------
// synthetic generator

namespace {

// Non-overlapping placement with one sample of margin so separate anomalies
// never merge into one window feature.
bool region_free(const std::vector<bool>& used, int from, int len) {
  const int lo = std::max(0, from - 1);
  const int hi = std::min<int>(static_cast<int>(used.size()), from + len + 1);
  for (int i = lo; i < hi; ++i)
    if (used[i]) return false;
  return true;
}

void mark_region(std::vector<bool>& used, int from, int len) {
  for (int i = from; i < from + len; ++i) used[static_cast<std::size_t>(i)] = true;
}

}  // namespace

std::vector<TimeSeriesFile> generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const Rng root(spec.seed);
  std::vector<TimeSeriesFile> files;
  files.reserve(static_cast<std::size_t>(spec.num_files));

  for (int f = 0; f < spec.num_files; ++f) {
    Rng rng = root.derive(static_cast<std::uint64_t>(f) + 1);
    const int n = spec.points_per_file;

    std::vector<double> expected(static_cast<std::size_t>(n));
    std::vector<double> value(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      expected[static_cast<std::size_t>(i)] =
          spec.level + spec.amplitude * std::sin(kTwoPi * i / kDailyPeriod);
      value[static_cast<std::size_t>(i)] =
          expected[static_cast<std::size_t>(i)] + spec.noise_std * rng.normal();
    }
    const auto [gmin_it, gmax_it] = std::minmax_element(value.begin(), value.end());
    const double gmin = *gmin_it, gmax = *gmax_it;

    std::vector<std::optional<AnomalyType>> label(static_cast<std::size_t>(n));
    std::vector<bool> used(static_cast<std::size_t>(n), false);

    // Collective runs: contiguous stretches that look plausible sample by
    // sample but break the periodic pattern (flattened or phase-inverted).
    const int collective_target =
        static_cast<int>(std::llround(spec.collective_rate * n));
    int covered = 0;
    int tries = 0;
    while (covered < collective_target && tries < 1000) {
      ++tries;
      const int remaining = collective_target - covered;
      if (remaining < spec.collective_len_min) break;
      // the final run is sized to land on the target instead of overshooting
      const int len = remaining <= spec.collective_len_max
                          ? remaining
                          : spec.collective_len_min +
                                static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(
                                    spec.collective_len_max - spec.collective_len_min + 1)));
      if (len > n) break;
      const int start = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n - len + 1)));
      if (!region_free(used, start, len)) continue;
      const bool flatten = rng.uniform() < 0.5;
      for (int i = start; i < start + len; ++i) {
        const double periodic = expected[static_cast<std::size_t>(i)] - spec.level;
        const double v = flatten ? spec.level + 0.3 * spec.noise_std * rng.normal()
                                 : spec.level - periodic + spec.noise_std * rng.normal();
        value[static_cast<std::size_t>(i)] = v;
        label[static_cast<std::size_t>(i)] = AnomalyType::collective;
      }
      mark_region(used, start, len);
      covered += len;
    }

    // Point anomalies: isolated spikes at least six noise std-devs away from
    // the local expectation.
    const int point_target = static_cast<int>(std::llround(spec.point_rate * n));
    for (int placed = 0, guard = 0; placed < point_target && guard < 10000; ++guard) {
      const int i = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n)));
      if (!region_free(used, i, 1)) continue;
      const double mag = rng.uniform(6.0, 10.0) * spec.noise_std;
      const double sign = rng.uniform() < 0.75 ? 1.0 : -1.0;  // traffic mostly surges
      value[static_cast<std::size_t>(i)] = expected[static_cast<std::size_t>(i)] + sign * mag;
      label[static_cast<std::size_t>(i)] = AnomalyType::point;
      mark_region(used, i, 1);
      ++placed;
    }

    // Contextual anomalies: stay inside the file's normal value range but
    // sit far from what the periodic pattern predicts locally.
    const int contextual_target =
        static_cast<int>(std::llround(spec.contextual_rate * n));
    for (int placed = 0, guard = 0; placed < contextual_target && guard < 10000; ++guard) {
      const int i = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n)));
      if (!region_free(used, i, 1)) continue;
      const double shift = spec.contextual_shift_sigma * spec.noise_std;
      const double e = expected[static_cast<std::size_t>(i)];
      const double up = e + shift, down = e - shift;
      double v;
      if (up <= gmax && (gmax - up >= down - gmin || down < gmin)) v = up;
      else if (down >= gmin) v = down;
      else v = std::clamp(up, gmin, gmax);
      value[static_cast<std::size_t>(i)] = v;
      label[static_cast<std::size_t>(i)] = AnomalyType::contextual;
      mark_region(used, i, 1);
      ++placed;
    }

    TimeSeriesFile file;
    char id[32];
    std::snprintf(id, sizeof id, "synthetic_%03d", f);
    file.file_id = id;
    file.points.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      DataPoint p;
      p.timestamp = i;
      p.value = value[static_cast<std::size_t>(i)];
      p.anomaly_type = label[static_cast<std::size_t>(i)];
      p.is_anomaly = p.anomaly_type.has_value();
      file.points.push_back(p);
    }
    files.push_back(std::move(file));
  }
  return files;
}

DatasetStats dataset_stats(const std::vector<TimeSeriesFile>& files) {
  if (files.empty()) throw data_error("dataset_stats: empty corpus");
  DatasetStats s;
  s.num_files = files.size();
  for (const auto& f : files) {
    s.total_points += f.points.size();
    for (const auto& p : f.points) s.anomalous_points += p.is_anomaly ? 1 : 0;
  }
  s.anomalous_fraction =
      s.total_points ? static_cast<double>(s.anomalous_points) / static_cast<double>(s.total_points)
                     : 0.0;
  return s;
}

}  // namespace wtcf
