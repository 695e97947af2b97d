#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "wtcf/model.hpp"
#include "wtcf/windowing.hpp"

namespace wtcf {

// Positive class = anomalous, everywhere.
struct ConfusionMatrix {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t tn = 0;

  std::int64_t total() const { return tp + fp + fn + tn; }
};

ConfusionMatrix confusion(const std::vector<bool>& predicted, const std::vector<bool>& truth);

// Fractions in [0,1]; a zero denominator yields 0 with the corresponding
// flag cleared so cross-validation folds never crash.
struct MetricSet {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool precision_defined = true;
  bool recall_defined = true;
  bool f1_defined = true;
};

MetricSet metrics(const ConfusionMatrix& cm);

struct PositionGroup {
  int from = 0;  // inclusive
  int to = 0;    // inclusive
  std::int64_t count = 0;
  double percent = 0.0;
};

// Where the anomalies sat inside windows the model missed: every anomaly
// position of every misclassified anomalous window increments its bin.
struct PositionAnalysis {
  std::vector<std::int64_t> histogram;  // one bin per window offset
  std::vector<PositionGroup> groups;    // 10-wide
  std::int64_t total = 0;
};

PositionAnalysis position_analysis(const std::vector<WindowSample>& misclassified,
                                   int window_length);

// Anomaly classes of missed windows; one count per distinct class a window
// contains. Unavailable for untyped (real) corpora.
struct TypeAnalysis {
  bool available = false;
  std::int64_t point = 0;
  std::int64_t contextual = 0;
  std::int64_t collective = 0;
};

TypeAnalysis type_analysis(const std::vector<WindowSample>& misclassified,
                           const std::vector<WindowSample>& corpus);

struct EvalReport {
  ConfusionMatrix confusion;
  MetricSet metrics;
  PositionAnalysis positions;
  TypeAnalysis types;
};

// Pure assembly from predictions; the model-driven overload batches
// prediction itself.
EvalReport evaluate_predictions(const std::vector<WindowSample>& windows,
                                const std::vector<std::size_t>& indices,
                                const std::vector<bool>& predicted, int window_length);
EvalReport evaluate(const Model& model, const std::vector<WindowSample>& windows,
                    const std::vector<std::size_t>& indices, double threshold,
                    int batch_size = 512);

struct FoldResult {
  int fold = 0;
  bool excluded = false;  // train side held a single class
  std::string note;
  ConfusionMatrix confusion;
  MetricSet metrics;
};

struct CvReport {
  std::vector<FoldResult> folds;
  MetricSet mean;  // over included folds
  int included = 0;
};

// Trains k independent models (per-fold seeds derived from the train seed)
// and averages the metrics of the folds that could be trained.
CvReport cross_validate(const std::vector<WindowSample>& corpus, const ModelConfig& mcfg,
                        const TrainConfig& tcfg, int k, std::uint64_t split_seed);

struct AblationRow {
  ModelVariant variant;
  ConfusionMatrix confusion;
  MetricSet metrics;
};

struct AblationReport {
  std::vector<AblationRow> rows;  // cnn_only, transformer_only, full
};

// Trains the three variants with identical seeds and splits.
AblationReport ablation_report(const std::vector<WindowSample>& corpus, const ModelConfig& mcfg,
                               const TrainConfig& tcfg, double ratio, std::uint64_t split_seed);

// Renderers. JSON documents are assembled by the CLI; these produce the
// human-readable views.
std::string pretty_metrics_table(const ConfusionMatrix& cm, const MetricSet& m);
std::string pretty_position_table(const PositionAnalysis& p);
std::string pretty_type_table(const TypeAnalysis& t);
std::string pretty_cv_table(const CvReport& r);
std::string pretty_ablation_table(const AblationReport& r);

// Simple bar-chart rendering of the position histogram.
void write_position_histogram_svg(const PositionAnalysis& p, const std::filesystem::path& path);

}  // namespace wtcf
