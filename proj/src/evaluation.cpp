#include "wtcf/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "wtcf/common.hpp"

namespace wtcf {

ConfusionMatrix confusion(const std::vector<bool>& predicted, const std::vector<bool>& truth) {
  if (predicted.size() != truth.size())
    throw usage_error("confusion: " + std::to_string(predicted.size()) + " predictions vs " +
                      std::to_string(truth.size()) + " labels");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i])
      predicted[i] ? ++cm.tp : ++cm.fn;
    else
      predicted[i] ? ++cm.fp : ++cm.tn;
  }
  return cm;
}

MetricSet metrics(const ConfusionMatrix& cm) {
  if (cm.tp < 0 || cm.fp < 0 || cm.fn < 0 || cm.tn < 0)
    throw usage_error("metrics: negative counts");
  MetricSet m;
  const auto total = cm.total();
  m.accuracy = total > 0 ? static_cast<double>(cm.tp + cm.tn) / static_cast<double>(total) : 0.0;
  if (cm.tp + cm.fp > 0) {
    m.precision = static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fp);
  } else {
    m.precision_defined = false;
  }
  if (cm.tp + cm.fn > 0) {
    m.recall = static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fn);
  } else {
    m.recall_defined = false;
  }
  if (m.precision_defined && m.recall_defined && m.precision + m.recall > 0.0) {
    m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
  } else {
    m.f1_defined = false;
  }
  return m;
}

PositionAnalysis position_analysis(const std::vector<WindowSample>& misclassified,
                                   int window_length) {
  if (window_length < 1) throw usage_error("position_analysis: window_length must be >= 1");
  PositionAnalysis out;
  out.histogram.assign(static_cast<std::size_t>(window_length), 0);
  for (const auto& w : misclassified)
    for (int pos : w.anomaly_positions) {
      if (pos < 0 || pos >= window_length)
        throw usage_error("position_analysis: offset " + std::to_string(pos) +
                          " outside window of length " + std::to_string(window_length));
      ++out.histogram[static_cast<std::size_t>(pos)];
      ++out.total;
    }
  for (int from = 0; from < window_length; from += 10) {
    PositionGroup g;
    g.from = from;
    g.to = std::min(from + 9, window_length - 1);
    for (int p = g.from; p <= g.to; ++p) g.count += out.histogram[static_cast<std::size_t>(p)];
    g.percent = out.total > 0
                    ? 100.0 * static_cast<double>(g.count) / static_cast<double>(out.total)
                    : 0.0;
    out.groups.push_back(g);
  }
  return out;
}

TypeAnalysis type_analysis(const std::vector<WindowSample>& misclassified,
                           const std::vector<WindowSample>& corpus) {
  TypeAnalysis out;
  out.available = std::any_of(corpus.begin(), corpus.end(),
                              [](const WindowSample& w) { return !w.anomaly_types.empty(); });
  if (!out.available) return out;
  for (const auto& w : misclassified) {
    std::set<AnomalyType> distinct(w.anomaly_types.begin(), w.anomaly_types.end());
    for (AnomalyType t : distinct) {
      switch (t) {
        case AnomalyType::point: ++out.point; break;
        case AnomalyType::contextual: ++out.contextual; break;
        case AnomalyType::collective: ++out.collective; break;
      }
    }
  }
  return out;
}

EvalReport evaluate_predictions(const std::vector<WindowSample>& windows,
                                const std::vector<std::size_t>& indices,
                                const std::vector<bool>& predicted, int window_length) {
  if (indices.size() != predicted.size())
    throw usage_error("evaluate: " + std::to_string(predicted.size()) + " predictions for " +
                      std::to_string(indices.size()) + " windows");
  std::vector<bool> truth(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) truth[i] = windows[indices[i]].label;

  EvalReport report;
  report.confusion = confusion(predicted, truth);
  report.metrics = metrics(report.confusion);

  std::vector<WindowSample> missed;  // anomalous windows predicted normal
  for (std::size_t i = 0; i < indices.size(); ++i)
    if (truth[i] && !predicted[i]) missed.push_back(windows[indices[i]]);
  report.positions = position_analysis(missed, window_length);
  report.types = type_analysis(missed, windows);
  return report;
}

EvalReport evaluate(const Model& model, const std::vector<WindowSample>& windows,
                    const std::vector<std::size_t>& indices, double threshold, int batch_size) {
  const Predictions pred = predict(model, windows, indices, threshold, batch_size);
  return evaluate_predictions(windows, indices, pred.labels, model.config().window_length);
}

// ---------------------------------------------------------------------------
// cross-validation / ablation

CvReport cross_validate(const std::vector<WindowSample>& corpus, const ModelConfig& mcfg,
                        const TrainConfig& tcfg, int k, std::uint64_t split_seed) {
  const auto folds = k_fold_split(corpus.size(), k, split_seed);
  CvReport report;
  double acc = 0, prec = 0, rec = 0, f1 = 0;
  const Rng seed_root(tcfg.seed);

  for (int f = 0; f < k; ++f) {
    FoldResult fr;
    fr.fold = f;
    std::vector<std::size_t> train_idx;
    for (int other = 0; other < k; ++other)
      if (other != f)
        train_idx.insert(train_idx.end(), folds[static_cast<std::size_t>(other)].begin(),
                         folds[static_cast<std::size_t>(other)].end());
    const auto& test_idx = folds[static_cast<std::size_t>(f)];

    std::size_t positives = 0;
    for (auto i : train_idx) positives += corpus[i].label ? 1 : 0;
    if (positives == 0 || positives == train_idx.size()) {
      fr.excluded = true;
      fr.note = "training side holds a single class; fold skipped";
      report.folds.push_back(fr);
      continue;
    }

    TrainConfig fold_tc = tcfg;
    fold_tc.seed = seed_root.derive(static_cast<std::uint64_t>(f) + 1).seed();
    Rng model_rng(fold_tc.seed);
    Model model(mcfg, model_rng);
    train(model, corpus, train_idx, corpus, test_idx, fold_tc);
    const EvalReport ev = evaluate(model, corpus, test_idx, fold_tc.threshold, fold_tc.batch_size);
    fr.confusion = ev.confusion;
    fr.metrics = ev.metrics;
    report.folds.push_back(fr);
    acc += ev.metrics.accuracy;
    prec += ev.metrics.precision;
    rec += ev.metrics.recall;
    f1 += ev.metrics.f1;
    ++report.included;
  }
  if (report.included > 0) {
    const double n = report.included;
    report.mean.accuracy = acc / n;
    report.mean.precision = prec / n;
    report.mean.recall = rec / n;
    report.mean.f1 = f1 / n;
  }
  return report;
}

AblationReport ablation_report(const std::vector<WindowSample>& corpus, const ModelConfig& mcfg,
                               const TrainConfig& tcfg, double ratio, std::uint64_t split_seed) {
  const HoldOutSplit split = hold_out_split(corpus.size(), ratio, split_seed);
  AblationReport report;
  for (ModelVariant v :
       {ModelVariant::cnn_only, ModelVariant::transformer_only, ModelVariant::full}) {
    ModelConfig cfg = mcfg;
    cfg.variant = v;
    Rng model_rng(tcfg.seed);
    Model model(cfg, model_rng);
    train(model, corpus, split.train, corpus, split.test, tcfg);
    const EvalReport ev = evaluate(model, corpus, split.test, tcfg.threshold, tcfg.batch_size);
    report.rows.push_back({v, ev.confusion, ev.metrics});
  }
  return report;
}

// ---------------------------------------------------------------------------
// rendering

namespace {

std::string pct(double fraction, bool defined = true) {
  if (!defined) return "   n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%6.2f", 100.0 * fraction);
  return buf;
}

}  // namespace

std::string pretty_metrics_table(const ConfusionMatrix& cm, const MetricSet& m) {
  std::ostringstream os;
  os << "confusion matrix (positive = anomalous)\n";
  os << "              predicted+   predicted-\n";
  char buf[96];
  std::snprintf(buf, sizeof buf, "  actual+  %11lld  %11lld\n", static_cast<long long>(cm.tp),
                static_cast<long long>(cm.fn));
  os << buf;
  std::snprintf(buf, sizeof buf, "  actual-  %11lld  %11lld\n", static_cast<long long>(cm.fp),
                static_cast<long long>(cm.tn));
  os << buf;
  os << "metrics (%)\n";
  os << "  accuracy  " << pct(m.accuracy) << "\n";
  os << "  precision " << pct(m.precision, m.precision_defined)
     << (m.precision_defined ? "" : "  (no positive predictions)") << "\n";
  os << "  recall    " << pct(m.recall, m.recall_defined)
     << (m.recall_defined ? "" : "  (no positive windows)") << "\n";
  os << "  f1        " << pct(m.f1, m.f1_defined) << (m.f1_defined ? "" : "  (undefined)") << "\n";
  return os.str();
}

std::string pretty_position_table(const PositionAnalysis& p) {
  std::ostringstream os;
  os << "missed-anomaly positions (grouped by 10)\n";
  for (const auto& g : p.groups) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "  %2d-%2d  %8lld  %6.2f%%\n", g.from, g.to,
                  static_cast<long long>(g.count), g.percent);
    os << buf;
  }
  os << "  total  " << p.total << " positions\n";
  return os.str();
}

std::string pretty_type_table(const TypeAnalysis& t) {
  std::ostringstream os;
  os << "missed windows by anomaly class\n";
  if (!t.available) {
    os << "  unavailable (corpus carries no anomaly class tags)\n";
    return os.str();
  }
  os << "  point       " << t.point << "\n";
  os << "  contextual  " << t.contextual << "\n";
  os << "  collective  " << t.collective << "\n";
  return os.str();
}

std::string pretty_cv_table(const CvReport& r) {
  std::ostringstream os;
  os << "fold   accuracy  precision  recall     f1\n";
  for (const auto& f : r.folds) {
    if (f.excluded) {
      os << "  " << f.fold << "    excluded: " << f.note << "\n";
      continue;
    }
    char buf[96];
    std::snprintf(buf, sizeof buf, "  %2d   %8.2f  %9.2f  %6.2f  %6.2f\n", f.fold,
                  100.0 * f.metrics.accuracy, 100.0 * f.metrics.precision,
                  100.0 * f.metrics.recall, 100.0 * f.metrics.f1);
    os << buf;
  }
  char buf[96];
  std::snprintf(buf, sizeof buf, "mean   %8.2f  %9.2f  %6.2f  %6.2f   (%d folds)\n",
                100.0 * r.mean.accuracy, 100.0 * r.mean.precision, 100.0 * r.mean.recall,
                100.0 * r.mean.f1, r.included);
  os << buf;
  return os.str();
}

std::string pretty_ablation_table(const AblationReport& r) {
  std::ostringstream os;
  os << "variant            accuracy  precision  recall     f1   (%)\n";
  for (const auto& row : r.rows) {
    char buf[120];
    std::snprintf(buf, sizeof buf, "%-18s %8.2f  %9.2f  %6.2f  %6.2f\n",
                  to_string(row.variant).c_str(), 100.0 * row.metrics.accuracy,
                  100.0 * row.metrics.precision, 100.0 * row.metrics.recall,
                  100.0 * row.metrics.f1);
    os << buf;
  }
  return os.str();
}

void write_position_histogram_svg(const PositionAnalysis& p, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw data_error("cannot write " + path.string());
  const int n = static_cast<int>(p.histogram.size());
  const int bar_w = 12, gap = 2, height = 220, margin = 30;
  const int width = margin * 2 + n * (bar_w + gap);
  std::int64_t peak = 1;
  for (auto c : p.histogram) peak = std::max(peak, c);

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << height + 2 * margin << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (int i = 0; i < n; ++i) {
    const double frac = static_cast<double>(p.histogram[static_cast<std::size_t>(i)]) /
                        static_cast<double>(peak);
    const int h = static_cast<int>(std::lround(frac * height));
    const int x = margin + i * (bar_w + gap);
    const int y = margin + height - h;
    out << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << bar_w << "\" height=\"" << h
        << "\" fill=\"#4878a8\"/>\n";
    if (i % 10 == 0)
      out << "<text x=\"" << x << "\" y=\"" << margin + height + 16
          << "\" font-size=\"11\" font-family=\"sans-serif\">" << i << "</text>\n";
  }
  out << "<text x=\"" << margin << "\" y=\"18\" font-size=\"12\" font-family=\"sans-serif\">"
      << "missed anomaly positions (peak " << peak << ")</text>\n";
  out << "</svg>\n";
  if (!out) throw data_error("write failed for " + path.string());
}

}  // namespace wtcf
