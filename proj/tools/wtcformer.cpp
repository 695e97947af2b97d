// wtcformer: train and evaluate the WT-CFormer web-traffic anomaly detector.
//
// Subcommands: synth, stats, train, eval, cv, ablate, gradcheck.
// Every output document embeds the resolved configuration, the seed, the
// artifact format version, and content hashes of the inputs it was computed
// from. Reports are machine-readable JSON by default; --pretty renders
// aligned tables instead. Exit codes: 0 ok, 1 usage/config, 2 data,
// 3 numeric failure.

#include <malloc.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "wtcf/common.hpp"
#include "wtcf/dataset.hpp"
#include "wtcf/evaluation.hpp"
#include "wtcf/gradcheck.hpp"
#include "wtcf/model.hpp"
#include "wtcf/windowing.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace wtcf;

namespace {

// ---------------------------------------------------------------------------
// run configuration: JSON file + flag overrides, unknown keys rejected

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  WindowConfig window;
  SplitSpec split;
};

void reject_unknown(const json& j, const std::string& scope,
                    std::initializer_list<const char*> known) {
  if (!j.is_object()) throw usage_error("config: '" + scope + "' must be an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw usage_error("config: unknown key '" + scope + "." + key + "'");
  }
}

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

RunConfig load_run_config(const std::string& path) {
  RunConfig rc;
  if (path.empty()) return rc;
  std::ifstream in(path);
  if (!in) throw usage_error("cannot open config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw usage_error("config " + path + ": " + e.what());
  }
  reject_unknown(j, "", {"model", "train", "window", "split"});
  if (j.contains("model")) {
    const json& m = j["model"];
    reject_unknown(m, "model",
                   {"variant", "conv1_channels", "conv2_channels", "conv_kernel", "conv_stride",
                    "conv_padding", "conv_activation", "pool_kernel", "pool_stride",
                    "encoder_layers", "heads", "ffn_dim", "dropout", "classifier_hidden",
                    "positional_encoding"});
    if (m.contains("variant")) rc.model.variant = model_variant_from_string(m["variant"]);
    maybe(m, "conv1_channels", rc.model.conv1_channels);
    maybe(m, "conv2_channels", rc.model.conv2_channels);
    maybe(m, "conv_kernel", rc.model.conv_kernel);
    maybe(m, "conv_stride", rc.model.conv_stride);
    maybe(m, "conv_padding", rc.model.conv_padding);
    if (m.contains("conv_activation")) {
      const std::string a = m["conv_activation"];
      if (a == "relu") rc.model.conv_activation = Activation::relu;
      else if (a == "tanh") rc.model.conv_activation = Activation::tanh;
      else throw usage_error("config: conv_activation must be relu or tanh, got '" + a + "'");
    }
    maybe(m, "pool_kernel", rc.model.pool_kernel);
    maybe(m, "pool_stride", rc.model.pool_stride);
    maybe(m, "encoder_layers", rc.model.encoder_layers);
    maybe(m, "heads", rc.model.heads);
    maybe(m, "ffn_dim", rc.model.ffn_dim);
    maybe(m, "dropout", rc.model.dropout);
    maybe(m, "classifier_hidden", rc.model.classifier_hidden);
    maybe(m, "positional_encoding", rc.model.positional_encoding);
  }
  if (j.contains("train")) {
    const json& t = j["train"];
    reject_unknown(t, "train",
                   {"epochs", "batch_size", "learning_rate", "seed", "pos_weight", "threshold"});
    maybe(t, "epochs", rc.train.epochs);
    maybe(t, "batch_size", rc.train.batch_size);
    maybe(t, "learning_rate", rc.train.learning_rate);
    maybe(t, "seed", rc.train.seed);
    maybe(t, "pos_weight", rc.train.pos_weight);
    maybe(t, "threshold", rc.train.threshold);
  }
  if (j.contains("window")) {
    const json& w = j["window"];
    reject_unknown(w, "window", {"length", "step", "min_anomalous_points"});
    maybe(w, "length", rc.window.length);
    maybe(w, "step", rc.window.step);
    maybe(w, "min_anomalous_points", rc.window.min_anomalous_points);
  }
  if (j.contains("split")) {
    const json& s = j["split"];
    reject_unknown(s, "split", {"mode", "ratio", "k", "seed"});
    if (s.contains("mode")) {
      const std::string m = s["mode"];
      if (m == "holdout") rc.split.mode = SplitSpec::Mode::hold_out;
      else if (m == "kfold") rc.split.mode = SplitSpec::Mode::k_fold;
      else throw usage_error("config: split.mode must be holdout or kfold, got '" + m + "'");
    }
    maybe(s, "ratio", rc.split.ratio);
    maybe(s, "k", rc.split.k);
    maybe(s, "seed", rc.split.seed);
  }
  return rc;
}

json config_json(const RunConfig& rc) {
  return json{
      {"model", json::parse(model_config_to_json(rc.model))},
      {"train",
       {{"epochs", rc.train.epochs},
        {"batch_size", rc.train.batch_size},
        {"learning_rate", rc.train.learning_rate},
        {"seed", rc.train.seed},
        {"pos_weight", rc.train.pos_weight},
        {"threshold", rc.train.threshold}}},
      {"window",
       {{"length", rc.window.length},
        {"step", rc.window.step},
        {"min_anomalous_points", rc.window.min_anomalous_points}}},
      {"split",
       {{"mode", rc.split.mode == SplitSpec::Mode::hold_out ? "holdout" : "kfold"},
        {"ratio", rc.split.ratio},
        {"k", rc.split.k},
        {"seed", rc.split.seed}}}};
}

json hash_inputs(const std::vector<fs::path>& paths) {
  json out = json::object();
  for (const auto& p : paths) out[p.string()] = to_hex(hash_file(p));
  return out;
}

std::vector<fs::path> csv_paths(const fs::path& dir) {
  std::vector<fs::path> paths;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".csv") paths.push_back(e.path());
  std::sort(paths.begin(), paths.end());
  return paths;
}

json provenance(const RunConfig& rc, std::uint64_t seed, const json& inputs) {
  return json{{"format_version", kArtifactFormatVersion},
              {"seed", seed},
              {"config", config_json(rc)},
              {"inputs", inputs}};
}

void emit(const json& doc, const std::string& out_path) {
  if (out_path.empty() || out_path == "-") {
    std::cout << doc.dump(2) << "\n";
    return;
  }
  std::ofstream out(out_path);
  if (!out) throw data_error("cannot write " + out_path);
  out << doc.dump(2) << "\n";
  if (!out) throw data_error("write failed for " + out_path);
}

// ---------------------------------------------------------------------------
// report serialization

json metrics_json(const ConfusionMatrix& cm, const MetricSet& m) {
  return json{{"confusion", {{"tp", cm.tp}, {"fp", cm.fp}, {"fn", cm.fn}, {"tn", cm.tn}}},
              {"metrics",
               {{"accuracy", m.accuracy},
                {"precision", m.precision},
                {"recall", m.recall},
                {"f1", m.f1},
                {"precision_defined", m.precision_defined},
                {"recall_defined", m.recall_defined},
                {"f1_defined", m.f1_defined}}}};
}

json eval_json(const EvalReport& r) {
  json doc = metrics_json(r.confusion, r.metrics);
  doc["position_histogram"] = r.positions.histogram;
  json groups = json::array();
  for (const auto& g : r.positions.groups)
    groups.push_back({{"from", g.from}, {"to", g.to}, {"count", g.count}, {"percent", g.percent}});
  doc["position_groups"] = groups;
  if (r.types.available)
    doc["type_breakdown"] = {{"point", r.types.point},
                             {"contextual", r.types.contextual},
                             {"collective", r.types.collective}};
  else
    doc["type_breakdown"] = nullptr;
  return doc;
}

// ---------------------------------------------------------------------------
// corpus plumbing shared by train/eval/cv/ablate

struct LoadedCorpus {
  std::vector<WindowSample> windows;
  json input_hashes;
};

LoadedCorpus load_windows(const std::string& data_dir, const WindowConfig& wc) {
  LoadedCorpus out;
  const auto files = load_corpus_dir(data_dir);
  std::vector<std::string> warnings;
  out.windows = build_corpus(files, wc, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  if (out.windows.empty())
    throw data_error("no windows: series under " + data_dir + " are shorter than the window");
  out.input_hashes = hash_inputs(csv_paths(data_dir));
  return out;
}

// ---------------------------------------------------------------------------
// gradcheck suite (finite differences over every layer plus the full model)

int cmd_gradcheck(bool pretty) {
  Rng rng(20240817);
  auto input = [&rng](Shape shape) {
    std::vector<double> v(static_cast<std::size_t>(numel(shape)));
    for (auto& x : v) {
      do {
        x = rng.uniform(-2.0, 2.0);
      } while (std::abs(x) < 1e-3);
    }
    return Tensor(std::move(shape), std::move(v), true);
  };

  struct Item {
    std::string name;
    double err;
    double tol;
  };
  std::vector<Item> items;
  auto check = [&](const std::string& name, double err, double tol) {
    items.push_back({name, err, tol});
  };

  {
    Tensor w = input({4, 3, 5});
    Tensor b = input({4});
    w.set_requires_grad(false);
    b.set_requires_grad(false);
    check("conv1d",
          grad_check([&](const Tensor& x) { return mean_all(conv1d(x, w, b, 1, 2)); },
                     input({2, 3, 11})),
          1e-6);
    check("conv1d_cl_relu",
          grad_check(
              [&](const Tensor& x) { return mean_all(conv1d_cl(x, w, b, 1, 2, FusedAct::relu)); },
              input({2, 11, 3})),
          1e-6);
  }
  check("maxpool1d",
        grad_check([](const Tensor& x) { return mean_all(maxpool1d(x, 5, 2)); },
                   input({2, 3, 13})),
        1e-6);
  {
    Tensor w = input({6, 5});
    Tensor b = input({5});
    w.set_requires_grad(false);
    b.set_requires_grad(false);
    check("linear_relu",
          grad_check(
              [&](const Tensor& x) { return mean_all(linear(x, w, b, FusedAct::relu)); },
              input({3, 4, 6})),
          1e-6);
  }
  {
    Tensor weights = input({4, 6});
    weights.set_requires_grad(false);
    check("softmax",
          grad_check(
              [&](const Tensor& x) { return mean_all(mul(softmax_lastdim(x, 0.5), weights)); },
              input({4, 6})),
          1e-6);
    Tensor gain = input({6});
    Tensor shift = input({6});
    gain.set_requires_grad(false);
    shift.set_requires_grad(false);
    check("layer_norm",
          grad_check(
              [&](const Tensor& x) {
                return mean_all(mul(layer_norm(x, gain, shift, 1e-5), weights));
              },
              input({4, 6})),
          1e-6);
  }
  {
    Rng layer_rng(7);
    EncoderLayer enc(8, 2, 16, 0.0, layer_rng);
    Rng unused(0);
    check("encoder_layer",
          grad_check(
              [&](const Tensor& x) { return mean_all(enc.forward(x, Mode::eval, unused)); },
              input({2, 3, 8})),
          1e-6);
  }
  {
    // compact full model, every stage live, 1-in-4 parameter subsample
    ModelConfig cfg;
    cfg.window_length = 20;
    cfg.conv1_channels = 8;
    cfg.conv2_channels = 8;
    cfg.heads = 2;
    cfg.ffn_dim = 16;
    cfg.classifier_hidden = 4;
    Rng model_rng(11);
    Model model(cfg, model_rng);
    std::vector<WindowSample> batch;
    Rng data_rng(13);
    for (int i = 0; i < 8; ++i) {
      WindowSample s;
      s.values.resize(20);
      for (auto& v : s.values) v = data_rng.uniform(0.0, 1.0);
      s.label = i % 2 == 0;
      batch.push_back(s);
    }
    std::vector<std::size_t> idx(batch.size());
    std::iota(idx.begin(), idx.end(), 0);
    Tensor x = batch_values(batch, idx);
    const auto y = batch_labels(batch, idx);
    auto loss = [&]() {
      Rng drop(99);
      return bce_loss(model.forward(x, Mode::train, drop), y, 1.0);
    };
    Rng pick(17);
    check("full_model", grad_check_params(loss, model.params(), 0.25, pick), 1e-4);
  }

  bool ok = true;
  json rows = json::array();
  for (const auto& it : items) {
    const bool pass = it.err < it.tol;
    ok = ok && pass;
    rows.push_back({{"check", it.name}, {"max_rel_err", it.err}, {"tolerance", it.tol},
                    {"pass", pass}});
    if (pretty)
      std::cout << (pass ? "PASS " : "FAIL ") << it.name << "  max_rel_err=" << it.err
                << "  tol=" << it.tol << "\n";
  }
  if (!pretty)
    std::cout << json{{"format_version", kArtifactFormatVersion}, {"checks", rows},
                      {"pass", ok}}
                     .dump(2)
              << "\n";
  if (!ok) throw numeric_error("gradient verification failed");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  // large reusable buffers churn every batch; keep them in the arena
  mallopt(M_MMAP_THRESHOLD, 512 * 1024 * 1024);
  mallopt(M_TRIM_THRESHOLD, 512 * 1024 * 1024);

  CLI::App app{"WT-CFormer web traffic anomaly detection"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_path, weights_path, spec_path, svg_path, history_path;
  std::string subset = "all";
  bool pretty = false;
  bool timings = false;

  // flag overrides; only values the user actually passed are applied
  int f_epochs = 0, f_batch = 0, f_k = 0, f_window = 0, f_step = 0, f_min_pts = 0;
  double f_lr = 0, f_ratio = 0, f_threshold = 0, f_pos_weight = 0, f_dropout = -1;
  std::uint64_t f_seed = 0, f_split_seed = 0;
  std::string f_variant;
  bool f_pos_enc = false;

  auto add_common = [&](CLI::App* cmd, bool with_model_flags) {
    cmd->add_option("--config", config_path, "JSON config file");
    cmd->add_flag("--pretty", pretty, "human-readable tables instead of JSON");
    cmd->add_option("--epochs", f_epochs, "override train.epochs");
    cmd->add_option("--batch-size", f_batch, "override train.batch_size");
    cmd->add_option("--lr", f_lr, "override train.learning_rate");
    cmd->add_option("--seed", f_seed, "override train.seed");
    cmd->add_option("--pos-weight", f_pos_weight, "override train.pos_weight");
    cmd->add_option("--threshold", f_threshold, "override train.threshold");
    cmd->add_option("--window-length", f_window, "override window.length");
    cmd->add_option("--step", f_step, "override window.step");
    cmd->add_option("--min-anomalous-points", f_min_pts, "override window.min_anomalous_points");
    cmd->add_option("--ratio", f_ratio, "override split.ratio");
    cmd->add_option("--split-seed", f_split_seed, "override split.seed");
    cmd->add_option("--k", f_k, "override split.k");
    if (with_model_flags) {
      cmd->add_option("--variant", f_variant, "model variant: full|cnn_only|transformer_only");
      cmd->add_option("--dropout", f_dropout, "override model.dropout");
      cmd->add_flag("--positional-encoding", f_pos_enc, "enable sinusoidal positions");
    }
  };

  CLI::App* synth = app.add_subcommand("synth", "generate a labeled synthetic corpus");
  synth->add_option("--spec", spec_path, "synthetic spec JSON")->required();
  synth->add_option("--out", out_path, "output directory")->required();
  synth->add_flag("--pretty", pretty, "human-readable summary");

  CLI::App* stats = app.add_subcommand("stats", "dataset statistics for a corpus directory");
  stats->add_option("dir", data_dir, "corpus directory")->required();
  stats->add_flag("--pretty", pretty, "human-readable summary");

  CLI::App* train_cmd = app.add_subcommand("train", "train a model on a corpus");
  train_cmd->add_option("--data", data_dir, "corpus directory")->required();
  train_cmd->add_option("--out", weights_path, "weight file to write")->required();
  train_cmd->add_option("--history", history_path,
                        "history document path (default <out>.history.json)");
  train_cmd->add_flag("--timings", timings, "include wall-clock seconds per epoch in the history");
  add_common(train_cmd, true);

  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a weight file on a corpus");
  eval_cmd->add_option("--data", data_dir, "corpus directory")->required();
  eval_cmd->add_option("--weights", weights_path, "weight file")->required();
  eval_cmd->add_option("--out", out_path, "report path (default stdout)");
  eval_cmd->add_option("--svg", svg_path, "write the position histogram as SVG");
  eval_cmd->add_option("--subset", subset, "evaluate all|train|test windows (default all)");
  add_common(eval_cmd, false);

  CLI::App* cv_cmd = app.add_subcommand("cv", "k-fold cross-validation");
  cv_cmd->add_option("--data", data_dir, "corpus directory")->required();
  cv_cmd->add_option("--out", out_path, "report path (default stdout)");
  add_common(cv_cmd, true);

  CLI::App* ablate_cmd = app.add_subcommand("ablate", "train and compare the model variants");
  ablate_cmd->add_option("--data", data_dir, "corpus directory")->required();
  ablate_cmd->add_option("--out", out_path, "report path (default stdout)");
  add_common(ablate_cmd, true);

  CLI::App* gradcheck_cmd =
      app.add_subcommand("gradcheck", "finite-difference verification of all gradients");
  gradcheck_cmd->add_flag("--pretty", pretty, "one line per check");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << json{{"error", {{"code", 1}, {"kind", "usage"}, {"message", e.what()}}}}.dump()
              << "\n";
    return 1;
  }

  try {
    RunConfig rc = load_run_config(config_path);
    // flags win over the file
    if (f_epochs > 0) rc.train.epochs = f_epochs;
    if (f_batch > 0) rc.train.batch_size = f_batch;
    if (f_lr > 0) rc.train.learning_rate = f_lr;
    if (f_seed > 0) rc.train.seed = f_seed;
    if (f_pos_weight > 0) rc.train.pos_weight = f_pos_weight;
    if (f_threshold > 0) rc.train.threshold = f_threshold;
    if (f_window > 0) rc.window.length = f_window;
    if (f_step > 0) rc.window.step = f_step;
    if (f_min_pts > 0) rc.window.min_anomalous_points = f_min_pts;
    if (f_ratio > 0) rc.split.ratio = f_ratio;
    if (f_split_seed > 0) rc.split.seed = f_split_seed;
    if (f_k > 0) rc.split.k = f_k;
    if (!f_variant.empty()) rc.model.variant = model_variant_from_string(f_variant);
    if (f_dropout >= 0) rc.model.dropout = f_dropout;
    if (f_pos_enc) rc.model.positional_encoding = true;
    rc.model.window_length = rc.window.length;
    rc.window.validate();
    rc.split.validate();

    if (*synth) {
      std::ifstream in(spec_path);
      if (!in) throw usage_error("cannot open spec " + spec_path);
      json j;
      try {
        j = json::parse(in);
      } catch (const json::exception& e) {
        throw usage_error("spec " + spec_path + ": " + e.what());
      }
      reject_unknown(j, "",
                     {"num_files", "points_per_file", "seed", "level", "amplitude", "noise_std",
                      "point_rate", "contextual_rate", "collective_rate", "collective_len_min",
                      "collective_len_max", "contextual_shift_sigma"});
      SyntheticSpec spec;
      maybe(j, "num_files", spec.num_files);
      maybe(j, "points_per_file", spec.points_per_file);
      maybe(j, "seed", spec.seed);
      maybe(j, "level", spec.level);
      maybe(j, "amplitude", spec.amplitude);
      maybe(j, "noise_std", spec.noise_std);
      maybe(j, "point_rate", spec.point_rate);
      maybe(j, "contextual_rate", spec.contextual_rate);
      maybe(j, "collective_rate", spec.collective_rate);
      maybe(j, "collective_len_min", spec.collective_len_min);
      maybe(j, "collective_len_max", spec.collective_len_max);
      maybe(j, "contextual_shift_sigma", spec.contextual_shift_sigma);
      const auto files = generate_synthetic(spec);
      fs::create_directories(out_path);
      for (const auto& f : files) save_csv(f, fs::path(out_path) / (f.file_id + ".csv"));
      const DatasetStats st = dataset_stats(files);
      json doc{{"provenance",
                {{"format_version", kArtifactFormatVersion},
                 {"seed", spec.seed},
                 {"spec", j},
                 {"inputs", json{{spec_path, to_hex(hash_file(spec_path))}}}}},
               {"files", st.num_files},
               {"total_points", st.total_points},
               {"anomalous_points", st.anomalous_points},
               {"anomalous_fraction", st.anomalous_fraction},
               {"out_dir", out_path}};
      if (pretty)
        std::cout << "wrote " << st.num_files << " files, " << st.total_points << " points ("
                  << st.anomalous_points << " anomalous) to " << out_path << "\n";
      else
        std::cout << doc.dump(2) << "\n";
      return 0;
    }

    if (*stats) {
      const auto files = load_corpus_dir(data_dir);
      const DatasetStats st = dataset_stats(files);
      json doc{{"provenance",
                {{"format_version", kArtifactFormatVersion},
                 {"inputs", hash_inputs(csv_paths(data_dir))}}},
               {"num_files", st.num_files},
               {"total_points", st.total_points},
               {"anomalous_points", st.anomalous_points},
               {"anomalous_fraction", st.anomalous_fraction}};
      if (pretty)
        std::cout << "files " << st.num_files << "\npoints " << st.total_points << "\nanomalous "
                  << st.anomalous_points << " (" << 100.0 * st.anomalous_fraction << "%)\n";
      else
        std::cout << doc.dump(2) << "\n";
      return 0;
    }

    if (*train_cmd) {
      auto corpus = load_windows(data_dir, rc.window);
      const HoldOutSplit split =
          hold_out_split(corpus.windows.size(), rc.split.ratio, rc.split.seed);
      Rng model_rng(rc.train.seed);
      Model model(rc.model, model_rng);
      EpochCallback progress;
      if (pretty)
        progress = [&](int epoch, const EpochRecord& e) {
          std::cerr << "epoch " << epoch << "/" << rc.train.epochs << "  train_loss "
                    << e.train_loss << "  test_loss " << e.test_loss << "  test_acc "
                    << 100.0 * e.test_accuracy << "%  (" << e.wall_seconds << "s)\n";
        };
      const TrainHistory history = train(model, corpus.windows, split.train, corpus.windows,
                                         split.test, rc.train, progress);
      save_weights(model, weights_path);

      json epochs = json::array();
      for (std::size_t i = 0; i < history.epochs.size(); ++i) {
        const auto& e = history.epochs[i];
        json row{{"epoch", i + 1},
                 {"train_loss", e.train_loss},
                 {"test_loss", e.test_loss},
                 {"test_accuracy", e.test_accuracy}};
        if (timings) row["wall_seconds"] = e.wall_seconds;  // off by default: keeps reports byte-stable
        epochs.push_back(row);
      }
      json doc{{"provenance", provenance(rc, rc.train.seed, corpus.input_hashes)},
               {"train_windows", split.train.size()},
               {"test_windows", split.test.size()},
               {"epochs", epochs},
               {"weights", weights_path}};
      const std::string hp = history_path.empty() ? weights_path + ".history.json" : history_path;
      emit(doc, hp);
      if (pretty) {
        const auto& last = history.epochs.back();
        std::cout << "trained " << rc.train.epochs << " epochs on " << split.train.size()
                  << " windows; final train loss " << last.train_loss << ", test accuracy "
                  << 100.0 * last.test_accuracy << "%\nweights: " << weights_path
                  << "\nhistory: " << hp << "\n";
      }
      return 0;
    }

    if (*eval_cmd) {
      Model model = load_model(weights_path);
      if (model.config().window_length != rc.window.length)
        throw usage_error("eval: weight file was trained with window length " +
                          std::to_string(model.config().window_length) +
                          " but the data pipeline is configured for " +
                          std::to_string(rc.window.length));
      auto corpus = load_windows(data_dir, rc.window);
      std::vector<std::size_t> idx;
      if (subset == "all") {
        idx.resize(corpus.windows.size());
        std::iota(idx.begin(), idx.end(), 0);
      } else if (subset == "train" || subset == "test") {
        const HoldOutSplit split =
            hold_out_split(corpus.windows.size(), rc.split.ratio, rc.split.seed);
        idx = subset == "train" ? split.train : split.test;
      } else {
        throw usage_error("eval: --subset must be all, train or test");
      }
      const EvalReport report =
          evaluate(model, corpus.windows, idx, rc.train.threshold, rc.train.batch_size);
      json doc = eval_json(report);
      doc["provenance"] = provenance(rc, rc.train.seed, corpus.input_hashes);
      doc["provenance"]["inputs"][weights_path] = to_hex(hash_file(weights_path));
      doc["evaluated_windows"] = idx.size();
      doc["subset"] = subset;
      if (!svg_path.empty()) write_position_histogram_svg(report.positions, svg_path);
      if (pretty) {
        std::cout << pretty_metrics_table(report.confusion, report.metrics)
                  << pretty_position_table(report.positions) << pretty_type_table(report.types);
        if (!out_path.empty()) emit(doc, out_path);
      } else {
        emit(doc, out_path);
      }
      return 0;
    }

    if (*cv_cmd) {
      auto corpus = load_windows(data_dir, rc.window);
      const CvReport report =
          cross_validate(corpus.windows, rc.model, rc.train, rc.split.k, rc.split.seed);
      json folds = json::array();
      for (const auto& f : report.folds) {
        json row{{"fold", f.fold}, {"excluded", f.excluded}};
        if (f.excluded) {
          row["note"] = f.note;
        } else {
          row.update(metrics_json(f.confusion, f.metrics));
        }
        folds.push_back(row);
      }
      json doc{{"provenance", provenance(rc, rc.train.seed, corpus.input_hashes)},
               {"k", rc.split.k},
               {"included", report.included},
               {"folds", folds},
               {"mean",
                {{"accuracy", report.mean.accuracy},
                 {"precision", report.mean.precision},
                 {"recall", report.mean.recall},
                 {"f1", report.mean.f1}}}};
      if (pretty) {
        std::cout << pretty_cv_table(report);
        if (!out_path.empty()) emit(doc, out_path);
      } else {
        emit(doc, out_path);
      }
      return 0;
    }

    if (*ablate_cmd) {
      auto corpus = load_windows(data_dir, rc.window);
      const AblationReport report =
          ablation_report(corpus.windows, rc.model, rc.train, rc.split.ratio, rc.split.seed);
      json rows = json::array();
      for (const auto& row : report.rows) {
        json r{{"variant", to_string(row.variant)}};
        r.update(metrics_json(row.confusion, row.metrics));
        rows.push_back(r);
      }
      json doc{{"provenance", provenance(rc, rc.train.seed, corpus.input_hashes)}, {"rows", rows}};
      if (pretty) {
        std::cout << pretty_ablation_table(report);
        if (!out_path.empty()) emit(doc, out_path);
      } else {
        emit(doc, out_path);
      }
      return 0;
    }

    if (*gradcheck_cmd) return cmd_gradcheck(pretty);

    throw usage_error("no subcommand selected");
  } catch (const Error& e) {
    const char* kind = e.kind() == ErrorKind::usage  ? "usage"
                       : e.kind() == ErrorKind::data ? "data"
                                                     : "numeric";
    std::cerr << json{{"error", {{"code", e.exit_code()}, {"kind", kind}, {"message", e.what()}}}}
                     .dump()
              << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << json{{"error", {{"code", 1}, {"kind", "usage"}, {"message", e.what()}}}}.dump()
              << "\n";
    return 1;
  }
}
