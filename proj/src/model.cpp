#include "wtcf/model.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "wtcf/common.hpp"

namespace wtcf {

using nlohmann::json;

std::string to_string(ModelVariant v) {
  switch (v) {
    case ModelVariant::full: return "full";
    case ModelVariant::cnn_only: return "cnn_only";
    case ModelVariant::transformer_only: return "transformer_only";
  }
  return "?";
}

ModelVariant model_variant_from_string(const std::string& s) {
  if (s == "full") return ModelVariant::full;
  if (s == "cnn_only") return ModelVariant::cnn_only;
  if (s == "transformer_only") return ModelVariant::transformer_only;
  throw usage_error("unknown model variant '" + s + "'");
}

void ModelConfig::validate() const {
  if (window_length < 1) throw usage_error("model config: window_length must be >= 1");
  if (conv1_channels < 1 || conv2_channels < 1)
    throw usage_error("model config: conv channels must be >= 1");
  if (conv_kernel < 1 || conv_stride < 1 || conv_padding < 0)
    throw usage_error("model config: conv kernel/stride/padding out of range");
  if (pool_kernel < 1 || pool_stride < 1)
    throw usage_error("model config: pool kernel/stride out of range");
  if (encoder_layers < 0) throw usage_error("model config: encoder_layers must be >= 0");
  if (heads < 1 || d_model() % heads != 0)
    throw usage_error("model config: d_model " + std::to_string(d_model()) +
                      " must be divisible by heads " + std::to_string(heads));
  if (ffn_dim < 1) throw usage_error("model config: ffn_dim must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0))
    throw usage_error("model config: dropout must lie in [0,1)");
  if (classifier_hidden < 1) throw usage_error("model config: classifier_hidden must be >= 1");
}

std::string model_config_to_json(const ModelConfig& c) {
  json j{{"variant", to_string(c.variant)},
         {"window_length", c.window_length},
         {"conv1_channels", c.conv1_channels},
         {"conv2_channels", c.conv2_channels},
         {"conv_kernel", c.conv_kernel},
         {"conv_stride", c.conv_stride},
         {"conv_padding", c.conv_padding},
         {"conv_activation", c.conv_activation == Activation::relu ? "relu" : "tanh"},
         {"pool_kernel", c.pool_kernel},
         {"pool_stride", c.pool_stride},
         {"encoder_layers", c.encoder_layers},
         {"heads", c.heads},
         {"ffn_dim", c.ffn_dim},
         {"dropout", c.dropout},
         {"classifier_hidden", c.classifier_hidden},
         {"positional_encoding", c.positional_encoding}};
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw usage_error(std::string("model config: ") + e.what());
  }
  ModelConfig c;
  c.variant = model_variant_from_string(j.at("variant").get<std::string>());
  c.window_length = j.at("window_length").get<int>();
  c.conv1_channels = j.at("conv1_channels").get<int>();
  c.conv2_channels = j.at("conv2_channels").get<int>();
  c.conv_kernel = j.at("conv_kernel").get<int>();
  c.conv_stride = j.at("conv_stride").get<int>();
  c.conv_padding = j.at("conv_padding").get<int>();
  const auto act = j.at("conv_activation").get<std::string>();
  if (act == "relu") c.conv_activation = Activation::relu;
  else if (act == "tanh") c.conv_activation = Activation::tanh;
  else throw usage_error("model config: unknown activation '" + act + "'");
  c.pool_kernel = j.at("pool_kernel").get<int>();
  c.pool_stride = j.at("pool_stride").get<int>();
  c.encoder_layers = j.at("encoder_layers").get<int>();
  c.heads = j.at("heads").get<int>();
  c.ffn_dim = j.at("ffn_dim").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.classifier_hidden = j.at("classifier_hidden").get<int>();
  c.positional_encoding = j.at("positional_encoding").get<bool>();
  c.validate();
  return c;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw usage_error("train config: epochs must be >= 1");
  if (batch_size < 1) throw usage_error("train config: batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw usage_error("train config: learning_rate must be > 0");
  if (!(threshold > 0.0 && threshold < 1.0))
    throw usage_error("train config: threshold must lie in (0,1)");
  if (pos_weight <= 0.0) throw usage_error("train config: pos_weight must be > 0");
}

// ---------------------------------------------------------------------------
// Model

namespace {

int conv_out_len(int len, int kernel, int stride, int padding) {
  return (len + 2 * padding - kernel) / stride + 1;
}

}  // namespace

Model::Model(ModelConfig cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const bool has_conv = cfg_.variant != ModelVariant::transformer_only;
  const bool has_encoder = cfg_.variant != ModelVariant::cnn_only;
  const int d = cfg_.d_model();

  if (has_conv) {
    conv1_ = Conv1d(1, cfg_.conv1_channels, cfg_.conv_kernel, cfg_.conv_stride, cfg_.conv_padding,
                    rng);
    conv2_ = Conv1d(cfg_.conv1_channels, cfg_.conv2_channels, cfg_.conv_kernel, cfg_.conv_stride,
                    cfg_.conv_padding, rng);
  } else {
    input_projection_ = Linear(1, d, false, rng);
  }
  if (has_encoder) {
    encoders_.reserve(static_cast<std::size_t>(cfg_.encoder_layers));
    for (int i = 0; i < cfg_.encoder_layers; ++i)
      encoders_.emplace_back(d, cfg_.heads, cfg_.ffn_dim, cfg_.dropout, rng);
  }
  head_ = ClassifierHead(d, cfg_.classifier_hidden, rng);

  build_chain();  // throws on the first inconsistent stage

  if (cfg_.positional_encoding) positions_ = sinusoidal_positions(sequence_length_, d);

  if (has_conv) {
    conv1_.collect("conv1", params_);
    conv2_.collect("conv2", params_);
  } else {
    input_projection_.collect("input_projection", params_);
  }
  for (std::size_t i = 0; i < encoders_.size(); ++i)
    encoders_[i].collect("encoder" + std::to_string(i), params_);
  head_.collect("head", params_);
}

void Model::build_chain() {
  const int w = cfg_.window_length;
  const int d = cfg_.d_model();
  chain_.clear();
  chain_.push_back({"input", {1, 1, w}});
  int t;
  if (cfg_.variant != ModelVariant::transformer_only) {
    if (w + 2 * cfg_.conv_padding < cfg_.conv_kernel)
      throw usage_error("model build: conv1 kernel " + std::to_string(cfg_.conv_kernel) +
                        " does not fit window length " + std::to_string(w));
    const int l1 = conv_out_len(w, cfg_.conv_kernel, cfg_.conv_stride, cfg_.conv_padding);
    chain_.push_back({"conv1", {1, cfg_.conv1_channels, l1}});
    if (l1 + 2 * cfg_.conv_padding < cfg_.conv_kernel)
      throw usage_error("model build: conv2 kernel does not fit length " + std::to_string(l1));
    const int l2 = conv_out_len(l1, cfg_.conv_kernel, cfg_.conv_stride, cfg_.conv_padding);
    chain_.push_back({"conv2", {1, cfg_.conv2_channels, l2}});
    if (l2 < cfg_.pool_kernel)
      throw usage_error("model build: pool kernel " + std::to_string(cfg_.pool_kernel) +
                        " exceeds conv output length " + std::to_string(l2));
    t = (l2 - cfg_.pool_kernel) / cfg_.pool_stride + 1;
    chain_.push_back({"maxpool", {1, cfg_.conv2_channels, t}});
  } else {
    t = w;
    chain_.push_back({"input_projection", {1, t, d}});
  }
  if (cfg_.variant != ModelVariant::cnn_only)
    chain_.push_back({"encoder", {1, t, d}});
  chain_.push_back({"avg_pool", {1, d}});
  chain_.push_back({"head", {1, 1}});
  sequence_length_ = t;
}

std::int64_t Model::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : params_) n += p.tensor.size();
  return n;
}

void Model::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

Tensor Model::forward(const Tensor& x, Mode mode, Rng& rng) const {
  if (x.rank() != 3 || x.dim(1) != 1 || x.dim(2) != cfg_.window_length)
    throw usage_error("model forward: expected [batch, 1, " +
                      std::to_string(cfg_.window_length) + "], got " + shape_str(x.shape()));
  const bool train = mode == Mode::train;
  Tensor h;
  if (cfg_.variant != ModelVariant::transformer_only) {
    const FusedAct act =
        cfg_.conv_activation == Activation::relu ? FusedAct::relu : FusedAct::tanh;
    // conv stack runs channel-last internally; [B,1,w] reinterprets as
    // [B,w,1] for free and the pool output is already encoder layout
    h = reshape(x, {x.dim(0), cfg_.window_length, 1});
    h = conv1d_cl(h, conv1_.weight, conv1_.bias, cfg_.conv_stride, cfg_.conv_padding, act);
    h = conv1d_cl(h, conv2_.weight, conv2_.bias, cfg_.conv_stride, cfg_.conv_padding, act);
    h = maxpool1d_cl(h, cfg_.pool_kernel, cfg_.pool_stride);  // [B, T, d]
  } else {
    h = reshape(x, {x.dim(0), cfg_.window_length, 1});
    h = input_projection_.forward(h);  // [B, T, d]
  }
  if (cfg_.positional_encoding && !encoders_.empty()) {
    // tile the [T, d] table across the batch
    const int b = h.dim(0);
    const auto table = positions_.data();
    std::vector<double> tiled(static_cast<std::size_t>(b) * table.size());
    for (int i = 0; i < b; ++i)
      std::copy(table.begin(), table.end(),
                tiled.begin() + static_cast<std::ptrdiff_t>(i * table.size()));
    h = add(h, Tensor({b, h.dim(1), h.dim(2)}, std::move(tiled)));
  }
  for (const auto& enc : encoders_) h = enc.forward(h, mode, rng);
  h = global_avg_pool(h);  // [B, d]
  h = dropout(h, cfg_.dropout, train, rng);
  return head_.forward(h);  // [B, 1]
}

// ---------------------------------------------------------------------------
// batching

Tensor batch_values(const std::vector<WindowSample>& corpus,
                    const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw usage_error("batch_values: empty batch");
  const int w = static_cast<int>(corpus[indices[0]].values.size());
  std::vector<double> data(indices.size() * static_cast<std::size_t>(w));
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto& v = corpus[indices[i]].values;
    if (static_cast<int>(v.size()) != w)
      throw data_error("batch_values: inconsistent window widths in corpus");
    std::copy(v.begin(), v.end(), data.begin() + static_cast<std::ptrdiff_t>(i * v.size()));
  }
  return Tensor({static_cast<int>(indices.size()), 1, w}, std::move(data));
}

std::vector<double> batch_labels(const std::vector<WindowSample>& corpus,
                                 const std::vector<std::size_t>& indices) {
  std::vector<double> y(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) y[i] = corpus[indices[i]].label ? 1.0 : 0.0;
  return y;
}

// ---------------------------------------------------------------------------
// training

namespace {

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

EvalResult evaluate_set(const Model& model, const std::vector<WindowSample>& corpus,
                        const std::vector<std::size_t>& indices, const TrainConfig& tc,
                        Rng& rng) {
  if (indices.empty()) return {};
  NoGradGuard ng;
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t at = 0; at < indices.size(); at += static_cast<std::size_t>(tc.batch_size)) {
    const std::size_t end = std::min(indices.size(), at + static_cast<std::size_t>(tc.batch_size));
    std::vector<std::size_t> batch(indices.begin() + static_cast<std::ptrdiff_t>(at),
                                   indices.begin() + static_cast<std::ptrdiff_t>(end));
    Tensor p = model.forward(batch_values(corpus, batch), Mode::eval, rng);
    const auto y = batch_labels(corpus, batch);
    loss_sum += bce_loss(p, y, tc.pos_weight).item() * static_cast<double>(batch.size());
    const auto probs = p.data();
    for (std::size_t i = 0; i < batch.size(); ++i)
      correct += ((probs[i] >= tc.threshold) == (y[i] == 1.0)) ? 1 : 0;
  }
  const double n = static_cast<double>(indices.size());
  return {loss_sum / n, static_cast<double>(correct) / n};
}

}  // namespace

TrainHistory train(Model& model, const std::vector<WindowSample>& train_set,
                   const std::vector<std::size_t>& train_indices,
                   const std::vector<WindowSample>& test_set,
                   const std::vector<std::size_t>& test_indices, const TrainConfig& tc,
                   const EpochCallback& on_epoch) {
  tc.validate();
  if (train_indices.empty()) throw usage_error("train: empty training set");
  std::size_t positives = 0;
  for (auto i : train_indices) positives += train_set[i].label ? 1 : 0;
  if (positives == 0 || positives == train_indices.size())
    throw usage_error("train: training set holds a single class (" +
                      std::to_string(positives) + " of " + std::to_string(train_indices.size()) +
                      " positive); both classes are required");

  Rng base(tc.seed);
  Rng shuffle_rng = base.derive(1);
  Rng dropout_rng = base.derive(2);
  Rng eval_rng = base.derive(3);  // eval mode draws nothing; kept for signature symmetry
  Adam adam(tc.learning_rate);

  std::vector<std::size_t> order(train_indices);
  TrainHistory history;
  history.epochs.reserve(static_cast<std::size_t>(tc.epochs));

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    int batch_no = 0;
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(tc.batch_size)) {
      const std::size_t end = std::min(order.size(), at + static_cast<std::size_t>(tc.batch_size));
      std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(at),
                                     order.begin() + static_cast<std::ptrdiff_t>(end));
      Tensor x = batch_values(train_set, batch);
      const auto y = batch_labels(train_set, batch);
      Tensor p = model.forward(x, Mode::train, dropout_rng);
      Tensor loss = bce_loss(p, y, tc.pos_weight);
      const double loss_value = loss.item();
      if (!std::isfinite(loss_value))
        throw numeric_error("train: non-finite loss at epoch " + std::to_string(epoch + 1) +
                            ", batch " + std::to_string(batch_no + 1));
      model.zero_grad();
      loss.backward();
      adam.step(model.params());
      loss_sum += loss_value * static_cast<double>(batch.size());
      ++batch_no;
    }

    EpochRecord rec;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    const EvalResult ev = evaluate_set(model, test_set, test_indices, tc, eval_rng);
    rec.test_loss = ev.loss;
    rec.test_accuracy = ev.accuracy;
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    history.epochs.push_back(rec);
    if (on_epoch) on_epoch(epoch + 1, rec);
  }
  return history;
}

TrainHistory train(Model& model, const std::vector<WindowSample>& train_set,
                   const std::vector<WindowSample>& test_set, const TrainConfig& tc) {
  std::vector<std::size_t> ti(train_set.size());
  std::iota(ti.begin(), ti.end(), 0);
  std::vector<std::size_t> si(test_set.size());
  std::iota(si.begin(), si.end(), 0);
  return train(model, train_set, ti, test_set, si, tc);
}

Predictions predict(const Model& model, const std::vector<WindowSample>& windows,
                    const std::vector<std::size_t>& indices, double threshold, int batch_size) {
  if (!(threshold >= 0.0 && threshold <= 1.0))
    throw usage_error("predict: threshold must lie in [0,1]");
  Predictions out;
  out.probabilities.reserve(indices.size());
  out.labels.reserve(indices.size());
  NoGradGuard ng;
  Rng rng(0);  // eval mode draws nothing
  for (std::size_t at = 0; at < indices.size(); at += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(indices.size(), at + static_cast<std::size_t>(batch_size));
    std::vector<std::size_t> batch(indices.begin() + static_cast<std::ptrdiff_t>(at),
                                   indices.begin() + static_cast<std::ptrdiff_t>(end));
    Tensor p = model.forward(batch_values(windows, batch), Mode::eval, rng);
    for (double v : p.data()) {
      out.probabilities.push_back(v);
      out.labels.push_back(v >= threshold);
    }
  }
  return out;
}

Predictions predict(const Model& model, const std::vector<WindowSample>& windows, double threshold,
                    int batch_size) {
  std::vector<std::size_t> idx(windows.size());
  std::iota(idx.begin(), idx.end(), 0);
  return predict(model, windows, idx, threshold, batch_size);
}

// ---------------------------------------------------------------------------
// weight file

namespace {

constexpr char kWeightsMagic[8] = {'W', 'T', 'C', 'F', 'W', 'T', 'S', '1'};

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::ifstream& in, const std::filesystem::path& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v))
    throw data_error("truncated weight file " + path.string());
  return v;
}

}  // namespace

void save_weights(const Model& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot write " + path.string());
  out.write(kWeightsMagic, sizeof kWeightsMagic);
  put<std::uint32_t>(out, kArtifactFormatVersion);
  const std::string cfg = model_config_to_json(model.config());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.size()));
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.params().size()));
  for (const auto& p : model.params()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.tensor.rank()));
    for (int d : p.tensor.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    const auto data = p.tensor.data();
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(double)));
  }
  if (!out) throw data_error("write failed for " + path.string());
}

Model load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kWeightsMagic, sizeof magic) != 0)
    throw data_error(path.string() + " is not a weight file");
  const auto version = get<std::uint32_t>(in, path);
  if (version != kArtifactFormatVersion)
    throw data_error("weight file " + path.string() + " has unsupported version " +
                     std::to_string(version));
  const auto cfg_len = get<std::uint32_t>(in, path);
  std::string cfg_text(cfg_len, '\0');
  if (!in.read(cfg_text.data(), cfg_len)) throw data_error("truncated weight file " + path.string());
  const ModelConfig cfg = model_config_from_json(cfg_text);

  Rng scratch_rng(0);
  Model model(cfg, scratch_rng);

  const auto count = get<std::uint32_t>(in, path);
  if (count != model.params().size())
    throw data_error("weight file " + path.string() + " has " + std::to_string(count) +
                     " parameters, config implies " + std::to_string(model.params().size()));
  for (auto& p : model.params()) {
    const auto name_len = get<std::uint32_t>(in, path);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw data_error("truncated weight file " + path.string());
    if (name != p.name)
      throw data_error("weight file " + path.string() + ": parameter '" + name +
                       "' does not match expected '" + p.name + "'");
    const auto rank = get<std::uint32_t>(in, path);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<int>(get<std::uint32_t>(in, path));
    if (shape != p.tensor.shape())
      throw data_error("weight file " + path.string() + ": parameter '" + name + "' has shape " +
                       shape_str(shape) + ", config implies " + shape_str(p.tensor.shape()));
    auto dst = p.tensor.raw();
    if (!in.read(reinterpret_cast<char*>(dst.data()),
                 static_cast<std::streamsize>(dst.size() * sizeof(double))))
      throw data_error("truncated weight file " + path.string());
  }
  return model;
}

}  // namespace wtcf
