#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "wtcf/nn.hpp"
#include "wtcf/windowing.hpp"

namespace wtcf {

enum class ModelVariant { full, cnn_only, transformer_only };

std::string to_string(ModelVariant v);
ModelVariant model_variant_from_string(const std::string& s);

struct ModelConfig {
  ModelVariant variant = ModelVariant::full;
  int window_length = 60;
  int conv1_channels = 64;
  int conv2_channels = 64;  // doubles as d_model for the encoder
  int conv_kernel = 5;
  int conv_stride = 1;
  int conv_padding = 2;
  Activation conv_activation = Activation::relu;
  int pool_kernel = 5;
  int pool_stride = 2;
  int encoder_layers = 1;
  int heads = 8;
  int ffn_dim = 256;
  double dropout = 0.1;
  int classifier_hidden = 32;
  bool positional_encoding = false;

  int d_model() const { return conv2_channels; }
  void validate() const;
};

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

struct TrainConfig {
  int epochs = 50;
  int batch_size = 512;
  double learning_rate = 1e-3;
  std::uint64_t seed = 42;
  double pos_weight = 1.0;
  double threshold = 0.5;

  void validate() const;
};

struct EpochRecord {
  double train_loss = 0.0;
  double test_loss = 0.0;
  double test_accuracy = 0.0;
  double wall_seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
};

// WT-CFormer and its ablation variants. The constructor verifies the whole
// shape chain and reports the first inconsistent stage.
class Model {
 public:
  Model(ModelConfig cfg, Rng& rng);

  const ModelConfig& config() const { return cfg_; }
  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }
  std::int64_t parameter_count() const;
  void zero_grad();

  // x [B, 1, window] -> probabilities [B, 1], strictly inside (0,1).
  Tensor forward(const Tensor& x, Mode mode, Rng& rng) const;

  // Stage names and shapes of the forward chain for a batch of one;
  // computed at build time.
  const std::vector<std::pair<std::string, Shape>>& shape_chain() const { return chain_; }
  int sequence_length() const { return sequence_length_; }

 private:
  ModelConfig cfg_;
  Conv1d conv1_, conv2_;
  Linear input_projection_;  // transformer_only
  std::vector<EncoderLayer> encoders_;
  ClassifierHead head_;
  Tensor positions_;  // [T, d_model] when positional encoding is on
  std::vector<Param> params_;
  std::vector<std::pair<std::string, Shape>> chain_;
  int sequence_length_ = 0;

  void build_chain();
};

struct Predictions {
  std::vector<double> probabilities;
  std::vector<bool> labels;
};

// Batch of window values as a [n, 1, w] tensor plus 0/1 labels.
Tensor batch_values(const std::vector<WindowSample>& corpus,
                    const std::vector<std::size_t>& indices);
std::vector<double> batch_labels(const std::vector<WindowSample>& corpus,
                                 const std::vector<std::size_t>& indices);

using EpochCallback = std::function<void(int epoch, const EpochRecord&)>;

// Algorithm: per epoch, seeded shuffle, fixed-size batches (last partial batch
// kept), forward / loss / backward / Adam; per-epoch evaluation of the
// held-out set in eval mode. Deterministic for a fixed seed. The callback,
// when set, observes each completed epoch (1-based).
TrainHistory train(Model& model, const std::vector<WindowSample>& train_set,
                   const std::vector<std::size_t>& train_indices,
                   const std::vector<WindowSample>& test_set,
                   const std::vector<std::size_t>& test_indices, const TrainConfig& tc,
                   const EpochCallback& on_epoch = {});

// Convenience overload over whole corpora.
TrainHistory train(Model& model, const std::vector<WindowSample>& train_set,
                   const std::vector<WindowSample>& test_set, const TrainConfig& tc);

// Eval-mode batched inference; label = probability >= threshold.
Predictions predict(const Model& model, const std::vector<WindowSample>& windows,
                    const std::vector<std::size_t>& indices, double threshold,
                    int batch_size = 512);
Predictions predict(const Model& model, const std::vector<WindowSample>& windows,
                    double threshold, int batch_size = 512);

// Versioned weight container: magic, format version, config echo, then
// name/shape/row-major little-endian float64 per parameter. Loading
// validates names and shapes against the echoed config.
void save_weights(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

}  // namespace wtcf
