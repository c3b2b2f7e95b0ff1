#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lego/sequence.hpp"
#include "lego/tensor.hpp"

namespace lego {

// Encoder hyperparameters. weight_sharing = true reuses one block at every
// depth (ALBERT-style); false gives each layer its own block (BERT-style).
struct ModelConfig {
  int layers = 6;
  int heads = 1;
  int hidden = 128;
  int ffn = 512;
  int max_positions = token_length(6);
  int vocab_size = 0;
  int num_classes = 0;
  bool weight_sharing = true;
  double dropout = 0.0;
  double init_std = 0.02;
  double layer_norm_eps = 1e-12;

  void validate() const;  // ConfigError
  std::string family() const { return weight_sharing ? "albert" : "bert"; }
  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// (BERT minimal, ALBERT minimal): 6 layers, 1 head, d = 128.
std::pair<ModelConfig, ModelConfig> minimal_configs(int vocab_size, int num_classes);
// 12 layers, 12 heads; d = 144 keeps the head count dividing the width at
// desk scale, 768 at paper scale.
ModelConfig full_config(int vocab_size, int num_classes, bool weight_sharing, bool paper_scale = false);
// Width used for an (L, H) sweep cell: 128 when H divides it, else 144 or
// the next multiple of H.
int desk_hidden_for_heads(int heads);

// Row-stochastic attention of one example: weights[((l*H + h)*n + q)*n + k].
struct AttentionRecord {
  int layers = 0;
  int heads = 0;
  int length = 0;
  std::vector<double> weights;

  double at(int layer, int head, int query, int key) const {
    return weights[static_cast<std::size_t>(((layer * heads + head) * length + query) * length + key)];
  }
  double& at(int layer, int head, int query, int key) {
    return weights[static_cast<std::size_t>(((layer * heads + head) * length + query) * length + key)];
  }
};

// Per-position logits for a batch: values[(b*length + pos)*classes + c].
struct BatchLogits {
  int batch = 0;
  int length = 0;
  int classes = 0;
  std::vector<float> values;

  std::span<const float> example(int b) const {
    return std::span<const float>(values).subspan(static_cast<std::size_t>(b * length * classes),
                                                  static_cast<std::size_t>(length * classes));
  }
};

using ExampleBatch = std::span<const TokenizedExample* const>;

// Padded token/position/label arrays for a batch.
struct PaddedBatch {
  int batch = 0;
  int length = 0;
  std::vector<int> tokens;
  std::vector<int> positions;
  std::vector<int> labels;
  std::vector<std::uint8_t> key_valid;
};

PaddedBatch pad_batch(ExampleBatch examples, int pad_token, int max_positions);

template <std::floating_point T>
struct ForwardResult {
  ag::Tensor<T> logits;  // [batch*length, classes]
  PaddedBatch inputs;
  std::vector<AttentionRecord> attention;  // one per example when captured
};

template <std::floating_point T>
struct NamedParameter {
  std::string name;
  ag::Tensor<T> tensor;
};

template <std::floating_point T>
class TransformerModel {
 public:
  // Weights ~ N(0, init_std²), biases 0, layer-norm gains 1; deterministic in seed.
  TransformerModel(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }
  std::vector<NamedParameter<T>>& parameters() noexcept { return params_; }
  const std::vector<NamedParameter<T>>& parameters() const noexcept { return params_; }
  std::vector<ag::Tensor<T>> parameter_tensors() const;
  std::int64_t parameter_count() const;
  std::int64_t encoder_parameter_count() const;

  // Deep copy of all parameters.
  TransformerModel clone() const;

  // `dropout_rng` enables dropout (training); nullptr disables it.
  ForwardResult<T> forward(ExampleBatch batch, bool capture_attention, Rng* dropout_rng = nullptr) const;

  // Inference without recording.
  BatchLogits infer_logits(ExampleBatch batch) const;

 private:
  struct Block {
    ag::Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo, ln1_g, ln1_b, w1, b1, w2, b2, ln2_g, ln2_b;
  };

  ag::Tensor<T>& add_param(const std::string& name, ag::Shape shape, int init, Rng& rng);
  void bind();

  ModelConfig config_;
  std::vector<NamedParameter<T>> params_;
  // Views into params_ (shared handles).
  ag::Tensor<T> token_emb_, position_emb_, emb_ln_g_, emb_ln_b_, head_w_, head_b_;
  std::vector<Block> blocks_;
};

template <std::floating_point T>
TransformerModel<T> init_model(const ModelConfig& config, std::uint64_t seed) {
  return TransformerModel<T>(config, seed);
}

// Argmax at every labeled position, reported in canonical clause order.
struct Assignment {
  std::vector<ElementId> predicted;
  std::vector<bool> correct;
};

Assignment predict_assignments(std::span<const float> logits, int classes, const TokenizedExample& example);

template <std::floating_point T>
Assignment predict_assignments(const TransformerModel<T>& model, const TokenizedExample& example) {
  const TokenizedExample* one[] = {&example};
  const auto logits = model.infer_logits(one);
  return predict_assignments(logits.example(0), logits.classes, example);
}

}  // namespace lego
