#include "lego/model.hpp"

#include <algorithm>
#include <cmath>

#include "lego/errors.hpp"

namespace lego {

void ModelConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("model config: " + what);
  };
  need(layers >= 1, "layers must be positive");
  need(heads >= 1, "heads must be positive");
  need(hidden >= 1 && hidden % heads == 0,
       "hidden size " + std::to_string(hidden) + " is not divisible by " + std::to_string(heads) + " heads");
  need(ffn >= 1, "ffn size must be positive");
  need(max_positions >= 1, "max_positions must be positive");
  need(vocab_size >= 1, "vocab_size must be positive");
  need(num_classes >= 1, "num_classes must be positive");
  need(dropout >= 0.0 && dropout < 1.0, "dropout must be in [0, 1)");
  need(init_std > 0.0, "init_std must be positive");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"layers", c.layers},
                     {"heads", c.heads},
                     {"hidden", c.hidden},
                     {"ffn", c.ffn},
                     {"max_positions", c.max_positions},
                     {"vocab_size", c.vocab_size},
                     {"num_classes", c.num_classes},
                     {"weight_sharing", c.weight_sharing},
                     {"dropout", c.dropout},
                     {"init_std", c.init_std},
                     {"layer_norm_eps", c.layer_norm_eps}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.layers = j.value("layers", d.layers);
  c.heads = j.value("heads", d.heads);
  c.hidden = j.value("hidden", d.hidden);
  c.ffn = j.value("ffn", 4 * c.hidden);
  c.max_positions = j.value("max_positions", d.max_positions);
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.num_classes = j.value("num_classes", d.num_classes);
  c.weight_sharing = j.value("weight_sharing", d.weight_sharing);
  c.dropout = j.value("dropout", d.dropout);
  c.init_std = j.value("init_std", d.init_std);
  c.layer_norm_eps = j.value("layer_norm_eps", d.layer_norm_eps);
}

std::pair<ModelConfig, ModelConfig> minimal_configs(int vocab_size, int num_classes) {
  ModelConfig bert;
  bert.layers = 6;
  bert.heads = 1;
  bert.hidden = 128;
  bert.ffn = 512;
  bert.vocab_size = vocab_size;
  bert.num_classes = num_classes;
  bert.weight_sharing = false;
  ModelConfig albert = bert;
  albert.weight_sharing = true;
  return {bert, albert};
}

int desk_hidden_for_heads(int heads) {
  if (heads < 1) throw ConfigError("heads must be positive");
  if (128 % heads == 0) return 128;
  if (144 % heads == 0) return 144;
  return heads * ((128 + heads - 1) / heads);
}

ModelConfig full_config(int vocab_size, int num_classes, bool weight_sharing, bool paper_scale) {
  ModelConfig c;
  c.layers = 12;
  c.heads = 12;
  c.hidden = paper_scale ? 768 : desk_hidden_for_heads(12);
  c.ffn = 4 * c.hidden;
  c.vocab_size = vocab_size;
  c.num_classes = num_classes;
  c.weight_sharing = weight_sharing;
  return c;
}

PaddedBatch pad_batch(ExampleBatch examples, int pad_token, int max_positions) {
  PaddedBatch b;
  b.batch = static_cast<int>(examples.size());
  for (const auto* ex : examples) b.length = std::max(b.length, ex->length());
  if (b.length > max_positions) {
    throw ShapeError("input of " + std::to_string(b.length) + " tokens exceeds max_positions " +
                     std::to_string(max_positions));
  }
  const auto total = static_cast<std::size_t>(b.batch * b.length);
  b.tokens.assign(total, pad_token);
  b.positions.resize(total);
  b.labels.assign(total, kNoLabel);
  b.key_valid.assign(total, 0);
  for (int i = 0; i < b.batch; ++i) {
    const auto& ex = *examples[static_cast<std::size_t>(i)];
    for (int p = 0; p < b.length; ++p) {
      const auto at = static_cast<std::size_t>(i * b.length + p);
      b.positions[at] = p;
      if (p < ex.length()) {
        b.tokens[at] = ex.tokens[static_cast<std::size_t>(p)];
        b.labels[at] = ex.labels[static_cast<std::size_t>(p)];
        b.key_valid[at] = 1;
      }
    }
  }
  return b;
}

namespace {
enum Init { kNormal, kZeros, kOnes };
}

template <std::floating_point T>
ag::Tensor<T>& TransformerModel<T>::add_param(const std::string& name, ag::Shape shape, int init, Rng& rng) {
  auto t = ag::Tensor<T>::zeros(std::move(shape), true);
  auto values = t.mutable_values();
  if (init == kOnes) {
    std::fill(values.begin(), values.end(), T(1));
  } else if (init == kNormal) {
    std::normal_distribution<double> dist(0.0, config_.init_std);
    for (auto& v : values) v = static_cast<T>(dist(rng));
  }
  params_.push_back({name, std::move(t)});
  return params_.back().tensor;
}

template <std::floating_point T>
TransformerModel<T>::TransformerModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(derive_seed(seed, streams::init));
  const std::int64_t d = config_.hidden, f = config_.ffn;
  add_param("embeddings.token", {config_.vocab_size, d}, kNormal, rng);
  add_param("embeddings.position", {config_.max_positions, d}, kNormal, rng);
  add_param("embeddings.norm.gamma", {d}, kOnes, rng);
  add_param("embeddings.norm.beta", {d}, kZeros, rng);
  const int distinct = config_.weight_sharing ? 1 : config_.layers;
  for (int l = 0; l < distinct; ++l) {
    const std::string p = "encoder.block" + std::to_string(l) + ".";
    add_param(p + "attention.query.weight", {d, d}, kNormal, rng);
    add_param(p + "attention.query.bias", {d}, kZeros, rng);
    add_param(p + "attention.key.weight", {d, d}, kNormal, rng);
    add_param(p + "attention.key.bias", {d}, kZeros, rng);
    add_param(p + "attention.value.weight", {d, d}, kNormal, rng);
    add_param(p + "attention.value.bias", {d}, kZeros, rng);
    add_param(p + "attention.output.weight", {d, d}, kNormal, rng);
    add_param(p + "attention.output.bias", {d}, kZeros, rng);
    add_param(p + "attention.norm.gamma", {d}, kOnes, rng);
    add_param(p + "attention.norm.beta", {d}, kZeros, rng);
    add_param(p + "ffn.in.weight", {d, f}, kNormal, rng);
    add_param(p + "ffn.in.bias", {f}, kZeros, rng);
    add_param(p + "ffn.out.weight", {f, d}, kNormal, rng);
    add_param(p + "ffn.out.bias", {d}, kZeros, rng);
    add_param(p + "ffn.norm.gamma", {d}, kOnes, rng);
    add_param(p + "ffn.norm.beta", {d}, kZeros, rng);
  }
  add_param("classifier.weight", {d, config_.num_classes}, kNormal, rng);
  add_param("classifier.bias", {config_.num_classes}, kZeros, rng);
  bind();
}

template <std::floating_point T>
void TransformerModel<T>::bind() {
  std::size_t i = 0;
  auto next = [&]() -> ag::Tensor<T>& { return params_.at(i++).tensor; };
  token_emb_ = next();
  position_emb_ = next();
  emb_ln_g_ = next();
  emb_ln_b_ = next();
  blocks_.clear();
  const int distinct = config_.weight_sharing ? 1 : config_.layers;
  for (int l = 0; l < distinct; ++l) {
    Block b;
    for (ag::Tensor<T>* slot : {&b.wq, &b.bq, &b.wk, &b.bk, &b.wv, &b.bv, &b.wo, &b.bo, &b.ln1_g, &b.ln1_b,
                                &b.w1, &b.b1, &b.w2, &b.b2, &b.ln2_g, &b.ln2_b}) {
      *slot = next();
    }
    blocks_.push_back(std::move(b));
  }
  head_w_ = next();
  head_b_ = next();
}

template <std::floating_point T>
std::vector<ag::Tensor<T>> TransformerModel<T>::parameter_tensors() const {
  std::vector<ag::Tensor<T>> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.tensor);
  return out;
}

template <std::floating_point T>
std::int64_t TransformerModel<T>::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

template <std::floating_point T>
std::int64_t TransformerModel<T>::encoder_parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : params_) {
    if (p.name.rfind("encoder.", 0) == 0) n += p.tensor.numel();
  }
  return n;
}

template <std::floating_point T>
TransformerModel<T> TransformerModel<T>::clone() const {
  TransformerModel copy(*this);
  for (auto& p : copy.params_) p.tensor = p.tensor.detach_copy(true);
  copy.bind();
  return copy;
}

template <std::floating_point T>
ForwardResult<T> TransformerModel<T>::forward(ExampleBatch batch, bool capture_attention, Rng* dropout_rng) const {
  if (batch.empty()) throw ShapeError("forward: empty batch");
  ForwardResult<T> result;
  result.inputs = pad_batch(batch, config_.vocab_size - 1, config_.max_positions);
  const auto& in = result.inputs;
  for (int tok : in.tokens) {
    if (tok < 0 || tok >= config_.vocab_size) {
      throw ShapeError("token id " + std::to_string(tok) + " outside vocabulary of " +
                       std::to_string(config_.vocab_size));
    }
  }
  const std::int64_t B = in.batch, n = in.length, d = config_.hidden, H = config_.heads, dh = d / H;
  const double p = dropout_rng ? config_.dropout : 0.0;
  const T eps = static_cast<T>(config_.layer_norm_eps);
  const T inv_sqrt_dh = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  if (capture_attention) {
    result.attention.assign(static_cast<std::size_t>(B),
                            AttentionRecord{config_.layers, config_.heads, static_cast<int>(n), {}});
    for (auto& r : result.attention) {
      r.weights.assign(static_cast<std::size_t>(config_.layers * H * n * n), 0.0);
    }
  }

  Rng no_rng;
  Rng& drng = dropout_rng ? *dropout_rng : no_rng;

  auto x = ag::add(ag::embedding(token_emb_, in.tokens), ag::embedding(position_emb_, in.positions));
  x = ag::dropout(ag::layer_norm(x, emb_ln_g_, emb_ln_b_, eps), p, drng);

  auto split_heads = [&](const ag::Tensor<T>& t) {
    if (H == 1) return ag::reshape(t, {B, n, d});
    return ag::reshape(ag::swap_axes12(ag::reshape(t, {B, n, H, dh})), {B * H, n, dh});
  };

  for (int l = 0; l < config_.layers; ++l) {
    const Block& blk = blocks_[config_.weight_sharing ? 0 : static_cast<std::size_t>(l)];
    auto q = split_heads(ag::linear(x, blk.wq, blk.bq));
    auto k = split_heads(ag::linear(x, blk.wk, blk.bk));
    auto v = split_heads(ag::linear(x, blk.wv, blk.bv));
    auto probs = ag::masked_softmax(ag::scale(ag::matmul(q, k, true), inv_sqrt_dh), in.key_valid,
                                    static_cast<int>(H));
    if (capture_attention) {
      const auto vals = probs.values();
      const std::size_t block = static_cast<std::size_t>(H * n * n);
      for (std::int64_t b = 0; b < B; ++b) {
        auto& rec = result.attention[static_cast<std::size_t>(b)];
        std::copy_n(vals.begin() + static_cast<std::ptrdiff_t>(b) * static_cast<std::ptrdiff_t>(block), block,
                    rec.weights.begin() + static_cast<std::ptrdiff_t>(l) * static_cast<std::ptrdiff_t>(block));
      }
    }
    auto ctx = ag::matmul(probs, v);
    ctx = H == 1 ? ag::reshape(ctx, {B * n, d})
                 : ag::reshape(ag::swap_axes12(ag::reshape(ctx, {B, H, n, dh})), {B * n, d});
    auto attn = ag::dropout(ag::linear(ctx, blk.wo, blk.bo), p, drng);
    x = ag::layer_norm(ag::add(x, attn), blk.ln1_g, blk.ln1_b, eps);
    auto h = ag::linear(ag::gelu(ag::linear(x, blk.w1, blk.b1)), blk.w2, blk.b2);
    h = ag::dropout(h, p, drng);
    x = ag::layer_norm(ag::add(x, h), blk.ln2_g, blk.ln2_b, eps);
  }
  result.logits = ag::linear(x, head_w_, head_b_);
  return result;
}

template <std::floating_point T>
BatchLogits TransformerModel<T>::infer_logits(ExampleBatch batch) const {
  ag::NoGradGuard guard;
  auto r = forward(batch, false);
  BatchLogits out{r.inputs.batch, r.inputs.length, config_.num_classes, {}};
  const auto v = r.logits.values();
  out.values.assign(v.begin(), v.end());
  return out;
}

template class TransformerModel<float>;
template class TransformerModel<double>;

Assignment predict_assignments(std::span<const float> logits, int classes, const TokenizedExample& example) {
  Assignment a;
  const int clauses = example.num_clauses();
  a.predicted.assign(static_cast<std::size_t>(clauses), -1);
  a.correct.assign(static_cast<std::size_t>(clauses), false);
  for (int pos = 0; pos < example.length(); ++pos) {
    const int label = example.labels[static_cast<std::size_t>(pos)];
    if (label == kNoLabel) continue;
    const auto row = logits.subspan(static_cast<std::size_t>(pos * classes), static_cast<std::size_t>(classes));
    const auto best = static_cast<ElementId>(std::max_element(row.begin(), row.end()) - row.begin());
    const int canon = example.clause_of_token(pos);
    a.predicted[static_cast<std::size_t>(canon)] = best;
    a.correct[static_cast<std::size_t>(canon)] = best == label;
  }
  return a;
}

}  // namespace lego
