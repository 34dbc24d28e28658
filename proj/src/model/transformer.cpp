#include <cmath>
#include <cstring>
#include <random>

#include "ibakit/error.hpp"
#include "ibakit/model.hpp"
#include "ibakit/ops.hpp"

namespace ibakit {

void ModelConfig::validate() const {
  if (vocab_size < 4 || d_model < 1 || n_layers < 1 || n_heads < 1 || d_ff < 1 ||
      max_seq_len < 1 || n_classes < 1) {
    throw InputError("model config: every count must be >= 1 and vocab_size >= 4");
  }
  if (d_model % n_heads != 0) {
    throw InputError("model config: d_model " + std::to_string(d_model) +
                     " is not divisible by n_heads " + std::to_string(n_heads));
  }
}

std::vector<std::pair<std::string, Shape>> ModelCheckpoint::parameter_manifest(const ModelConfig& c) {
  const std::size_t d = c.d_model;
  std::vector<std::pair<std::string, Shape>> m;
  m.emplace_back("embed.token", Shape{c.vocab_size, d});
  m.emplace_back("embed.position", Shape{c.max_seq_len, d});
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string p = "layer." + std::to_string(l) + ".";
    for (const char* w : {"wq", "wk", "wv", "wo"}) m.emplace_back(p + "attn." + w, Shape{d, d});
    for (const char* b : {"bq", "bk", "bv", "bo"}) m.emplace_back(p + "attn." + b, Shape{d});
    m.emplace_back(p + "norm1.gain", Shape{d});
    m.emplace_back(p + "norm1.bias", Shape{d});
    m.emplace_back(p + "ffn.w1", Shape{d, c.d_ff});
    m.emplace_back(p + "ffn.b1", Shape{c.d_ff});
    m.emplace_back(p + "ffn.w2", Shape{c.d_ff, d});
    m.emplace_back(p + "ffn.b2", Shape{d});
    m.emplace_back(p + "norm2.gain", Shape{d});
    m.emplace_back(p + "norm2.bias", Shape{d});
  }
  m.emplace_back("head.weight", Shape{d, c.n_classes});
  m.emplace_back("head.bias", Shape{c.n_classes});
  return m;
}

const Tensor& ModelCheckpoint::param(const std::string& name) const {
  const auto it = params.find(name);
  if (it == params.end()) throw InputError("checkpoint has no parameter '" + name + "'");
  return it->second;
}

std::uint64_t ModelCheckpoint::fingerprint() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [name, shape] : parameter_manifest(config)) {
    const auto d = param(name).data();
    mix(name.data(), name.size());
    mix(d.data(), d.size() * sizeof(double));
  }
  return h;
}

bool ModelCheckpoint::all_finite() const {
  for (const auto& [name, t] : params) {
    if (!t.is_finite()) return false;
  }
  return true;
}

ModelCheckpoint ModelCheckpoint::deep_copy() const {
  ModelCheckpoint c{config, vocab, {}, metadata};
  for (const auto& [name, t] : params) c.params.emplace(name, t.clone());
  return c;
}

ModelCheckpoint init_checkpoint(const ModelConfig& config, Vocab vocab, std::uint64_t seed) {
  ModelConfig cfg = config;
  cfg.vocab_size = vocab.size();
  cfg.validate();
  ModelCheckpoint ckpt{cfg, std::move(vocab), {}, {}};
  ckpt.metadata.seed = seed;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (const auto& [name, shape] : ModelCheckpoint::parameter_manifest(cfg)) {
    std::vector<double> v(shape_numel(shape), 0.0);
    const bool is_gain = name.ends_with(".gain");
    if (name.starts_with("embed.")) {
      for (double& x : v) x = normal(rng);
    } else if (shape.size() == 2) {
      const double limit = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
      std::uniform_real_distribution<double> u(-limit, limit);
      for (double& x : v) x = u(rng);
    } else if (is_gain) {
      std::fill(v.begin(), v.end(), 1.0);
    }
    ckpt.params.emplace(name, Tensor(shape, std::move(v)));
  }
  return ckpt;
}

const Tensor& Transformer::bind(const std::string& name, const ModelCheckpoint& checkpoint,
                                bool trainable) {
  ordered_.emplace_back(name, checkpoint.param(name).alias(trainable));
  return ordered_.back().second;
}

Transformer::Transformer(const ModelCheckpoint& checkpoint, bool trainable)
    : config_(checkpoint.config) {
  config_.validate();
  const auto manifest = ModelCheckpoint::parameter_manifest(config_);
  ordered_.reserve(manifest.size());
  for (const auto& [name, shape] : manifest) {
    if (checkpoint.param(name).shape() != shape) {
      throw ShapeError("parameter " + name + " has shape " +
                       shape_str(checkpoint.param(name).shape()) + ", expected " + shape_str(shape));
    }
  }
  token_ = bind("embed.token", checkpoint, trainable);
  position_ = bind("embed.position", checkpoint, trainable);
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    const std::string p = "layer." + std::to_string(l) + ".";
    Block b;
    b.wq = bind(p + "attn.wq", checkpoint, trainable);
    b.wk = bind(p + "attn.wk", checkpoint, trainable);
    b.wv = bind(p + "attn.wv", checkpoint, trainable);
    b.wo = bind(p + "attn.wo", checkpoint, trainable);
    b.bq = bind(p + "attn.bq", checkpoint, trainable);
    b.bk = bind(p + "attn.bk", checkpoint, trainable);
    b.bv = bind(p + "attn.bv", checkpoint, trainable);
    b.bo = bind(p + "attn.bo", checkpoint, trainable);
    b.norm1_gain = bind(p + "norm1.gain", checkpoint, trainable);
    b.norm1_bias = bind(p + "norm1.bias", checkpoint, trainable);
    b.w1 = bind(p + "ffn.w1", checkpoint, trainable);
    b.b1 = bind(p + "ffn.b1", checkpoint, trainable);
    b.w2 = bind(p + "ffn.w2", checkpoint, trainable);
    b.b2 = bind(p + "ffn.b2", checkpoint, trainable);
    b.norm2_gain = bind(p + "norm2.gain", checkpoint, trainable);
    b.norm2_bias = bind(p + "norm2.bias", checkpoint, trainable);
    blocks_.push_back(std::move(b));
  }
  head_weight_ = bind("head.weight", checkpoint, trainable);
  head_bias_ = bind("head.bias", checkpoint, trainable);
}

Tensor Transformer::token_embeddings(const Instance& instance) const {
  const std::size_t n = instance.length();
  if (n == 0 || n > config_.max_seq_len || instance.ids.size() < n) {
    throw ShapeError("instance has " + std::to_string(n) + " real tokens; max_seq_len is " +
                     std::to_string(config_.max_seq_len));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!instance.mask[i]) throw InputError("instance mask must mark a prefix of real tokens");
  }
  return gather_rows(token_, std::span<const int>(instance.ids.data(), n));
}

Tensor Transformer::add_positions(const Tensor& token_embeddings) const {
  if (token_embeddings.rank() != 2 || token_embeddings.dim(1) != config_.d_model ||
      token_embeddings.dim(0) > config_.max_seq_len) {
    throw ShapeError("token embeddings " + shape_str(token_embeddings.shape()) +
                     " do not fit d_model " + std::to_string(config_.d_model));
  }
  return add(token_embeddings, slice(position_, 0, 0, token_embeddings.dim(0)));
}

Tensor Transformer::block_forward(const Block& b, const Tensor& h,
                                  std::span<const std::uint8_t> mask) const {
  const std::size_t dh = config_.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const Tensor q = add(matmul(h, b.wq), b.bq);
  const Tensor k = add(matmul(h, b.wk), b.bk);
  const Tensor v = add(matmul(h, b.wv), b.bv);
  std::vector<Tensor> heads;
  heads.reserve(config_.n_heads);
  for (std::size_t i = 0; i < config_.n_heads; ++i) {
    const Tensor qh = slice(q, 1, i * dh, (i + 1) * dh);
    const Tensor kh = slice(k, 1, i * dh, (i + 1) * dh);
    const Tensor vh = slice(v, 1, i * dh, (i + 1) * dh);
    const Tensor scores = mul_scalar(matmul(qh, transpose(kh)), scale);
    heads.push_back(matmul(masked_softmax(scores, mask), vh));
  }
  const Tensor attn = add(matmul(concat(heads, 1), b.wo), b.bo);
  const Tensor h1 = layer_norm(add(h, attn), b.norm1_gain, b.norm1_bias);
  const Tensor ff = add(matmul(gelu(add(matmul(h1, b.w1), b.b1)), b.w2), b.b2);
  return layer_norm(add(h1, ff), b.norm2_gain, b.norm2_bias);
}

Tensor Transformer::run_blocks(const Tensor& hidden, std::span<const std::uint8_t> mask,
                               std::size_t from_layer, std::size_t to_layer) const {
  if (from_layer > to_layer || to_layer > config_.n_layers) {
    throw RangeError("layer range (" + std::to_string(from_layer) + "," + std::to_string(to_layer) +
                     "] outside 0.." + std::to_string(config_.n_layers));
  }
  if (hidden.rank() != 2 || hidden.dim(1) != config_.d_model || hidden.dim(0) != mask.size() ||
      hidden.dim(0) == 0) {
    throw ShapeError("hidden state " + shape_str(hidden.shape()) + " with mask of " +
                     std::to_string(mask.size()) + " does not match d_model " +
                     std::to_string(config_.d_model));
  }
  Tensor h = hidden;
  for (std::size_t l = from_layer; l < to_layer; ++l) h = block_forward(blocks_[l], h, mask);
  return h;
}

Tensor Transformer::lower(const Instance& instance, std::size_t layer) const {
  if (layer > config_.n_layers) {
    throw RangeError("layer " + std::to_string(layer) + " outside 0.." +
                     std::to_string(config_.n_layers));
  }
  const Tensor emb = add_positions(token_embeddings(instance));
  const std::vector<std::uint8_t> mask(emb.dim(0), 1);
  return run_blocks(emb, mask, 0, layer);
}

Tensor Transformer::logits_from(const Tensor& hidden, std::span<const std::uint8_t> mask,
                                std::size_t layer) const {
  const Tensor top = run_blocks(hidden, mask, layer, config_.n_layers);
  const Tensor cls = slice(top, 0, 0, 1);
  return reshape(add(matmul(cls, head_weight_), head_bias_), {config_.n_classes});
}

Tensor Transformer::logits(const Instance& instance) const {
  const Tensor emb = add_positions(token_embeddings(instance));
  const std::vector<std::uint8_t> mask(emb.dim(0), 1);
  return logits_from(emb, mask, 0);
}

Tensor forward(const ModelCheckpoint& checkpoint, const Instance& instance) {
  Tensor p = softmax(Transformer(checkpoint).logits(instance));
  p.check_finite("forward");
  return p;
}

Tensor forward_lower(const ModelCheckpoint& checkpoint, const Instance& instance, std::size_t layer) {
  return Transformer(checkpoint).lower(instance, layer);
}

Tensor forward_from(const ModelCheckpoint& checkpoint, const Tensor& hidden,
                    std::span<const std::uint8_t> mask, std::size_t layer) {
  Tensor p = softmax(Transformer(checkpoint).logits_from(hidden, mask, layer));
  p.check_finite("forward_from");
  return p;
}

}  // namespace ibakit
