#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ibakit/tensor.hpp"

namespace ibakit {

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 64;
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t d_ff = 128;
  std::size_t max_seq_len = 64;
  std::size_t n_classes = 2;

  // Throws InputError on zero counts or d_model % n_heads != 0.
  void validate() const;
  std::size_t head_dim() const { return d_model / n_heads; }
};

class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr std::string_view kPadToken = "[PAD]";
  static constexpr std::string_view kUnkToken = "[UNK]";
  static constexpr std::string_view kClsToken = "[CLS]";

  Vocab();
  // Reserved entries followed by `tokens` in id order. Duplicates or reserved
  // spellings in `tokens` throw InputError.
  explicit Vocab(std::vector<std::string> tokens);

  int id(std::string_view token) const;  // kUnk when absent
  const std::string& token(int id) const;
  std::size_t size() const { return id_to_token_.size(); }
  bool contains(std::string_view token) const;
  // Non-reserved tokens in id order.
  std::vector<std::string> regular_tokens() const;

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
};

// Lowercases ASCII letters, splits on whitespace, and emits each ASCII
// punctuation character as its own token.
std::vector<std::string> split_words(std::string_view text);

// Keeps the max_size - 3 most frequent words; ties go to the
// lexicographically smaller word. Empty corpus throws InputError.
Vocab build_vocab(std::span<const std::string> corpus, std::size_t max_size);

struct Instance {
  std::vector<int> ids;             // [CLS] w1 .. wn PAD .. (length max_seq_len)
  std::vector<std::uint8_t> mask;   // 1 on [CLS] and words, 0 on PAD
  std::vector<std::string> words;   // display text of the real tokens, "[CLS]" first
  int label = 0;

  // Real tokens including [CLS].
  std::size_t length() const;
  std::size_t word_count() const { return length() - 1; }
};

Instance tokenize(std::string_view text, const Vocab& vocab, std::size_t max_seq_len, int label = 0);

struct TrainingMetadata {
  int epochs = 0;
  std::uint64_t seed = 0;
  double train_accuracy = 0.0;
  double validation_accuracy = 0.0;
  std::vector<double> train_loss_per_epoch;
};

// Trained parameters plus everything needed to rebuild the encoder.
// Parameter names (n = layer index from 0):
//   embed.token [vocab,d]  embed.position [max_seq_len,d]
//   layer.n.attn.{wq,wk,wv,wo} [d,d]  layer.n.attn.{bq,bk,bv,bo} [d]
//   layer.n.norm1.{gain,bias} [d]
//   layer.n.ffn.w1 [d,d_ff]  layer.n.ffn.b1 [d_ff]  layer.n.ffn.w2 [d_ff,d]  layer.n.ffn.b2 [d]
//   layer.n.norm2.{gain,bias} [d]
//   head.weight [d,n_classes]  head.bias [n_classes]
struct ModelCheckpoint {
  ModelConfig config;
  Vocab vocab;
  std::map<std::string, Tensor> params;
  TrainingMetadata metadata;

  static std::vector<std::pair<std::string, Shape>> parameter_manifest(const ModelConfig& config);

  const Tensor& param(const std::string& name) const;
  // FNV-1a over the raw parameter bytes in manifest order.
  std::uint64_t fingerprint() const;
  bool all_finite() const;
  ModelCheckpoint deep_copy() const;
};

// Xavier-uniform matrices, N(0, 1) embeddings, zero biases, unit gains.
ModelCheckpoint init_checkpoint(const ModelConfig& config, Vocab vocab, std::uint64_t seed);

// Encoder with the checkpoint's tensors bound as leaves. Frozen instances
// never track parameter gradients; trainable ones own fresh gradient slots
// over the shared parameter buffers.
class Transformer {
 public:
  explicit Transformer(const ModelCheckpoint& checkpoint, bool trainable = false);

  const ModelConfig& config() const { return config_; }

  // Token embedding rows for the real tokens of `instance` -> [length, d].
  Tensor token_embeddings(const Instance& instance) const;
  // Adds positional rows to [rows, d] token embeddings (the layer-0 output).
  Tensor add_positions(const Tensor& token_embeddings) const;

  // Output of encoder block `layer` (0 = embeddings). Hidden rows cover the
  // real tokens only; PAD rows never influence [CLS], so they are dropped.
  Tensor lower(const Instance& instance, std::size_t layer) const;
  // Runs blocks layer+1 .. n_layers over `hidden` (embeddings when layer is 0).
  // mask.size() == hidden rows; masked rows are excluded as attention keys.
  Tensor run_blocks(const Tensor& hidden, std::span<const std::uint8_t> mask, std::size_t from_layer,
                    std::size_t to_layer) const;
  // Blocks above `layer` plus the classifier head on the [CLS] row -> [n_classes].
  Tensor logits_from(const Tensor& hidden, std::span<const std::uint8_t> mask, std::size_t layer) const;
  Tensor logits(const Instance& instance) const;

  // Bound parameter tensors in manifest order.
  const std::vector<std::pair<std::string, Tensor>>& parameters() const { return ordered_; }

 private:
  struct Block {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo, norm1_gain, norm1_bias;
    Tensor w1, b1, w2, b2, norm2_gain, norm2_bias;
  };

  Tensor block_forward(const Block& b, const Tensor& h, std::span<const std::uint8_t> mask) const;
  const Tensor& bind(const std::string& name, const ModelCheckpoint& checkpoint, bool trainable);

  ModelConfig config_;
  std::vector<std::pair<std::string, Tensor>> ordered_;
  Tensor token_, position_, head_weight_, head_bias_;
  std::vector<Block> blocks_;
};

// Class probabilities for a tokenized instance.
Tensor forward(const ModelCheckpoint& checkpoint, const Instance& instance);
// Hidden state after block `layer`; layer > n_layers throws RangeError.
Tensor forward_lower(const ModelCheckpoint& checkpoint, const Instance& instance, std::size_t layer);
// Probabilities from a hidden state at `layer`, differentiable w.r.t. hidden.
Tensor forward_from(const ModelCheckpoint& checkpoint, const Tensor& hidden,
                    std::span<const std::uint8_t> mask, std::size_t layer);

}  // namespace ibakit
