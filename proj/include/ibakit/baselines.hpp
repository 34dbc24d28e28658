#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "ibakit/attribution.hpp"
#include "ibakit/model.hpp"
#include "ibakit/tensor.hpp"

namespace ibakit {

struct IGConfig {
  int steps = 10;
  void validate() const;
};

// Differentiable scalar of a [tokens, d] embedding matrix.
using EmbeddingFn = std::function<Tensor(const Tensor&)>;

// Midpoint-rule path integral from `baseline` to `input`:
//   score_r = sum_j (input - baseline)[r,j] * mean_k grad f(baseline + a_k (input - baseline))[r,j]
// with a_k = (k - 1/2) / steps.
std::vector<double> integrated_gradients_core(const EmbeddingFn& f, const Tensor& input,
                                              const Tensor& baseline, int steps);

// IG over token embeddings of the real tokens with an all-zero baseline;
// positional embeddings stay in place. f = log p(target).
AttributionMap integrated_gradients(const ModelCheckpoint& ckpt, const Instance& instance, int target,
                                    const IGConfig& config);

struct SurrogateConfig {
  int n_samples = 100;
  double mask_prob = 0.3;
  double ridge = 1e-3;
  std::uint64_t seed = 0;
  void validate(std::size_t n_words) const;
};

// Target probability of an instance whose words with keep == 0 are replaced.
// keep.size() == number of words (the [CLS] slot is excluded).
using MaskedProbFn = std::function<double(const std::vector<std::uint8_t>& keep)>;

// Ridge regression of probability on word-keep indicators (centered, so the
// intercept is unpenalized). Returns one coefficient per word.
std::vector<double> lime_lite_core(const MaskedProbFn& prob, std::size_t n_words, const SurrogateConfig& config);

// Dropped words become [UNK]; [CLS] gets score 0.
AttributionMap lime_lite(const ModelCheckpoint& ckpt, const Instance& instance, int target,
                         const SurrogateConfig& config);

// Uniform [0,1) scores over the real tokens.
AttributionMap random_attribution(const Instance& instance, std::uint64_t seed, int target = 0);

}  // namespace ibakit
