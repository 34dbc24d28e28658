#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "ibakit/corpus.hpp"
#include "ibakit/model.hpp"

namespace ibakit {

struct TrainConfig {
  int epochs = 6;
  std::size_t batch = 16;
  double lr = 0.02;
  double momentum = 0.9;
  std::uint64_t seed = 1;
  std::size_t max_vocab = 2000;
  // Threads for per-example gradients inside a batch; results are identical
  // for any value.
  std::size_t jobs = 1;
};

// Optional per-epoch hook: (epoch from 1, full-training-set loss).
using EpochCallback = std::function<void(int, double)>;

// Builds the vocabulary from `train`, initializes from the seed and runs
// mini-batch SGD with momentum on mean cross entropy. Labels must cover at
// least two classes; n_classes becomes max label + 1.
ModelCheckpoint train(const std::vector<Example>& train, const std::vector<Example>& validation,
                      const ModelConfig& config, const TrainConfig& options,
                      const EpochCallback& on_epoch = {});

std::vector<Instance> tokenize_all(const std::vector<Example>& examples, const ModelCheckpoint& ckpt);
int predict(const ModelCheckpoint& ckpt, const Instance& instance);
double accuracy(const ModelCheckpoint& ckpt, const std::vector<Instance>& instances, std::size_t jobs = 1);
// Mean cross entropy of the gold labels.
double mean_loss(const ModelCheckpoint& ckpt, const std::vector<Instance>& instances, std::size_t jobs = 1);

}  // namespace ibakit
