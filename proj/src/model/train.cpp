#include "ibakit/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "ibakit/error.hpp"
#include "ibakit/ops.hpp"
#include "ibakit/parallel.hpp"

namespace ibakit {

std::vector<Instance> tokenize_all(const std::vector<Example>& examples, const ModelCheckpoint& ckpt) {
  std::vector<Instance> out;
  out.reserve(examples.size());
  for (const auto& e : examples) {
    if (e.label < 0 || static_cast<std::size_t>(e.label) >= ckpt.config.n_classes) {
      throw InputError("label " + std::to_string(e.label) + " outside the model's " +
                       std::to_string(ckpt.config.n_classes) + " classes");
    }
    out.push_back(tokenize(e.text, ckpt.vocab, ckpt.config.max_seq_len, e.label));
  }
  return out;
}

int predict(const ModelCheckpoint& ckpt, const Instance& instance) {
  const Tensor p = forward(ckpt, instance);
  const auto d = p.data();
  return static_cast<int>(std::max_element(d.begin(), d.end()) - d.begin());
}

double accuracy(const ModelCheckpoint& ckpt, const std::vector<Instance>& instances, std::size_t jobs) {
  if (instances.empty()) return 0.0;
  std::vector<int> hit(instances.size(), 0);
  parallel_for(instances.size(), jobs,
               [&](std::size_t i) { hit[i] = predict(ckpt, instances[i]) == instances[i].label; });
  return static_cast<double>(std::accumulate(hit.begin(), hit.end(), 0)) /
         static_cast<double>(instances.size());
}

double mean_loss(const ModelCheckpoint& ckpt, const std::vector<Instance>& instances, std::size_t jobs) {
  if (instances.empty()) return 0.0;
  std::vector<double> loss(instances.size(), 0.0);
  parallel_for(instances.size(), jobs, [&](std::size_t i) {
    const Tensor lp = log_softmax(Transformer(ckpt).logits(instances[i]));
    loss[i] = -lp.at(static_cast<std::size_t>(instances[i].label));
  });
  double total = 0.0;
  for (double l : loss) total += l;
  return total / static_cast<double>(instances.size());
}

namespace {

// d(cross entropy)/d(parameter) for one example, in manifest order.
std::vector<std::vector<double>> example_gradient(const ModelCheckpoint& ckpt, const Instance& inst) {
  Transformer net(ckpt, /*trainable=*/true);
  Tape tape;
  Tensor loss;
  {
    TapeScope scope(tape);
    const Tensor lp = log_softmax(net.logits(inst));
    loss = neg(select(lp, static_cast<std::size_t>(inst.label)));
  }
  tape.backward(loss);
  std::vector<std::vector<double>> g;
  g.reserve(net.parameters().size());
  for (const auto& [name, t] : net.parameters()) {
    if (t.has_grad()) {
      const auto gr = t.grad();
      g.emplace_back(gr.begin(), gr.end());
    } else {
      g.emplace_back(t.numel(), 0.0);
    }
  }
  return g;
}

}  // namespace

ModelCheckpoint train(const std::vector<Example>& train_set, const std::vector<Example>& validation,
                      const ModelConfig& config, const TrainConfig& options,
                      const EpochCallback& on_epoch) {
  if (train_set.empty()) throw InputError("train: empty training set");
  if (options.epochs < 0 || options.batch < 1 || !(options.lr > 0.0) || options.momentum < 0.0 ||
      options.momentum >= 1.0) {
    throw InputError("train: need epochs >= 0, batch >= 1, lr > 0 and momentum in [0,1)");
  }
  std::set<int> classes;
  for (const auto& e : train_set) {
    if (e.label < 0) throw InputError("train: negative label");
    classes.insert(e.label);
  }
  if (classes.size() < 2) throw InputError("train: corpus has a single class; need at least two");

  std::vector<std::string> texts;
  texts.reserve(train_set.size());
  for (const auto& e : train_set) texts.push_back(e.text);
  ModelConfig cfg = config;
  cfg.n_classes = static_cast<std::size_t>(*classes.rbegin()) + 1;
  ModelCheckpoint ckpt = init_checkpoint(cfg, build_vocab(texts, options.max_vocab), options.seed);
  const std::vector<Instance> train_inst = tokenize_all(train_set, ckpt);

  const auto manifest = ModelCheckpoint::parameter_manifest(ckpt.config);
  std::vector<std::vector<double>> velocity;
  for (const auto& [name, shape] : manifest) velocity.emplace_back(shape_numel(shape), 0.0);

  std::vector<std::size_t> order(train_inst.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= options.epochs; ++epoch) {
    std::mt19937_64 rng(mix_seed(options.seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += options.batch) {
      const std::size_t n = std::min(options.batch, order.size() - start);
      std::vector<std::vector<std::vector<double>>> grads(n);
      parallel_for(n, options.jobs, [&](std::size_t i) {
        grads[i] = example_gradient(ckpt, train_inst[order[start + i]]);
      });
      const double inv_n = 1.0 / static_cast<double>(n);
      for (std::size_t p = 0; p < manifest.size(); ++p) {
        auto w = ckpt.params.at(manifest[p].first).mutable_data();
        auto& v = velocity[p];
        for (std::size_t k = 0; k < w.size(); ++k) {
          double g = 0.0;
          for (std::size_t i = 0; i < n; ++i) g += grads[i][p][k];
          v[k] = options.momentum * v[k] + g * inv_n;
          w[k] -= options.lr * v[k];
        }
      }
    }
    const double loss = mean_loss(ckpt, train_inst, options.jobs);
    if (!std::isfinite(loss)) throw NumericError("train: loss became non-finite in epoch " + std::to_string(epoch));
    ckpt.metadata.train_loss_per_epoch.push_back(loss);
    if (on_epoch) on_epoch(epoch, loss);
  }
  ckpt.metadata.epochs = options.epochs;
  ckpt.metadata.seed = options.seed;
  ckpt.metadata.train_accuracy = accuracy(ckpt, train_inst, options.jobs);
  ckpt.metadata.validation_accuracy =
      validation.empty() ? 0.0 : accuracy(ckpt, tokenize_all(validation, ckpt), options.jobs);
  return ckpt;
}

}  // namespace ibakit
