#include "ibakit/baselines.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "ibakit/error.hpp"
#include "ibakit/ops.hpp"

namespace ibakit {

void IGConfig::validate() const {
  if (steps < 1) throw InputError("integrated gradients: steps must be >= 1");
}

std::vector<double> integrated_gradients_core(const EmbeddingFn& f, const Tensor& input,
                                              const Tensor& baseline, int steps) {
  if (steps < 1) throw InputError("integrated gradients: steps must be >= 1");
  if (input.shape() != baseline.shape() || input.rank() != 2) {
    throw ShapeError("integrated gradients: input " + shape_str(input.shape()) + " and baseline " +
                     shape_str(baseline.shape()) + " must be equal 2-D shapes");
  }
  const std::size_t n = input.numel();
  std::vector<double> diff(n), avg(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) diff[i] = input.data()[i] - baseline.data()[i];
  for (int k = 1; k <= steps; ++k) {
    const double a = (static_cast<double>(k) - 0.5) / static_cast<double>(steps);
    std::vector<double> point(n);
    for (std::size_t i = 0; i < n; ++i) point[i] = baseline.data()[i] + a * diff[i];
    Tensor p(input.shape(), std::move(point));
    p.set_requires_grad(true);
    Tape tape;
    Tensor out;
    {
      TapeScope scope(tape);
      out = f(p);
    }
    if (out.numel() != 1) throw ContractError("integrated gradients: function output is not scalar");
    if (!out.requires_grad()) continue;  // constant in the input: zero gradient
    tape.backward(out);
    if (!p.has_grad()) continue;
    const auto g = p.grad();
    for (std::size_t i = 0; i < n; ++i) avg[i] += g[i];
  }
  const std::size_t rows = input.dim(0), d = input.dim(1);
  std::vector<double> scores(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j)
      scores[r] += diff[r * d + j] * (avg[r * d + j] / static_cast<double>(steps));
  return scores;
}

AttributionMap integrated_gradients(const ModelCheckpoint& ckpt, const Instance& instance, int target,
                                    const IGConfig& config) {
  config.validate();
  if (target < 0 || static_cast<std::size_t>(target) >= ckpt.config.n_classes) {
    throw InputError("integrated gradients: target " + std::to_string(target) + " out of range");
  }
  const Transformer net(ckpt);
  const Tensor emb = net.token_embeddings(instance).detach();
  const std::vector<std::uint8_t> mask(emb.dim(0), 1);
  const auto f = [&](const Tensor& e) {
    return select(log_softmax(net.logits_from(net.add_positions(e), mask, 0)),
                  static_cast<std::size_t>(target));
  };
  AttributionMap map;
  map.method = "ig";
  map.tokens = instance.words;
  map.scores = integrated_gradients_core(f, emb, Tensor(emb.shape(), 0.0), config.steps);
  map.target = target;
  return map;
}

void SurrogateConfig::validate(std::size_t n_words) const {
  if (!(mask_prob > 0.0 && mask_prob < 1.0)) throw InputError("lime-lite: mask_prob must be in (0,1)");
  if (ridge < 0.0) throw InputError("lime-lite: ridge must be >= 0");
  if (n_samples < 1 || static_cast<std::size_t>(n_samples) < n_words + 1) {
    throw InputError("lime-lite: n_samples " + std::to_string(n_samples) + " is below words + 1 = " +
                     std::to_string(n_words + 1));
  }
}

std::vector<double> lime_lite_core(const MaskedProbFn& prob, std::size_t n_words, const SurrogateConfig& config) {
  config.validate(n_words);
  if (n_words == 0) return {};
  const auto n = static_cast<Eigen::Index>(config.n_samples);
  const auto w = static_cast<Eigen::Index>(n_words);
  Eigen::MatrixXd z(n, w);
  Eigen::VectorXd y(n);
  std::mt19937_64 rng(config.seed);
  std::bernoulli_distribution drop(config.mask_prob);
  std::vector<std::uint8_t> keep(n_words);
  for (Eigen::Index s = 0; s < n; ++s) {
    for (std::size_t i = 0; i < n_words; ++i) keep[i] = drop(rng) ? 0 : 1;
    for (Eigen::Index i = 0; i < w; ++i) z(s, i) = keep[static_cast<std::size_t>(i)];
    y(s) = prob(keep);
  }
  const Eigen::RowVectorXd z_mean = z.colwise().mean();
  const Eigen::MatrixXd zc = z.rowwise() - z_mean;
  const Eigen::VectorXd yc = y.array() - y.mean();
  Eigen::MatrixXd normal = zc.transpose() * zc;
  normal.diagonal().array() += config.ridge;
  const Eigen::LLT<Eigen::MatrixXd> llt(normal);
  if (llt.info() != Eigen::Success) {
    throw NumericError("lime-lite: normal equations are singular; raise ridge or n_samples");
  }
  const Eigen::VectorXd coef = llt.solve(zc.transpose() * yc);
  if (!coef.allFinite()) throw NumericError("lime-lite: non-finite coefficients");
  return {coef.data(), coef.data() + coef.size()};
}

AttributionMap lime_lite(const ModelCheckpoint& ckpt, const Instance& instance, int target,
                         const SurrogateConfig& config) {
  if (target < 0 || static_cast<std::size_t>(target) >= ckpt.config.n_classes) {
    throw InputError("lime-lite: target " + std::to_string(target) + " out of range");
  }
  const std::size_t n_words = instance.word_count();
  const Transformer net(ckpt);
  const auto prob = [&](const std::vector<std::uint8_t>& keep) {
    Instance masked = instance;
    for (std::size_t i = 0; i < n_words; ++i)
      if (!keep[i]) masked.ids[i + 1] = Vocab::kUnk;
    return softmax(net.logits(masked)).at(static_cast<std::size_t>(target));
  };
  AttributionMap map;
  map.method = "lime-lite";
  map.tokens = instance.words;
  map.scores.push_back(0.0);
  const auto coef = lime_lite_core(prob, n_words, config);
  map.scores.insert(map.scores.end(), coef.begin(), coef.end());
  map.target = target;
  map.seed = config.seed;
  return map;
}

AttributionMap random_attribution(const Instance& instance, std::uint64_t seed, int target) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  AttributionMap map;
  map.method = "random";
  map.tokens = instance.words;
  for (std::size_t i = 0; i < instance.length(); ++i) {
    // generate_canonical may round up to 1.0 on some standard libraries
    map.scores.push_back(std::min(u(rng), std::nextafter(1.0, 0.0)));
  }
  map.target = target;
  map.seed = seed;
  return map;
}

}  // namespace ibakit
