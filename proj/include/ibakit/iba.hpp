#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ibakit/attribution.hpp"
#include "ibakit/model.hpp"
#include "ibakit/tensor.hpp"

namespace ibakit {

inline constexpr double kStdFloor = 1e-6;
inline constexpr double kDefaultBeta = 1e-5;

enum class StatsMode {
  kPerFeature,   // one mean/std per feature, pooled over token positions
  kPerPosition,  // one mean/std per (position, feature)
};

StatsMode parse_stats_mode(const std::string& name);  // "per-feature" | "per-position"
std::string stats_mode_name(StatsMode mode);

// Gaussian noise statistics of the hidden state at one layer.
struct NoiseStats {
  StatsMode mode = StatsMode::kPerFeature;
  Tensor mean;  // [d] or [max_seq_len, d]
  Tensor std;   // same shape, every entry >= kStdFloor
  std::size_t layer = 0;
  std::size_t n_instances = 0;
  std::uint64_t seed = 0;

  // Statistics laid out as [rows, d] for a hidden state with `rows` tokens.
  Tensor mean_rows(std::size_t rows) const;
  Tensor std_rows(std::size_t rows) const;
};

// Population mean and std over every row of every hidden state. Per-position
// entries with no samples fall back to the pooled per-feature values.
NoiseStats stats_from_hidden(std::span<const Tensor> hidden, std::size_t layer, StatsMode mode,
                             std::size_t max_rows = 0, std::uint64_t seed = 0);
// Runs the checkpoint up to `layer` on each calibration instance (real
// tokens only) and pools the results.
NoiseStats estimate_noise_stats(const ModelCheckpoint& ckpt, std::span<const Instance> calibration,
                                std::size_t layer, StatsMode mode = StatsMode::kPerFeature,
                                std::uint64_t seed = 0, std::size_t jobs = 1);

enum class BottleneckOptimizer {
  kGradientDescent,  // alpha -= lr * grad
  kAdam,             // Adam with beta1 0.9, beta2 0.999, eps 1e-8
};

BottleneckOptimizer parse_optimizer(const std::string& name);  // "gd" | "adam"
std::string optimizer_name(BottleneckOptimizer opt);

struct BottleneckConfig {
  std::size_t layer = 0;
  double beta = kDefaultBeta;
  int steps = 10;
  double lr = 1.0;
  double alpha_init = 5.0;
  int duplicates = 10;
  std::uint64_t seed = 0;
  // Replace beta by estimate_beta() of the initial loss terms.
  bool auto_beta = false;
  BottleneckOptimizer optimizer = BottleneckOptimizer::kGradientDescent;

  void validate() const;  // InputError on beta <= 0, steps < 1, duplicates < 1
};

struct LossRecord {
  double ce = 0.0;     // mean over noise duplicates
  double kl = 0.0;     // summed over real-token coordinates
  double total = 0.0;  // ce + beta * kl
};

struct BottleneckState {
  Tensor alpha;  // [tokens, d]
  std::shared_ptr<const NoiseStats> stats;
  BottleneckConfig config;
  double beta = 0.0;  // effective value after auto_beta
  int target = 0;
  std::vector<LossRecord> trace;  // steps + 1 entries; the last reuses the first entry's noise

  Tensor mu() const;
  double mean_mu() const;
};

// Draws one noise sample per coordinate from N(mean, std^2) -> [rows, d].
Tensor sample_noise(const NoiseStats& stats, std::size_t rows, std::mt19937_64& rng);
// mu * x + (1 - mu) * noise with mu = sigmoid(alpha); rows with keep == 0
// pass through unchanged. Differentiable in alpha; x and noise are constants.
// An empty `keep` keeps every row.
Tensor apply_bottleneck(const Tensor& x, const Tensor& alpha, const Tensor& noise,
                        std::span<const std::uint8_t> keep = {});
Tensor inject_noise(const Tensor& x, const Tensor& alpha, const NoiseStats& stats, std::mt19937_64& rng,
                    std::span<const std::uint8_t> keep = {});

// Per-coordinate KL(N(mu x + (1-mu) m, (1-mu)^2 s^2) || N(m, s^2)) with
// z = (x - m) / s:  -ln(1-mu) + ((1-mu)^2 + mu^2 z^2) / 2 - 1/2.
// 1-mu is floored at 1e-12. Rows with keep == 0 are exactly 0.
Tensor kl_term(const Tensor& alpha, const Tensor& x, const NoiseStats& stats,
               std::span<const std::uint8_t> keep = {});

struct IbaLoss {
  Tensor total;
  Tensor ce;
  Tensor kl_sum;
};

// -log p[target] + beta * sum(kl). Target outside the distribution is an
// InputError; beta must be > 0.
IbaLoss iba_loss(const Tensor& class_probs, int target, const Tensor& kl, double beta);
// Same from log-probabilities, which stays finite when a probability underflows.
IbaLoss iba_loss_from_log_probs(const Tensor& log_probs, int target, const Tensor& kl, double beta);

// 10 * ce / kl; falls back to `fallback` (with a warning on stderr) when the
// result is not a positive finite number.
double estimate_beta(double ce_at_init, double kl_at_init, double fallback = kDefaultBeta);

// Fits a per-instance bottleneck after config.layer with plain gradient
// descent on alpha. The checkpoint is read only. Non-finite loss throws
// OptimizationError whose message carries the trace so far.
BottleneckState fit_bottleneck(const ModelCheckpoint& ckpt, const Instance& instance, int target,
                               const BottleneckConfig& config, std::shared_ptr<const NoiseStats> stats);

// Token score = sum over features of kl_term at the final alpha.
AttributionMap attribution_from_state(const BottleneckState& state, const Tensor& x,
                                      const std::vector<std::string>& tokens);

struct IbaResult {
  AttributionMap map;
  BottleneckState state;
};

IbaResult iba_attribution(const ModelCheckpoint& ckpt, const Instance& instance, int target,
                          const BottleneckConfig& config, std::shared_ptr<const NoiseStats> stats);

}  // namespace ibakit
