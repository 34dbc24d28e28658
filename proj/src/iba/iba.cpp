#include "ibakit/iba.hpp"

#include <cmath>
#include <iostream>
#include <sstream>

#include "ibakit/error.hpp"
#include "ibakit/ops.hpp"
#include "ibakit/parallel.hpp"

namespace ibakit {

StatsMode parse_stats_mode(const std::string& name) {
  if (name == "per-feature") return StatsMode::kPerFeature;
  if (name == "per-position") return StatsMode::kPerPosition;
  throw InputError("unknown stats mode '" + name + "' (expected per-feature or per-position)");
}

std::string stats_mode_name(StatsMode mode) {
  return mode == StatsMode::kPerFeature ? "per-feature" : "per-position";
}

namespace {

Tensor rows_of(const Tensor& t, StatsMode mode, std::size_t rows, const char* what) {
  if (mode == StatsMode::kPerFeature) {
    const std::size_t d = t.dim(0);
    std::vector<double> out(rows * d);
    for (std::size_t r = 0; r < rows; ++r) std::copy(t.data().begin(), t.data().end(), out.begin() + r * d);
    return Tensor({rows, d}, std::move(out));
  }
  if (rows > t.dim(0)) {
    throw ShapeError(std::string("noise ") + what + " covers " + std::to_string(t.dim(0)) +
                     " positions, hidden state has " + std::to_string(rows));
  }
  return slice(t, 0, 0, rows).detach();
}

// All-ones except rows with keep == 0, as a [rows, d] constant.
Tensor row_mask(std::span<const std::uint8_t> keep, std::size_t rows, std::size_t d) {
  if (!keep.empty() && keep.size() != rows) {
    throw ShapeError("keep mask of length " + std::to_string(keep.size()) + " for " +
                     std::to_string(rows) + " rows");
  }
  std::vector<double> m(rows * d, 1.0);
  for (std::size_t r = 0; r < keep.size(); ++r) {
    if (!keep[r]) std::fill(m.begin() + r * d, m.begin() + (r + 1) * d, 0.0);
  }
  return Tensor({rows, d}, std::move(m));
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape() || a.rank() != 2) {
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " must be equal and 2-D");
  }
}

}  // namespace

Tensor NoiseStats::mean_rows(std::size_t rows) const { return rows_of(mean, mode, rows, "mean"); }
Tensor NoiseStats::std_rows(std::size_t rows) const { return rows_of(std, mode, rows, "std"); }

NoiseStats stats_from_hidden(std::span<const Tensor> hidden, std::size_t layer, StatsMode mode,
                             std::size_t max_rows, std::uint64_t seed) {
  std::size_t d = 0;
  std::size_t longest = 0;
  std::size_t used = 0;
  for (const Tensor& h : hidden) {
    if (h.rank() != 2) throw ShapeError("hidden state must be 2-D, got " + shape_str(h.shape()));
    if (h.dim(0) == 0) continue;
    if (d == 0) d = h.dim(1);
    if (h.dim(1) != d) throw ShapeError("hidden states disagree on feature width");
    longest = std::max(longest, h.dim(0));
    ++used;
  }
  if (hidden.empty()) throw InputError("noise statistics: empty calibration set");
  if (used == 0) throw InputError("noise statistics: every calibration instance is empty");
  const std::size_t positions = std::max(max_rows, longest);

  // Two passes per coordinate: mean first, then squared deviations.
  std::vector<double> sum(d, 0.0), pos_sum(positions * d, 0.0);
  std::vector<std::size_t> pos_count(positions, 0);
  std::size_t count = 0;
  for (const Tensor& h : hidden) {
    const auto v = h.data();
    for (std::size_t r = 0; r < h.numel() / std::max<std::size_t>(d, 1); ++r) {
      for (std::size_t j = 0; j < d; ++j) {
        sum[j] += v[r * d + j];
        pos_sum[r * d + j] += v[r * d + j];
      }
      ++pos_count[r];
      ++count;
    }
  }
  std::vector<double> mean(d), pos_mean(positions * d);
  for (std::size_t j = 0; j < d; ++j) mean[j] = sum[j] / static_cast<double>(count);
  for (std::size_t r = 0; r < positions; ++r)
    for (std::size_t j = 0; j < d; ++j)
      pos_mean[r * d + j] = pos_count[r] ? pos_sum[r * d + j] / static_cast<double>(pos_count[r]) : mean[j];

  std::vector<double> sq(d, 0.0), pos_sq(positions * d, 0.0);
  for (const Tensor& h : hidden) {
    const auto v = h.data();
    for (std::size_t r = 0; r < h.numel() / std::max<std::size_t>(d, 1); ++r) {
      for (std::size_t j = 0; j < d; ++j) {
        const double a = v[r * d + j] - mean[j];
        const double b = v[r * d + j] - pos_mean[r * d + j];
        sq[j] += a * a;
        pos_sq[r * d + j] += b * b;
      }
    }
  }
  std::vector<double> sd(d), pos_sd(positions * d);
  for (std::size_t j = 0; j < d; ++j) sd[j] = std::max(kStdFloor, std::sqrt(sq[j] / static_cast<double>(count)));
  for (std::size_t r = 0; r < positions; ++r)
    for (std::size_t j = 0; j < d; ++j)
      pos_sd[r * d + j] = pos_count[r] ? std::max(kStdFloor, std::sqrt(pos_sq[r * d + j] /
                                                                        static_cast<double>(pos_count[r])))
                                       : sd[j];

  NoiseStats s;
  s.mode = mode;
  s.layer = layer;
  s.n_instances = used;
  s.seed = seed;
  if (mode == StatsMode::kPerFeature) {
    s.mean = Tensor({d}, std::move(mean));
    s.std = Tensor({d}, std::move(sd));
  } else {
    s.mean = Tensor({positions, d}, std::move(pos_mean));
    s.std = Tensor({positions, d}, std::move(pos_sd));
  }
  return s;
}

NoiseStats estimate_noise_stats(const ModelCheckpoint& ckpt, std::span<const Instance> calibration,
                                std::size_t layer, StatsMode mode, std::uint64_t seed, std::size_t jobs) {
  if (calibration.empty()) throw InputError("noise statistics: empty calibration set");
  std::vector<Tensor> hidden(calibration.size());
  parallel_for(calibration.size(), jobs,
               [&](std::size_t i) { hidden[i] = forward_lower(ckpt, calibration[i], layer); });
  return stats_from_hidden(hidden, layer, mode, ckpt.config.max_seq_len, seed);
}

BottleneckOptimizer parse_optimizer(const std::string& name) {
  if (name == "gd") return BottleneckOptimizer::kGradientDescent;
  if (name == "adam") return BottleneckOptimizer::kAdam;
  throw InputError("unknown optimizer '" + name + "' (expected gd or adam)");
}

std::string optimizer_name(BottleneckOptimizer opt) {
  return opt == BottleneckOptimizer::kAdam ? "adam" : "gd";
}

void BottleneckConfig::validate() const {
  if (!(beta > 0.0) || !std::isfinite(beta)) throw InputError("bottleneck: beta must be > 0");
  if (steps < 1) throw InputError("bottleneck: steps must be >= 1");
  if (duplicates < 1) throw InputError("bottleneck: duplicates must be >= 1");
  if (!(lr > 0.0)) throw InputError("bottleneck: lr must be > 0");
  if (!std::isfinite(alpha_init)) throw InputError("bottleneck: alpha_init must be finite");
}

Tensor BottleneckState::mu() const { return sigmoid(alpha.detach()); }

double BottleneckState::mean_mu() const {
  const Tensor m = mu();
  double s = 0.0;
  for (double v : m.data()) s += v;
  return s / static_cast<double>(m.numel());
}

Tensor sample_noise(const NoiseStats& stats, std::size_t rows, std::mt19937_64& rng) {
  const Tensor mean = stats.mean_rows(rows);
  const Tensor sd = stats.std_rows(rows);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> out(mean.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mean.data()[i] + sd.data()[i] * normal(rng);
  return Tensor(mean.shape(), std::move(out));
}

Tensor apply_bottleneck(const Tensor& x, const Tensor& alpha, const Tensor& noise,
                        std::span<const std::uint8_t> keep) {
  require_same(x, alpha, "apply_bottleneck");
  require_same(x, noise, "apply_bottleneck");
  Tensor mu = sigmoid(alpha);
  if (!keep.empty()) {
    const Tensor m = row_mask(keep, x.dim(0), x.dim(1));
    mu = add(mul(mu, m), add_scalar(neg(m), 1.0));
  }
  const Tensor xc = x.detach();
  const Tensor nc = noise.detach();
  return add(mul(mu, xc), mul(add_scalar(neg(mu), 1.0), nc));
}

Tensor inject_noise(const Tensor& x, const Tensor& alpha, const NoiseStats& stats, std::mt19937_64& rng,
                    std::span<const std::uint8_t> keep) {
  require_same(x, alpha, "inject_noise");
  return apply_bottleneck(x, alpha, sample_noise(stats, x.dim(0), rng), keep);
}

Tensor kl_term(const Tensor& alpha, const Tensor& x, const NoiseStats& stats,
               std::span<const std::uint8_t> keep) {
  require_same(x, alpha, "kl_term");
  const std::size_t rows = x.dim(0);
  const Tensor mean = stats.mean_rows(rows);
  const Tensor sd = stats.std_rows(rows);
  if (mean.dim(1) != x.dim(1)) {
    throw ShapeError("kl_term: noise statistics of width " + std::to_string(mean.dim(1)) +
                     " for hidden state " + shape_str(x.shape()));
  }
  std::vector<double> z2(x.numel());
  for (std::size_t i = 0; i < z2.size(); ++i) {
    const double z = (x.data()[i] - mean.data()[i]) / sd.data()[i];
    z2[i] = z * z;
  }
  const Tensor mu = sigmoid(alpha);
  const Tensor keep_frac = clamp_min(add_scalar(neg(mu), 1.0), 1e-12);
  // ((1-mu)^2 - 1)/2 as ((1-mu) - 1)((1-mu) + 1)/2: the first factor is exact,
  // which keeps small-mu values from cancelling below zero.
  const Tensor shrink = mul_scalar(mul(add_scalar(keep_frac, -1.0), add_scalar(keep_frac, 1.0)), 0.5);
  const Tensor signal = mul_scalar(mul(mul(mu, mu), Tensor(x.shape(), std::move(z2))), 0.5);
  Tensor kl = add(add(neg(log(keep_frac)), shrink), signal);
  if (!keep.empty()) kl = mul(kl, row_mask(keep, rows, x.dim(1)));
  return kl;
}

IbaLoss iba_loss_from_log_probs(const Tensor& log_probs, int target, const Tensor& kl, double beta) {
  if (log_probs.rank() != 1) throw ShapeError("iba_loss: expected a 1-D distribution, got " + shape_str(log_probs.shape()));
  if (target < 0 || static_cast<std::size_t>(target) >= log_probs.numel()) {
    throw InputError("iba_loss: target " + std::to_string(target) + " outside " +
                     std::to_string(log_probs.numel()) + " classes");
  }
  if (!(beta > 0.0)) throw InputError("iba_loss: beta must be > 0");
  IbaLoss out;
  out.ce = neg(select(log_probs, static_cast<std::size_t>(target)));
  out.kl_sum = sum_all(kl);
  out.total = add(out.ce, mul_scalar(out.kl_sum, beta));
  return out;
}

IbaLoss iba_loss(const Tensor& class_probs, int target, const Tensor& kl, double beta) {
  return iba_loss_from_log_probs(log(class_probs), target, kl, beta);
}

double estimate_beta(double ce_at_init, double kl_at_init, double fallback) {
  const double beta = 10.0 * ce_at_init / kl_at_init;
  if (!(kl_at_init > 0.0) || !(beta > 0.0) || !std::isfinite(beta)) {
    std::cerr << "warning: beta estimate from ce=" << ce_at_init << " kl=" << kl_at_init
              << " is not positive; using " << fallback << "\n";
    return fallback;
  }
  return beta;
}

namespace {

std::string trace_str(const std::vector<LossRecord>& trace) {
  std::ostringstream os;
  os << "trace [";
  for (std::size_t i = 0; i < trace.size(); ++i) {
    if (i) os << "; ";
    os << "ce=" << trace[i].ce << " kl=" << trace[i].kl << " total=" << trace[i].total;
  }
  os << "]";
  return os.str();
}

}  // namespace

BottleneckState fit_bottleneck(const ModelCheckpoint& ckpt, const Instance& instance, int target,
                               const BottleneckConfig& config, std::shared_ptr<const NoiseStats> stats) {
  config.validate();
  if (!stats) throw InputError("fit_bottleneck: missing noise statistics");
  if (stats->layer != config.layer) {
    throw InputError("fit_bottleneck: noise statistics are for layer " + std::to_string(stats->layer) +
                     ", bottleneck is at layer " + std::to_string(config.layer));
  }
  if (target < 0 || static_cast<std::size_t>(target) >= ckpt.config.n_classes) {
    throw InputError("fit_bottleneck: target " + std::to_string(target) + " outside " +
                     std::to_string(ckpt.config.n_classes) + " classes");
  }
  const Transformer net(ckpt);
  const Tensor x = net.lower(instance, config.layer);
  const std::vector<std::uint8_t> mask(x.dim(0), 1);

  BottleneckState state;
  state.alpha = Tensor(x.shape(), config.alpha_init);
  state.alpha.set_requires_grad(true);
  state.stats = stats;
  state.config = config;
  state.beta = config.beta;
  state.target = target;

  std::vector<double> m1, m2;
  if (config.optimizer == BottleneckOptimizer::kAdam) {
    m1.assign(x.numel(), 0.0);
    m2.assign(x.numel(), 0.0);
  }
  std::mt19937_64 rng(config.seed);
  // the final evaluation replays the first step's noise so first and last trace entries are paired
  const std::mt19937_64 first_draw = rng;
  const double inv_dup = 1.0 / static_cast<double>(config.duplicates);
  for (int step = 0; step <= config.steps; ++step) {
    Tape tape;
    Tensor total;
    LossRecord rec;
    if (step == config.steps) rng = first_draw;
    try {
      TapeScope scope(tape);
      const Tensor kl = sum_all(kl_term(state.alpha, x, *stats));
      Tensor ce_sum;
      for (int k = 0; k < config.duplicates; ++k) {
        const Tensor t = inject_noise(x, state.alpha, *stats, rng);
        const Tensor ce = neg(select(log_softmax(net.logits_from(t, mask, config.layer)),
                                     static_cast<std::size_t>(target)));
        ce_sum = k == 0 ? ce : add(ce_sum, ce);
      }
      const Tensor ce = mul_scalar(ce_sum, inv_dup);
      if (step == 0 && config.auto_beta) state.beta = estimate_beta(ce.item(), kl.item(), config.beta);
      total = add(ce, mul_scalar(kl, state.beta));
      rec = {ce.item(), kl.item(), total.item()};
    } catch (const InvalidValueError& e) {
      throw OptimizationError("fit_bottleneck: non-finite values at step " + std::to_string(step) + " (" +
                              e.what() + "); " + trace_str(state.trace));
    }
    state.trace.push_back(rec);
    if (!std::isfinite(rec.total)) {
      throw OptimizationError("fit_bottleneck: non-finite loss at step " + std::to_string(step) + "; " +
                              trace_str(state.trace));
    }
    if (step == config.steps) break;
    tape.backward(total);
    const auto g = state.alpha.grad();
    auto a = state.alpha.mutable_data();
    if (config.optimizer == BottleneckOptimizer::kGradientDescent) {
      for (std::size_t i = 0; i < a.size(); ++i) a[i] -= config.lr * g[i];
    } else {
      const double c1 = 1.0 - std::pow(0.9, step + 1);
      const double c2 = 1.0 - std::pow(0.999, step + 1);
      for (std::size_t i = 0; i < a.size(); ++i) {
        m1[i] = 0.9 * m1[i] + 0.1 * g[i];
        m2[i] = 0.999 * m2[i] + 0.001 * g[i] * g[i];
        a[i] -= config.lr * (m1[i] / c1) / (std::sqrt(m2[i] / c2) + 1e-8);
      }
    }
  }
  state.alpha.clear_grad();
  return state;
}

AttributionMap attribution_from_state(const BottleneckState& state, const Tensor& x,
                                      const std::vector<std::string>& tokens) {
  if (!state.stats) throw InputError("attribution_from_state: state has no noise statistics");
  const Tensor kl = kl_term(state.alpha.detach(), x, *state.stats);
  if (tokens.size() != kl.dim(0)) {
    throw ShapeError("attribution_from_state: " + std::to_string(tokens.size()) + " tokens for " +
                     std::to_string(kl.dim(0)) + " hidden rows");
  }
  const Tensor scores = sum(kl, 1);
  AttributionMap map;
  map.method = "iba";
  map.layer = static_cast<int>(state.config.layer);
  map.beta = state.beta;
  map.tokens = tokens;
  map.scores.assign(scores.data().begin(), scores.data().end());
  map.target = state.target;
  map.seed = state.config.seed;
  return map;
}

IbaResult iba_attribution(const ModelCheckpoint& ckpt, const Instance& instance, int target,
                          const BottleneckConfig& config, std::shared_ptr<const NoiseStats> stats) {
  BottleneckState state = fit_bottleneck(ckpt, instance, target, config, stats);
  const Tensor x = forward_lower(ckpt, instance, config.layer);
  AttributionMap map = attribution_from_state(state, x, instance.words);
  return {std::move(map), std::move(state)};
}

}  // namespace ibakit
