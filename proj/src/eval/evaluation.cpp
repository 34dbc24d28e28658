#include "ibakit/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "ibakit/error.hpp"
#include "ibakit/ops.hpp"
#include "ibakit/parallel.hpp"

namespace ibakit {

RemovalMode parse_removal_mode(const std::string& name) {
  if (name == "delete") return RemovalMode::kDelete;
  if (name == "unk") return RemovalMode::kUnk;
  throw InputError("unknown removal mode '" + name + "' (expected delete or unk)");
}

std::string removal_mode_name(RemovalMode mode) { return mode == RemovalMode::kDelete ? "delete" : "unk"; }

std::size_t removal_count(double fraction, std::size_t n_words) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw RangeError("fraction must lie in [0,1]");
  return static_cast<std::size_t>(std::lround(fraction * static_cast<double>(n_words)));
}

Instance degrade_instance(const Instance& instance, const std::vector<double>& scores, std::size_t k,
                          RemovalMode mode) {
  const std::size_t len = instance.length();
  const std::size_t words = len - 1;
  if (scores.size() != len) {
    throw ShapeError("degrade_instance: " + std::to_string(scores.size()) + " scores for " +
                     std::to_string(len) + " tokens");
  }
  if (k > words) {
    throw RangeError("degrade_instance: cannot remove " + std::to_string(k) + " of " +
                     std::to_string(words) + " words");
  }
  if (k == 0) return instance;
  std::vector<std::size_t> order(words);
  std::iota(order.begin(), order.end(), 1);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<bool> removed(len, false);
  for (std::size_t i = 0; i < k; ++i) removed[order[i]] = true;

  Instance out = instance;
  if (mode == RemovalMode::kUnk) {
    for (std::size_t p = 1; p < len; ++p) {
      if (removed[p]) {
        out.ids[p] = Vocab::kUnk;
        out.words[p] = std::string(Vocab::kUnkToken);
      }
    }
    return out;
  }
  std::fill(out.ids.begin(), out.ids.end(), Vocab::kPad);
  std::fill(out.mask.begin(), out.mask.end(), 0);
  out.words.clear();
  std::size_t w = 0;
  for (std::size_t p = 0; p < len; ++p) {
    if (removed[p]) continue;
    out.ids[w] = instance.ids[p];
    out.mask[w] = 1;
    out.words.push_back(instance.words[p]);
    ++w;
  }
  return out;
}

std::vector<double> default_fraction_grid() {
  std::vector<int> pct = {0, 2, 4, 6, 8, 10, 11};
  for (int p = 15; p <= 100; p += 5) pct.push_back(p);
  std::vector<double> grid;
  for (int p : pct) grid.push_back(p / 100.0);
  return grid;
}

void validate_fraction_grid(const std::vector<double>& grid) {
  if (grid.size() < 2 || grid.front() != 0.0 || grid.back() != 1.0) {
    throw InputError("fraction grid must start at 0 and end at 1");
  }
  for (std::size_t i = 1; i < grid.size(); ++i) {
    if (!(grid[i] > grid[i - 1])) throw InputError("fraction grid must increase strictly");
  }
}

std::vector<double> parse_fraction_grid(const std::string& text) {
  std::vector<double> grid;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      throw InputError("fraction grid: '" + item + "' is not a number");
    }
    if (item.find_first_not_of(" \t", used) != std::string::npos) {
      throw InputError("fraction grid: '" + item + "' is not a number");
    }
    grid.push_back(v);
  }
  validate_fraction_grid(grid);
  return grid;
}

DegradationCurve degradation_curve(const ModelCheckpoint& ckpt, const std::vector<Instance>& instances,
                                   const std::vector<int>& targets, const std::vector<AttributionMap>& maps,
                                   const std::string& method, const std::vector<double>& fractions,
                                   RemovalMode mode, std::size_t jobs) {
  if (instances.empty()) throw InputError("degradation curve: empty dataset");
  if (targets.size() != instances.size() || maps.size() != instances.size()) {
    throw InputError("degradation curve: instances, targets and maps differ in count");
  }
  validate_fraction_grid(fractions);
  const std::size_t n = instances.size();
  std::vector<std::vector<double>> probs(n, std::vector<double>(fractions.size()));
  parallel_for(n, jobs, [&](std::size_t i) {
    const Transformer net(ckpt);
    for (std::size_t f = 0; f < fractions.size(); ++f) {
      const std::size_t k = removal_count(fractions[f], instances[i].word_count());
      const Instance x = degrade_instance(instances[i], maps[i].scores, k, mode);
      probs[i][f] = softmax(net.logits(x)).at(static_cast<std::size_t>(targets[i]));
    }
  });
  DegradationCurve c;
  c.method = method;
  c.fractions = fractions;
  c.n = n;
  c.p_mean.assign(fractions.size(), 0.0);
  for (std::size_t f = 0; f < fractions.size(); ++f) {
    for (std::size_t i = 0; i < n; ++i) c.p_mean[f] += probs[i][f];
    c.p_mean[f] /= static_cast<double>(n);
  }
  return c;
}

std::vector<NormalizedCurve> normalize_curves(const std::vector<DegradationCurve>& curves) {
  if (curves.empty()) throw InputError("normalize_curves: no curves");
  const double o = curves.front().original();
  double m = curves.front().p_mean.back();
  for (const auto& c : curves) {
    if (c.fractions != curves.front().fractions) throw InputError("normalize_curves: curves use different grids");
    if (c.original() != o) throw InputError("normalize_curves: curves start from different originals");
    m = std::min(m, c.p_mean.back());
  }
  if (o == m) throw NumericError("normalize_curves: original equals the fully degraded minimum");
  std::vector<NormalizedCurve> out;
  for (const auto& c : curves) {
    NormalizedCurve nc{c.method, c.fractions, {}};
    for (double p : c.p_mean) nc.d_norm.push_back((p - m) / (o - m));
    out.push_back(std::move(nc));
  }
  return out;
}

double absolute_drop_at(const DegradationCurve& curve, double fraction) {
  const auto& fr = curve.fractions;
  if (fr.empty() || fraction < fr.front() || fraction > fr.back()) {
    throw RangeError("absolute_drop_at: fraction outside the curve's grid");
  }
  const auto it = std::lower_bound(fr.begin(), fr.end(), fraction);
  const std::size_t hi = static_cast<std::size_t>(it - fr.begin());
  if (fr[hi] == fraction) return curve.original() - curve.p_mean[hi];
  const std::size_t lo = hi - 1;
  const double t = (fraction - fr[lo]) / (fr[hi] - fr[lo]);
  const double p = curve.p_mean[lo] + t * (curve.p_mean[hi] - curve.p_mean[lo]);
  return curve.original() - p;
}

TargetMode parse_target_mode(const std::string& name) {
  if (name == "gold") return TargetMode::kGold;
  if (name == "pred") return TargetMode::kPredicted;
  throw InputError("unknown target mode '" + name + "' (expected gold or pred)");
}

std::string target_mode_name(TargetMode mode) { return mode == TargetMode::kGold ? "gold" : "pred"; }

std::vector<int> select_targets(const ModelCheckpoint& ckpt, const std::vector<Instance>& instances,
                                TargetMode mode, std::size_t jobs) {
  std::vector<int> t(instances.size());
  parallel_for(instances.size(), jobs, [&](std::size_t i) {
    if (mode == TargetMode::kGold) {
      t[i] = instances[i].label;
    } else {
      const Tensor p = forward(ckpt, instances[i]);
      const auto d = p.data();
      t[i] = static_cast<int>(std::max_element(d.begin(), d.end()) - d.begin());
    }
  });
  return t;
}

AttributionBatch attribute_all(const ModelCheckpoint& ckpt, const std::vector<Instance>& instances,
                               const std::vector<int>& targets, const std::string& method,
                               const MethodSettings& settings, std::shared_ptr<const NoiseStats> stats,
                               std::size_t jobs, std::size_t first_index) {
  const auto& known = attribution_methods();
  if (std::find(known.begin(), known.end(), method) == known.end()) {
    throw InputError("unknown method '" + method + "' (valid: iba, ig, lime-lite, random)");
  }
  if (method == "iba" && !stats) throw InputError("attribute_all: iba needs noise statistics");
  AttributionBatch out;
  out.maps.resize(instances.size());
  out.final_mean_mu.assign(instances.size(), 0.0);
  parallel_for(instances.size(), jobs, [&](std::size_t i) {
    const std::uint64_t seed = mix_seed(settings.seed, first_index + i);
    if (method == "iba") {
      BottleneckConfig cfg = settings.iba;
      cfg.seed = seed;
      IbaResult r = iba_attribution(ckpt, instances[i], targets[i], cfg, stats);
      out.final_mean_mu[i] = r.state.mean_mu();
      out.maps[i] = std::move(r.map);
    } else if (method == "ig") {
      out.maps[i] = integrated_gradients(ckpt, instances[i], targets[i], settings.ig);
    } else if (method == "lime-lite") {
      SurrogateConfig cfg = settings.lime;
      cfg.seed = seed;
      // short sentences would otherwise fail the solvability check
      cfg.n_samples = std::max<int>(cfg.n_samples, static_cast<int>(instances[i].word_count()) + 1);
      out.maps[i] = lime_lite(ckpt, instances[i], targets[i], cfg);
    } else {
      out.maps[i] = random_attribution(instances[i], seed, targets[i]);
    }
  });
  return out;
}

namespace {

struct CheckpointGuard {
  const ModelCheckpoint& ckpt;
  std::uint64_t before;
  explicit CheckpointGuard(const ModelCheckpoint& c) : ckpt(c), before(c.fingerprint()) {}
  void verify() const {
    if (ckpt.fingerprint() != before) {
      throw ContractError("checkpoint parameters changed during evaluation");
    }
  }
};

}  // namespace

DegradationReport run_degradation(const ModelCheckpoint& ckpt, const std::vector<Instance>& eval_set,
                                  const std::vector<Instance>& calibration, const std::vector<std::string>& methods,
                                  const MethodSettings& settings, const std::vector<double>& fractions,
                                  TargetMode target_mode, RemovalMode removal, std::size_t jobs) {
  if (methods.empty()) throw InputError("degradation: no methods given");
  if (eval_set.empty()) throw InputError("degradation: empty evaluation set");
  validate_fraction_grid(fractions);
  const CheckpointGuard guard(ckpt);
  const std::vector<int> targets = select_targets(ckpt, eval_set, target_mode, jobs);
  std::shared_ptr<const NoiseStats> stats;
  if (std::find(methods.begin(), methods.end(), "iba") != methods.end()) {
    stats = std::make_shared<NoiseStats>(estimate_noise_stats(ckpt, calibration, settings.iba.layer,
                                                              settings.stats_mode, settings.seed, jobs));
  }
  DegradationReport report;
  for (const auto& m : methods) {
    const AttributionBatch batch = attribute_all(ckpt, eval_set, targets, m, settings, stats, jobs);
    guard.verify();
    report.curves.push_back(degradation_curve(ckpt, eval_set, targets, batch.maps, m, fractions, removal, jobs));
  }
  report.normalized = normalize_curves(report.curves);
  for (const auto& c : report.curves) report.drop_at_11pct.push_back(absolute_drop_at(c, 0.11));
  guard.verify();
  return report;
}

namespace {

SweepPoint iba_point(const ModelCheckpoint& ckpt, const std::vector<Instance>& eval_set,
                     const std::vector<int>& targets, const std::shared_ptr<const NoiseStats>& stats,
                     const MethodSettings& settings, const std::vector<double>& fractions, RemovalMode removal,
                     std::size_t jobs) {
  const AttributionBatch batch = attribute_all(ckpt, eval_set, targets, "iba", settings, stats, jobs);
  const DegradationCurve c = degradation_curve(ckpt, eval_set, targets, batch.maps, "iba", fractions, removal, jobs);
  SweepPoint p;
  p.drop_at_11pct = absolute_drop_at(c, 0.11);
  for (double mu : batch.final_mean_mu) p.mean_mu_final += mu;
  p.mean_mu_final /= static_cast<double>(batch.final_mean_mu.size());
  return p;
}

}  // namespace

SweepReport layer_sweep(const ModelCheckpoint& ckpt, const std::vector<Instance>& eval_set,
                        const std::vector<Instance>& calibration, std::vector<std::size_t> layers,
                        const MethodSettings& settings, const std::vector<double>& fractions,
                        TargetMode target_mode, RemovalMode removal, std::size_t jobs) {
  if (layers.empty()) throw InputError("layer sweep: no layers given");
  if (eval_set.empty()) throw InputError("layer sweep: empty evaluation set");
  validate_fraction_grid(fractions);
  std::sort(layers.begin(), layers.end());
  if (std::adjacent_find(layers.begin(), layers.end()) != layers.end()) {
    throw InputError("layer sweep: repeated layer");
  }
  for (std::size_t l : layers) {
    if (l > ckpt.config.n_layers) {
      throw RangeError("layer sweep: layer " + std::to_string(l) + " outside 0.." +
                       std::to_string(ckpt.config.n_layers));
    }
  }
  const CheckpointGuard guard(ckpt);
  const std::vector<int> targets = select_targets(ckpt, eval_set, target_mode, jobs);
  SweepReport report{"layer", {}};
  for (std::size_t l : layers) {
    MethodSettings s = settings;
    s.iba.layer = l;
    const auto stats = std::make_shared<NoiseStats>(
        estimate_noise_stats(ckpt, calibration, l, settings.stats_mode, settings.seed, jobs));
    SweepPoint p = iba_point(ckpt, eval_set, targets, stats, s, fractions, removal, jobs);
    p.value = static_cast<double>(l);
    report.points.push_back(p);
  }
  guard.verify();
  return report;
}

SweepReport beta_sweep(const ModelCheckpoint& ckpt, const std::vector<Instance>& eval_set,
                       const std::vector<Instance>& calibration, std::vector<double> betas,
                       const MethodSettings& settings, const std::vector<double>& fractions,
                       TargetMode target_mode, RemovalMode removal, std::size_t jobs) {
  if (betas.empty()) throw InputError("beta sweep: no values given");
  if (eval_set.empty()) throw InputError("beta sweep: empty evaluation set");
  validate_fraction_grid(fractions);
  for (double b : betas) {
    if (!(b > 0.0) || !std::isfinite(b)) throw InputError("beta sweep: beta values must be > 0");
  }
  std::sort(betas.begin(), betas.end());
  if (std::adjacent_find(betas.begin(), betas.end()) != betas.end()) {
    throw InputError("beta sweep: repeated beta value");
  }
  const CheckpointGuard guard(ckpt);
  const std::vector<int> targets = select_targets(ckpt, eval_set, target_mode, jobs);
  const auto stats = std::make_shared<NoiseStats>(
      estimate_noise_stats(ckpt, calibration, settings.iba.layer, settings.stats_mode, settings.seed, jobs));
  SweepReport report{"beta", {}};
  for (double b : betas) {
    MethodSettings s = settings;
    s.iba.beta = b;
    s.iba.auto_beta = false;
    SweepPoint p = iba_point(ckpt, eval_set, targets, stats, s, fractions, removal, jobs);
    p.value = b;
    report.points.push_back(p);
  }
  guard.verify();
  return report;
}

}  // namespace ibakit
