#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "ibakit/attribution.hpp"
#include "ibakit/baselines.hpp"
#include "ibakit/iba.hpp"
#include "ibakit/model.hpp"

namespace ibakit {

enum class RemovalMode {
  kDelete,  // drop the token and shift the rest left
  kUnk,     // replace the token by [UNK] in place
};

RemovalMode parse_removal_mode(const std::string& name);  // "delete" | "unk"
std::string removal_mode_name(RemovalMode mode);

// round(fraction * n_words), halves away from zero.
std::size_t removal_count(double fraction, std::size_t n_words);

// Removes the k highest-scored words (scores[0] belongs to [CLS], which is
// never removed); ties go to the earlier position. k above the word count is
// a RangeError.
Instance degrade_instance(const Instance& instance, const std::vector<double>& scores, std::size_t k,
                          RemovalMode mode = RemovalMode::kDelete);

// 0, 0.02, ..., 0.10, 0.11, 0.15, 0.20, ..., 1.00
std::vector<double> default_fraction_grid();
// Must start at 0, end at 1 and increase strictly.
void validate_fraction_grid(const std::vector<double>& grid);
std::vector<double> parse_fraction_grid(const std::string& text);  // comma separated

struct DegradationCurve {
  std::string method;
  std::vector<double> fractions;
  std::vector<double> p_mean;  // mean target probability at each fraction
  std::size_t n = 0;
  double original() const { return p_mean.front(); }
};

struct NormalizedCurve {
  std::string method;
  std::vector<double> fractions;
  std::vector<double> d_norm;
};

// Evaluates the unmodified checkpoint on every degraded instance; maps[i]
// scores instances[i] and is reused across all fractions.
DegradationCurve degradation_curve(const ModelCheckpoint& ckpt, const std::vector<Instance>& instances,
                                   const std::vector<int>& targets, const std::vector<AttributionMap>& maps,
                                   const std::string& method, const std::vector<double>& fractions,
                                   RemovalMode mode = RemovalMode::kDelete, std::size_t jobs = 1);

// d = (p - m) / (o - m), m = min over curves of the fraction-1 value.
// Curves must share the grid and o; o == m is a NumericError.
std::vector<NormalizedCurve> normalize_curves(const std::vector<DegradationCurve>& curves);

// o - p(fraction), linearly interpolated between bracketing grid points.
double absolute_drop_at(const DegradationCurve& curve, double fraction = 0.11);

enum class TargetMode { kGold, kPredicted };
TargetMode parse_target_mode(const std::string& name);  // "gold" | "pred"
std::string target_mode_name(TargetMode mode);
std::vector<int> select_targets(const ModelCheckpoint& ckpt, const std::vector<Instance>& instances,
                                TargetMode mode, std::size_t jobs = 1);

// Everything an attribution run needs besides the data.
struct MethodSettings {
  BottleneckConfig iba;
  StatsMode stats_mode = StatsMode::kPerFeature;
  IGConfig ig;
  SurrogateConfig lime;
  std::uint64_t seed = 0;  // per-instance seeds are mix_seed(seed, index)
};

struct AttributionBatch {
  std::vector<AttributionMap> maps;
  std::vector<double> final_mean_mu;  // IBA only, per instance
};

// `stats` is required for "iba" and ignored otherwise. lime-lite raises
// n_samples to words + 1 for sentences longer than the configured budget.
// Instance i is seeded with mix_seed(settings.seed, first_index + i), so a
// slice of a larger set reproduces the maps of the full run.
AttributionBatch attribute_all(const ModelCheckpoint& ckpt, const std::vector<Instance>& instances,
                               const std::vector<int>& targets, const std::string& method,
                               const MethodSettings& settings, std::shared_ptr<const NoiseStats> stats,
                               std::size_t jobs = 1, std::size_t first_index = 0);

struct DegradationReport {
  std::vector<DegradationCurve> curves;
  std::vector<NormalizedCurve> normalized;
  std::vector<double> drop_at_11pct;  // per curve
};

// Attributes with each method, degrades, normalizes. Throws ContractError if
// the checkpoint fingerprint changes during the run.
DegradationReport run_degradation(const ModelCheckpoint& ckpt, const std::vector<Instance>& eval_set,
                                  const std::vector<Instance>& calibration, const std::vector<std::string>& methods,
                                  const MethodSettings& settings, const std::vector<double>& fractions,
                                  TargetMode target_mode = TargetMode::kGold,
                                  RemovalMode removal = RemovalMode::kDelete, std::size_t jobs = 1);

struct SweepPoint {
  double value = 0.0;
  double drop_at_11pct = 0.0;
  double mean_mu_final = 0.0;
};

struct SweepReport {
  std::string axis;  // "layer" or "beta"
  std::vector<SweepPoint> points;  // sorted by value
};

// Full IBA pipeline per layer with fresh noise statistics at each layer.
SweepReport layer_sweep(const ModelCheckpoint& ckpt, const std::vector<Instance>& eval_set,
                        const std::vector<Instance>& calibration, std::vector<std::size_t> layers,
                        const MethodSettings& settings, const std::vector<double>& fractions,
                        TargetMode target_mode = TargetMode::kGold, RemovalMode removal = RemovalMode::kDelete,
                        std::size_t jobs = 1);
// Same per beta at settings.iba.layer. Non-positive or repeated values throw InputError.
SweepReport beta_sweep(const ModelCheckpoint& ckpt, const std::vector<Instance>& eval_set,
                       const std::vector<Instance>& calibration, std::vector<double> betas,
                       const MethodSettings& settings, const std::vector<double>& fractions,
                       TargetMode target_mode = TargetMode::kGold, RemovalMode removal = RemovalMode::kDelete,
                       std::size_t jobs = 1);

}  // namespace ibakit
