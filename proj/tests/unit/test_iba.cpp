#include <cmath>
#include <cstring>
#include <random>

#include "doctest.h"
#include "ibakit/error.hpp"
#include "ibakit/grad_check.hpp"
#include "ibakit/iba.hpp"
#include "ibakit/ops.hpp"
#include "ibakit/train.hpp"
#include "support/kl_oracle.hpp"
#include "support/toy_model.hpp"

using namespace ibakit;
using ibakit::testing::gaussian_kl_reference;
using ibakit::testing::toy_checkpoint;

namespace {

// Stats of width d with the given mean and std everywhere.
std::shared_ptr<NoiseStats> flat_stats(std::size_t d, double mean, double sd, std::size_t layer = 0) {
  auto s = std::make_shared<NoiseStats>();
  s->mean = Tensor({d}, mean);
  s->std = Tensor({d}, sd);
  s->layer = layer;
  return s;
}

double alpha_for(double mu) { return std::log(mu / (1.0 - mu)); }

std::shared_ptr<NoiseStats> toy_stats(const ModelCheckpoint& ckpt, std::size_t layer) {
  std::vector<Instance> calib;
  for (const char* t : {"the movie was good", "a bad plot", "very very good", "the plot was bad", "a movie"}) {
    calib.push_back(tokenize(t, ckpt.vocab, ckpt.config.max_seq_len));
  }
  return std::make_shared<NoiseStats>(estimate_noise_stats(ckpt, calib, layer));
}

}  // namespace

TEST_CASE("initial alpha gives the documented keep rate") {
  CHECK(sigmoid(Tensor::scalar(5.0)).item() == doctest::Approx(0.993307).epsilon(1e-6));
  const BottleneckConfig c;
  CHECK(c.alpha_init == 5.0);
  CHECK(c.lr == 1.0);
  CHECK(c.steps == 10);
  CHECK(c.duplicates == 10);
  CHECK(c.beta == 1e-5);
  CHECK(c.optimizer == BottleneckOptimizer::kGradientDescent);
}

TEST_CASE("bottleneck config validation") {
  BottleneckConfig c;
  c.beta = 0.0;
  CHECK_THROWS_AS(c.validate(), InputError);
  c = {};
  c.steps = 0;
  CHECK_THROWS_AS(c.validate(), InputError);
  c = {};
  c.duplicates = 0;
  CHECK_THROWS_AS(c.validate(), InputError);
}

TEST_CASE("noise statistics examples") {
  const std::vector<Tensor> constant = {Tensor({3, 4}, 3.0)};
  const NoiseStats s = stats_from_hidden(constant, 2, StatsMode::kPerFeature);
  for (double v : s.mean.data()) CHECK(v == 3.0);
  for (double v : s.std.data()) CHECK(v == kStdFloor);
  CHECK(s.layer == 2);

  const std::vector<Tensor> two = {Tensor({1, 1}, 1.0), Tensor({1, 1}, 3.0)};
  const NoiseStats t = stats_from_hidden(two, 0, StatsMode::kPerFeature);
  CHECK(t.mean.item() == 2.0);
  CHECK(t.std.item() == 1.0);

  CHECK_THROWS_AS(stats_from_hidden(std::vector<Tensor>{}, 0, StatsMode::kPerFeature), InputError);
  CHECK_THROWS_AS(stats_from_hidden(std::vector<Tensor>{Tensor({0, 4}, 0.0)}, 0, StatsMode::kPerFeature),
                  InputError);
}

TEST_CASE("noise statistics ignore calibration order") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(1.0, 2.0);
  std::vector<Tensor> hs;
  for (int i = 0; i < 6; ++i) {
    std::vector<double> v(static_cast<std::size_t>(3 + i) * 5);
    for (double& x : v) x = n(rng);
    hs.emplace_back(Shape{static_cast<std::size_t>(3 + i), 5}, v);
  }
  const NoiseStats a = stats_from_hidden(hs, 0, StatsMode::kPerFeature);
  std::reverse(hs.begin(), hs.end());
  const NoiseStats b = stats_from_hidden(hs, 0, StatsMode::kPerFeature);
  for (std::size_t j = 0; j < 5; ++j) {
    CHECK(std::abs(a.mean.at(j) - b.mean.at(j)) < 1e-12);
    CHECK(std::abs(a.std.at(j) - b.std.at(j)) < 1e-12);
  }
}

TEST_CASE("per-position statistics") {
  const std::vector<Tensor> hs = {Tensor({2, 1}, std::vector<double>{0.0, 10.0}),
                                  Tensor({1, 1}, std::vector<double>{2.0})};
  const NoiseStats s = stats_from_hidden(hs, 0, StatsMode::kPerPosition, 3);
  CHECK(s.mean.shape() == Shape{3, 1});
  CHECK(s.mean.at(0) == 1.0);
  CHECK(s.std.at(0) == 1.0);
  CHECK(s.mean.at(1) == 10.0);
  CHECK(s.std.at(1) == kStdFloor);
  // position 2 has no samples and falls back to the pooled values
  CHECK(s.mean.at(2) == doctest::Approx(4.0));
  CHECK(s.mean_rows(2).shape() == Shape{2, 1});
  CHECK_THROWS_AS(s.mean_rows(4), ShapeError);
}

TEST_CASE("calibration on a model excludes PAD and is order independent") {
  const ModelCheckpoint ckpt = toy_checkpoint();
  std::vector<Instance> calib;
  for (const char* t : {"good movie", "bad plot was very bad", "a"}) {
    calib.push_back(tokenize(t, ckpt.vocab, ckpt.config.max_seq_len));
  }
  const NoiseStats s = estimate_noise_stats(ckpt, calib, 1);
  std::vector<Tensor> rows;
  for (const auto& c : calib) rows.push_back(forward_lower(ckpt, c, 1));
  const NoiseStats t = stats_from_hidden(rows, 1, StatsMode::kPerFeature);
  for (std::size_t j = 0; j < ckpt.config.d_model; ++j) CHECK(s.mean.at(j) == t.mean.at(j));
  CHECK_THROWS_AS(estimate_noise_stats(ckpt, std::vector<Instance>{}, 1), InputError);
}

TEST_CASE("noise injection limits") {
  std::mt19937_64 rng(3);
  const auto stats = flat_stats(4, 1.5, 2.0);
  const Tensor x({3, 4}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
  const Tensor t_keep = inject_noise(x, Tensor({3, 4}, 50.0), *stats, rng);
  for (std::size_t i = 0; i < 12; ++i) CHECK(std::abs(t_keep.at(i) - x.at(i)) < 1e-9);

  std::mt19937_64 a(9), b(9);
  const Tensor t_noise = inject_noise(x, Tensor({3, 4}, -50.0), *stats, a);
  const Tensor eps = sample_noise(*stats, 3, b);
  for (std::size_t i = 0; i < 12; ++i) CHECK(std::abs(t_noise.at(i) - eps.at(i)) < 1e-9);

  // The pure-noise output follows the statistics.
  std::mt19937_64 c(10);
  const std::size_t n = 20000;
  const Tensor big = inject_noise(Tensor({n, 1}, 7.0), Tensor({n, 1}, -50.0), *flat_stats(1, 1.5, 2.0), c);
  double m = 0.0, v = 0.0;
  for (double t : big.data()) m += t;
  m /= n;
  for (double t : big.data()) v += (t - m) * (t - m);
  v /= n;
  CHECK(std::abs(m - 1.5) < 4 * 2.0 / std::sqrt(double(n)));
  CHECK(std::abs(std::sqrt(v) - 2.0) < 0.05);

  CHECK_THROWS_AS(inject_noise(x, Tensor({3, 3}, 0.0), *stats, rng), ShapeError);
}

TEST_CASE("noise injection expectation matches the mixture mean") {
  std::mt19937_64 rng(17);
  const std::size_t n = 100000;
  const Tensor t = inject_noise(Tensor({n, 1}, 4.0), Tensor({n, 1}, 0.0), *flat_stats(1, 0.0, 1.0), rng);
  double m = 0.0;
  for (double v : t.data()) m += v;
  m /= n;
  // 0.5 * 4 + 0.5 * 0
  CHECK(std::abs(m - 2.0) < 0.02);
}

TEST_CASE("masked rows pass through the bottleneck untouched") {
  std::mt19937_64 rng(4);
  const auto stats = flat_stats(2, 0.0, 1.0);
  const Tensor x({3, 2}, std::vector<double>{1, 2, 3, 4, 5, 6});
  const std::vector<std::uint8_t> keep = {1, 0, 1};
  const Tensor t = inject_noise(x, Tensor({3, 2}, -3.0), *stats, rng, keep);
  CHECK(t.at(1, 0) == 3.0);
  CHECK(t.at(1, 1) == 4.0);
  CHECK(t.at(0, 0) != 1.0);
  const Tensor kl = kl_term(Tensor({3, 2}, 0.0), x, *stats, keep);
  CHECK(kl.at(1, 0) == 0.0);
  CHECK(kl.at(1, 1) == 0.0);
  CHECK(kl.at(0, 0) > 0.0);
}

TEST_CASE("KL closed form examples") {
  const auto stats = flat_stats(1, 0.0, 1.0);
  auto kl_at = [&](double mu, double z) {
    return kl_term(Tensor({1, 1}, alpha_for(mu)), Tensor({1, 1}, z), *stats).item();
  };
  CHECK(std::abs(kl_at(0.5, 2.0) - 0.8181) < 1e-3);
  CHECK(std::abs(kl_at(0.5, 0.0) - 0.3181) < 1e-3);
  CHECK(std::abs(kl_term(Tensor({1, 1}, -50.0), Tensor({1, 1}, 3.0), *stats).item()) < 1e-9);
  for (double mu : {0.1, 0.3, 0.5, 0.7, 0.9}) {
    for (double z : {-2.0, 0.0, 0.5, 3.0}) {
      CHECK(kl_at(mu, z) == doctest::Approx(gaussian_kl_reference(mu, z, 0.0, 1.0)).epsilon(1e-10));
    }
  }
  // z is measured in units of the noise std
  const auto scaled = flat_stats(1, 2.0, 3.0);
  const double v = kl_term(Tensor({1, 1}, alpha_for(0.4)), Tensor({1, 1}, 8.0), *scaled).item();
  CHECK(v == doctest::Approx(gaussian_kl_reference(0.4, 8.0, 2.0, 3.0)).epsilon(1e-10));
}

TEST_CASE("KL matches a Monte-Carlo estimate") {
  const auto stats = flat_stats(1, 0.0, 1.0);
  std::uint64_t seed = 100;
  for (double mu : {0.2, 0.5, 0.8}) {
    for (double z : {0.0, 1.0, 2.0}) {
      const double closed = kl_term(Tensor({1, 1}, alpha_for(mu)), Tensor({1, 1}, z), *stats).item();
      const auto mc = ibakit::testing::mc_kl(mu, z, 0.0, 1.0, 100000, seed++);
      CHECK(std::abs(closed - mc.value) / closed < 0.02);
    }
  }
}

TEST_CASE("KL is nonnegative and increasing in the keep rate") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> a(-60.0, 60.0), zd(-6.0, 6.0);
  const auto stats = flat_stats(1, 0.0, 1.0);
  std::vector<double> al(10000), zs(10000);
  for (std::size_t i = 0; i < al.size(); ++i) {
    al[i] = a(rng);
    zs[i] = zd(rng);
  }
  const Tensor kl = kl_term(Tensor({10000, 1}, al), Tensor({10000, 1}, zs), *stats);
  double lowest = 0.0;
  for (double v : kl.data()) lowest = std::min(lowest, v);
  CHECK(lowest >= 0.0);

  for (double z : {0.0, 1.0, 2.0}) {
    double prev = -1.0;
    for (int k = 1; k <= 9; ++k) {
      const double v = kl_term(Tensor({1, 1}, alpha_for(k / 10.0)), Tensor({1, 1}, z), *stats).item();
      CHECK(v > prev);
      prev = v;
    }
  }
}

TEST_CASE("expected KL bounds the mutual information of a two-point source") {
  // X uniform on {-1, +1} has mean 0 and std 1, so Q(T) = N(0, 1)
  const auto stats = flat_stats(1, 0.0, 1.0);
  std::uint64_t seed = 900;
  for (double mu : {0.2, 0.5, 0.8}) {
    const Tensor alpha({2, 1}, alpha_for(mu));
    const Tensor x({2, 1}, std::vector<double>{-1.0, 1.0});
    const double bound = 0.5 * sum_all(kl_term(alpha, x, *stats)).item();
    const auto mi = ibakit::testing::mc_mutual_information_two_point(mu, 200000, seed++);
    CAPTURE(mu);
    CHECK(bound >= mi.value - 3.0 * mi.std_error);
    CHECK(mi.value > 0.0);
  }
}

TEST_CASE("iba_loss examples") {
  const Tensor probs({2}, std::vector<double>{0.0 + 1e-300, 1.0});
  const Tensor zero_kl({2, 3}, 0.0);
  CHECK(iba_loss(probs, 1, zero_kl, 1e-5).total.item() == 0.0);

  const Tensor p({3}, std::vector<double>{0.2, 0.5, 0.3});
  const Tensor kl({2, 2}, std::vector<double>{0.1, 0.2, 0.3, 0.4});
  const IbaLoss a = iba_loss(p, 1, kl, 0.5);
  const IbaLoss b = iba_loss(p, 1, kl, 1.0);
  CHECK(a.ce.item() == doctest::Approx(-std::log(0.5)));
  CHECK(a.kl_sum.item() == doctest::Approx(1.0));
  CHECK((b.total.item() - b.ce.item()) == doctest::Approx(2.0 * (a.total.item() - a.ce.item())).epsilon(1e-15));
  const IbaLoss tiny = iba_loss(p, 1, kl, 1e-300);
  CHECK(tiny.total.item() == tiny.ce.item());
  CHECK_THROWS_AS(iba_loss(p, 3, kl, 1.0), InputError);
  CHECK_THROWS_AS(iba_loss(p, -1, kl, 1.0), InputError);
  CHECK_THROWS_AS(iba_loss(p, 0, kl, 0.0), InputError);
}

TEST_CASE("beta estimate") {
  CHECK(estimate_beta(0.3, 3000.0) == 1e-3);
  CHECK(estimate_beta(2.0, 20.0) == 1.0);
  CHECK(estimate_beta(0.0, 50.0) == kDefaultBeta);
  CHECK(estimate_beta(1.0, 0.0, 0.25) == 0.25);
  CHECK(estimate_beta(1.0, -4.0) == kDefaultBeta);
}

TEST_CASE("loss gradient w.r.t. alpha matches finite differences with frozen noise") {
  const ModelCheckpoint ckpt = toy_checkpoint();
  const Instance inst = tokenize("the movie was very bad", ckpt.vocab, ckpt.config.max_seq_len);
  for (std::size_t layer : {0UL, 1UL}) {
    const auto stats = toy_stats(ckpt, layer);
    const Tensor x = forward_lower(ckpt, inst, layer);
    const std::vector<std::uint8_t> mask(x.dim(0), 1);
    std::mt19937_64 rng(21);
    std::vector<Tensor> eps;
    for (int k = 0; k < 3; ++k) eps.push_back(sample_noise(*stats, x.dim(0), rng));
    std::vector<double> a0(x.numel());
    std::uniform_real_distribution<double> u(-2.0, 3.0);
    for (double& v : a0) v = u(rng);
    const auto f = [&](const Tensor& alpha) {
      Tensor ce;
      for (std::size_t k = 0; k < eps.size(); ++k) {
        const Tensor t = apply_bottleneck(x, alpha, eps[k]);
        const Tensor c = neg(select(log_softmax(Transformer(ckpt).logits_from(t, mask, layer)), 1));
        ce = k == 0 ? c : add(ce, c);
      }
      return add(mul_scalar(ce, 1.0 / 3.0), mul_scalar(sum_all(kl_term(alpha, x, *stats)), 0.01));
    };
    CHECK(grad_check(f, Tensor(x.shape(), a0), 1e-5) < 1e-4);
  }
}

TEST_CASE("fit_bottleneck extremes, trace and determinism") {
  const ModelCheckpoint ckpt = toy_checkpoint();
  const std::uint64_t before = ckpt.fingerprint();
  const Instance inst = tokenize("a good movie", ckpt.vocab, ckpt.config.max_seq_len);
  const auto stats = toy_stats(ckpt, 1);
  BottleneckConfig cfg;
  cfg.layer = 1;
  cfg.seed = 5;

  cfg.beta = 1e6;
  const BottleneckState strong = fit_bottleneck(ckpt, inst, 1, cfg, stats);
  CHECK(strong.mean_mu() < 0.05);

  cfg.beta = 1e-12;
  const BottleneckState weak = fit_bottleneck(ckpt, inst, 1, cfg, stats);
  CHECK(weak.mean_mu() > 0.95);
  CHECK(weak.trace.size() == static_cast<std::size_t>(cfg.steps) + 1);
  for (const auto& r : weak.trace) CHECK(r.total == doctest::Approx(r.ce + cfg.beta * r.kl).epsilon(1e-12));

  const BottleneckState again = fit_bottleneck(ckpt, inst, 1, cfg, stats);
  for (std::size_t i = 0; i < weak.trace.size(); ++i) CHECK(weak.trace[i].total == again.trace[i].total);
  CHECK(std::memcmp(weak.alpha.data().data(), again.alpha.data().data(), weak.alpha.numel() * sizeof(double)) == 0);

  cfg.optimizer = BottleneckOptimizer::kAdam;
  cfg.beta = 1e-2;
  const BottleneckState adam = fit_bottleneck(ckpt, inst, 1, cfg, stats);
  CHECK(adam.trace.size() == 11);
  CHECK(adam.mean_mu() < 0.993);

  CHECK(ckpt.fingerprint() == before);
  for (const auto& [name, t] : ckpt.params) CHECK_FALSE(t.has_grad());
}

TEST_CASE("optimization does not increase the loss on a trained model") {
  const auto split = split_corpus(generate_corpus(400, 11), 11);
  ModelConfig mc = ibakit::testing::toy_config();
  mc.d_model = 16;
  mc.d_ff = 32;
  mc.max_seq_len = 24;
  TrainConfig tc;
  tc.epochs = 3;
  const ModelCheckpoint ckpt = train(split.train, split.validation, mc, tc);
  const auto test = tokenize_all(split.test, ckpt);
  const auto calib = tokenize_all(split.train, ckpt);
  for (std::size_t layer : {0UL, 2UL}) {
    const auto stats = std::make_shared<NoiseStats>(estimate_noise_stats(ckpt, calib, layer));
    BottleneckConfig cfg;
    cfg.layer = layer;
    std::size_t descended = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
      cfg.seed = i;
      const auto st = fit_bottleneck(ckpt, test[i], test[i].label, cfg, stats);
      descended += st.trace.back().total <= st.trace.front().total;
    }
    CHECK(static_cast<double>(descended) >= 0.95 * static_cast<double>(test.size()));
  }
}

TEST_CASE("fit_bottleneck input errors") {
  const ModelCheckpoint ckpt = toy_checkpoint();
  const Instance inst = tokenize("a good movie", ckpt.vocab, ckpt.config.max_seq_len);
  BottleneckConfig cfg;
  cfg.layer = 1;
  CHECK_THROWS_AS(fit_bottleneck(ckpt, inst, 1, cfg, toy_stats(ckpt, 0)), InputError);
  CHECK_THROWS_AS(fit_bottleneck(ckpt, inst, 2, cfg, toy_stats(ckpt, 1)), InputError);
  auto broken = std::make_shared<NoiseStats>(*toy_stats(ckpt, 1));
  broken->mean = Tensor({ckpt.config.d_model}, std::nan(""));
  try {
    fit_bottleneck(ckpt, inst, 1, cfg, broken);
    FAIL("expected OptimizationError");
  } catch (const OptimizationError& e) {
    CHECK(std::string(e.what()).find("trace") != std::string::npos);
  }
}

TEST_CASE("auto beta replaces the configured value") {
  const ModelCheckpoint ckpt = toy_checkpoint();
  const Instance inst = tokenize("the plot was good", ckpt.vocab, ckpt.config.max_seq_len);
  BottleneckConfig cfg;
  cfg.layer = 1;
  cfg.auto_beta = true;
  const BottleneckState s = fit_bottleneck(ckpt, inst, 0, cfg, toy_stats(ckpt, 1));
  CHECK(s.beta == estimate_beta(s.trace[0].ce, s.trace[0].kl));
}

TEST_CASE("attribution read-out") {
  const std::size_t d = 64;
  const auto stats = flat_stats(d, 0.0, 1.0);
  BottleneckState s;
  s.stats = stats;
  s.alpha = Tensor({2, d}, -50.0);
  const Tensor x({2, d}, 1.7);
  const AttributionMap zero = attribution_from_state(s, x, {"[CLS]", "w"});
  for (double v : zero.scores) CHECK(std::abs(v) < 1e-9);

  s.alpha = Tensor({2, d}, 0.0);
  const AttributionMap half = attribution_from_state(s, Tensor({2, d}, 0.0), {"[CLS]", "w"});
  CHECK(std::abs(half.scores[1] - 20.36) < 0.01);
  CHECK(half.method == "iba");
  CHECK_THROWS_AS(attribution_from_state(s, x, {"only-one"}), ShapeError);
}

TEST_CASE("IBA scores ignore PAD count and are nonnegative") {
  const ModelCheckpoint ckpt = toy_checkpoint();
  ModelCheckpoint wide = ckpt.deep_copy();
  const auto stats = toy_stats(ckpt, 1);
  BottleneckConfig cfg;
  cfg.layer = 1;
  cfg.seed = 2;
  const Instance shortpad = tokenize("bad movie", ckpt.vocab, 5);
  const Instance longpad = tokenize("bad movie", ckpt.vocab, ckpt.config.max_seq_len);
  const auto a = iba_attribution(ckpt, shortpad, 0, cfg, stats).map;
  const auto b = iba_attribution(ckpt, longpad, 0, cfg, stats).map;
  CHECK(a.scores == b.scores);
  CHECK(a.tokens == std::vector<std::string>{"[CLS]", "bad", "movie"});
  for (double v : a.scores) CHECK(v >= 0.0);
  validate_attribution_json(to_json(a));
}

TEST_CASE("attribution JSON schema") {
  AttributionMap m;
  m.method = "random";
  m.tokens = {"[CLS]", "x"};
  m.scores = {0.1, 0.2};
  m.target = 1;
  m.seed = 7;
  const auto j = to_json(m);
  CHECK_NOTHROW(validate_attribution_json(j));
  const AttributionMap back = attribution_from_json(j);
  CHECK(back.scores == m.scores);
  CHECK(back.seed == 7);
  auto bad = j;
  bad.erase("scores");
  CHECK_THROWS_AS(validate_attribution_json(bad), InputError);
  bad = j;
  bad["method"] = "shap";
  CHECK_THROWS_AS(validate_attribution_json(bad), InputError);
  bad = j;
  bad["scores"] = {0.1};
  CHECK_THROWS_AS(validate_attribution_json(bad), InputError);
  bad = j;
  bad["target"] = -1;
  CHECK_THROWS_AS(validate_attribution_json(bad), InputError);
}
