#pragma once

// Gradient-check workloads shared by the unit and acceptance suites: one
// case per differentiable op and random shape-preserving compositions.

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ibakit/grad_check.hpp"
#include "ibakit/ops.hpp"
#include "support/random.hpp"

namespace ibakit::testing {

// Weighted sum gives every output coordinate a distinct upstream gradient.
inline Tensor weighted(const Tensor& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum_all(mul(y, random_tensor(rng, y.shape())));
}

struct GradCase {
  std::string name;
  ScalarFn f;
  Tensor point;
};

// Every catalog op at one random draw of shapes and inputs.
inline std::vector<GradCase> op_catalog_cases(std::mt19937_64& rng) {
  const std::size_t m = random_dim(rng, 1, 5), k = random_dim(rng, 2, 5), n = random_dim(rng, 1, 5);
  const Tensor b = random_tensor(rng, {k, n});
  const Tensor other = random_tensor(rng, {m, k}, 0.5, 2.0);
  const Tensor row = random_tensor(rng, {k}, 0.5, 2.0);
  const Tensor gain = random_tensor(rng, {k}), bias = random_tensor(rng, {k});
  const Tensor x = random_tensor(rng, {m, k}, -2, 2);
  const Tensor xpos = random_tensor(rng, {m, k}, 0.5, 2);
  const std::uint64_t s = rng();
  std::vector<int> ids{0, static_cast<int>(m - 1), 0};
  std::vector<std::uint8_t> keep(k, 1);
  keep[0] = 0;

  // captured by value: the closures outlive this frame
  return {
      {"matmul_lhs", [=](const Tensor& v) { return weighted(matmul(v, b), s); }, x},
      {"matmul_rhs", [=](const Tensor& v) { return weighted(matmul(other, v), s); }, b.clone()},
      {"add", [=](const Tensor& v) { return weighted(add(v, other), s); }, x},
      {"add_bcast", [=](const Tensor& v) { return weighted(add(other, v), s); }, row.clone()},
      {"sub", [=](const Tensor& v) { return weighted(sub(other, v), s); }, x},
      {"sub_bcast", [=](const Tensor& v) { return weighted(sub(other, v), s); }, row.clone()},
      {"mul", [=](const Tensor& v) { return weighted(mul(v, other), s); }, x},
      {"mul_bcast", [=](const Tensor& v) { return weighted(mul(other, v), s); }, row.clone()},
      {"mul_self", [=](const Tensor& v) { return weighted(mul(v, v), s); }, x},
      {"div_num", [=](const Tensor& v) { return weighted(div(v, other), s); }, x},
      {"div_den", [=](const Tensor& v) { return weighted(div(other, v), s); }, xpos},
      {"div_bcast", [=](const Tensor& v) { return weighted(div(other, v), s); }, row.clone()},
      {"exp", [=](const Tensor& v) { return weighted(exp(v), s); }, x},
      {"log", [=](const Tensor& v) { return weighted(log(v), s); }, xpos},
      {"pow", [=](const Tensor& v) { return weighted(pow(v, 3.0), s); }, x},
      {"sigmoid", [=](const Tensor& v) { return weighted(sigmoid(v), s); }, x},
      {"gelu", [=](const Tensor& v) { return weighted(gelu(v), s); }, x},
      {"relu", [=](const Tensor& v) { return weighted(relu(v), s); }, xpos},
      {"scalar", [=](const Tensor& v) { return weighted(mul_scalar(add_scalar(v, 2.0), -3.0), s); }, x},
      {"sum0", [=](const Tensor& v) { return weighted(sum(v, 0), s); }, x},
      {"sum1", [=](const Tensor& v) { return weighted(sum(v, 1), s); }, x},
      {"mean1", [=](const Tensor& v) { return weighted(mean(v, 1), s); }, x},
      {"softmax", [=](const Tensor& v) { return weighted(softmax(v), s); }, x},
      {"masked_softmax", [=](const Tensor& v) { return weighted(masked_softmax(v, keep), s); }, x},
      {"log_softmax", [=](const Tensor& v) { return weighted(log_softmax(v), s); }, x},
      {"gather", [=](const Tensor& v) { return weighted(gather_rows(v, ids), s); }, x},
      {"layer_norm_x", [=](const Tensor& v) { return weighted(layer_norm(v, gain, bias), s); }, x},
      {"layer_norm_gain", [=](const Tensor& v) { return weighted(layer_norm(other, v, bias), s); }, gain.clone()},
      {"layer_norm_bias", [=](const Tensor& v) { return weighted(layer_norm(other, gain, v), s); }, bias.clone()},
      {"concat", [=](const Tensor& v) { std::vector<Tensor> p{v, other, v}; return weighted(concat(p, 1), s); }, x},
      {"slice", [=](const Tensor& v) { return weighted(slice(v, 1, 1, k), s); }, x},
      {"reshape", [=](const Tensor& v) { return weighted(reshape(v, {m * k}), s); }, x},
      {"transpose", [=](const Tensor& v) { return weighted(transpose(v), s); }, x},
      {"select", [=](const Tensor& v) { return select(v, v.numel() - 1); }, x},
      {"mean_all", [=](const Tensor& v) { return mean_all(v); }, x},
      {"clamp_min", [=](const Tensor& v) { return weighted(clamp_min(v, 0.25), s); }, xpos},
  };
}

// Random shape-preserving layer.
inline Tensor random_layer(std::mt19937_64& rng, const Tensor& v) {
  const std::size_t c = v.shape()[1];
  switch (std::uniform_int_distribution<int>(0, 9)(rng)) {
    case 0: return sigmoid(v);
    case 1: return gelu(v);
    case 2: return matmul(v, random_tensor(rng, {c, c}));
    case 3: return add(v, random_tensor(rng, {c}));
    case 4: return mul(v, v);
    case 5: return softmax(v);
    case 6: return layer_norm(v, random_tensor(rng, {c}), random_tensor(rng, {c}));
    case 7: return exp(mul_scalar(v, 0.5));
    case 8: return transpose(matmul(random_tensor(rng, {c, c}), transpose(v)));
    default: return div(v, add_scalar(mul(v, v), 1.0));
  }
}

// A composition of 1-4 random layers drawn from `outer`.
inline GradCase random_composition(std::mt19937_64& outer) {
  const std::uint64_t seed = outer();
  const int depth = std::uniform_int_distribution<int>(1, 4)(outer);
  const std::size_t r = random_dim(outer, 1, 5), c = random_dim(outer, 2, 5);
  std::mt19937_64 init(seed);
  Tensor x = random_tensor(init, {r, c}, -1.5, 1.5);
  auto f = [seed, depth](const Tensor& v) {
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    Tensor h = v;
    for (int d = 0; d < depth; ++d) {
      h = random_layer(rng, h);
      if (h.shape() != v.shape()) h = reshape(h, v.shape());
    }
    return weighted(h, seed + 1);
  };
  return {"composition depth " + std::to_string(depth), f, x};
}

}  // namespace ibakit::testing
