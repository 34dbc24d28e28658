#include <cstring>
#include <random>
#include <vector>

#include "doctest.h"
#include "ibakit/kernels.hpp"
#include "ibakit/ops.hpp"
#include "support/random.hpp"

using namespace ibakit;
using kernels::KernelTable;

namespace {

std::vector<const KernelTable*> variants() {
  std::vector<const KernelTable*> out;
  if (auto* t = kernels::avx2_table()) out.push_back(t);
  if (auto* t = kernels::neon_table()) out.push_back(t);
  return out;
}

std::vector<double> rand_vec(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> nd(0.0, 3.0);
  std::vector<double> v(n);
  for (double& x : v) x = nd(rng);
  return v;
}

bool bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("dispatch picks an available table") {
  const KernelTable& t = kernels::active();
  CHECK(!t.name.empty());
  CHECK(kernels::force_isa(kernels::Isa::kScalar));
  CHECK(kernels::active().isa == kernels::Isa::kScalar);
  CHECK(kernels::force_isa(t.isa));
}

TEST_CASE("simd variants are bitwise identical to the scalar reference") {
  const KernelTable& ref = kernels::scalar_table();
  std::mt19937_64 rng(7);
  for (const KernelTable* simd : variants()) {
    CAPTURE(simd->name);
    for (std::size_t n : {0u, 1u, 3u, 4u, 5u, 8u, 13u, 64u, 67u}) {
      const auto x = rand_vec(rng, n), y = rand_vec(rng, n);
      std::vector<double> r(n), s(n);
      ref.add(n, x.data(), y.data(), r.data());
      simd->add(n, x.data(), y.data(), s.data());
      CHECK(bit_equal(r, s));
      ref.sub(n, x.data(), y.data(), r.data());
      simd->sub(n, x.data(), y.data(), s.data());
      CHECK(bit_equal(r, s));
      ref.mul(n, x.data(), y.data(), r.data());
      simd->mul(n, x.data(), y.data(), s.data());
      CHECK(bit_equal(r, s));
      r = s = rand_vec(rng, n);
      ref.mul_acc(n, x.data(), y.data(), r.data());
      simd->mul_acc(n, x.data(), y.data(), s.data());
      CHECK(bit_equal(r, s));
      r = s = rand_vec(rng, n);
      ref.axpy(n, 0.37, x.data(), r.data());
      simd->axpy(n, 0.37, x.data(), s.data());
      CHECK(bit_equal(r, s));
      ref.scale(n, -1.7, x.data(), r.data());
      simd->scale(n, -1.7, x.data(), s.data());
      CHECK(bit_equal(r, s));
    }
    for (int trial = 0; trial < 30; ++trial) {
      const std::size_t m = testing::random_dim(rng, 1, 9), k = testing::random_dim(rng, 1, 70),
                        n = testing::random_dim(rng, 1, 70);
      const auto a = rand_vec(rng, m * k), b = rand_vec(rng, k * n);
      std::vector<double> r = rand_vec(rng, m * n);
      std::vector<double> s = r;
      ref.gemm_acc(m, n, k, a.data(), b.data(), r.data());
      simd->gemm_acc(m, n, k, a.data(), b.data(), s.data());
      CHECK(bit_equal(r, s));
    }
  }
}

TEST_CASE("tensor ops agree bitwise across kernel tables") {
  const auto original = kernels::active().isa;
  std::mt19937_64 rng(11);
  const Tensor a = testing::random_tensor(rng, {7, 13});
  const Tensor b = testing::random_tensor(rng, {13, 9});
  const Tensor g = testing::random_tensor(rng, {9});
  const Tensor beta = testing::random_tensor(rng, {9});
  auto compute = [&] {
    Tensor h = gelu(add(matmul(a, b), g));
    return layer_norm(mul(h, h), g, beta);
  };
  REQUIRE(kernels::force_isa(kernels::Isa::kScalar));
  const Tensor ref = compute();
  for (const KernelTable* simd : variants()) {
    REQUIRE(kernels::force_isa(simd->isa));
    const Tensor out = compute();
    CHECK(std::memcmp(ref.data().data(), out.data().data(), ref.numel() * sizeof(double)) == 0);
  }
  kernels::force_isa(original);
}
