#include <random>

#include "doctest.h"
#include "mgpu/comm.hpp"
#include "mgpu/error.hpp"
#include "mgpu/fft.hpp"
#include "mgpu/numerics.hpp"
#include "oracles.hpp"

using namespace mgpu;

namespace {

double max_abs_diff(const std::vector<cfloat>& a, const oracle::cvec& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(std::complex<double>(a[i]) - b[i]));
  return m;
}

}  // namespace

TEST_CASE("1d transform of an impulse and a pure tone") {
  Radix2Fft<double> f(8);
  std::vector<std::complex<double>> x(8, 0.0);
  x[0] = 1.0;
  f(x, FftDirection::Forward);
  for (const auto& v : x) CHECK(std::abs(v - 1.0) < 1e-15);

  for (std::size_t i = 0; i < 8; ++i) x[i] = std::polar(1.0, 2.0 * std::numbers::pi * 3.0 * double(i) / 8.0);
  f(x, FftDirection::Forward);
  for (std::size_t k = 0; k < 8; ++k) CHECK(std::abs(x[k]) == doctest::Approx(k == 3 ? 8.0 : 0.0).epsilon(1e-12));
  CHECK_THROWS_AS(Radix2Fft<float>(12), UsageError);
}

TEST_CASE("2d transform matches the direct DFT") {
  std::mt19937_64 rng(11);
  for (std::size_t n : {4u, 8u, 16u}) {
    const auto x = oracle::random_cvec(n * n, rng);
    auto xf = oracle::to_float(x);
    Fft2d<float> f(n, n);
    f(xf, FftDirection::Forward);
    const auto ref = oracle::dft2_direct(x, n, n, -1);
    CHECK(max_abs_diff(xf, ref) <= 1e-4 * double(n));
    f(xf, FftDirection::Inverse);
    CHECK(max_abs_diff(xf, x) <= 1e-5);
  }
}

TEST_CASE("non-square 2d transform") {
  std::mt19937_64 rng(12);
  const auto x = oracle::random_cvec(8 * 4, rng);
  auto xf = oracle::to_float(x);
  Fft2d<float> f(8, 4);
  f(xf, FftDirection::Forward);
  CHECK(max_abs_diff(xf, oracle::dft2_direct(x, 8, 4, -1)) <= 1e-4);
}

TEST_CASE("batched plan transforms each device's matrices") {
  std::mt19937_64 rng(13);
  const std::size_t n = 8, batch = 5;
  const auto x = oracle::random_cvec(n * n * batch, rng);
  const auto xf = oracle::to_float(x);
  for (int g = 1; g <= 3; ++g) {
    Environment env(g);
    SegVector<cfloat> a(env, xf.size(), Blockwise{n * n});
    SegVector<cfloat> b(env, xf.size(), Blockwise{n * n});
    scatter<cfloat>(xf, a).wait();
    BatchedFftPlan plan(env, n, n, batch);
    plan.forward(a, b).wait();
    CHECK(plan.invocations() == 1);
    std::vector<cfloat> out(xf.size());
    gather<cfloat>(b, out).wait();
    for (std::size_t m = 0; m < batch; ++m) {
      const oracle::cvec one(x.begin() + long(m * n * n), x.begin() + long((m + 1) * n * n));
      const auto ref = oracle::dft2_direct(one, n, n, -1);
      const std::vector<cfloat> got(out.begin() + long(m * n * n), out.begin() + long((m + 1) * n * n));
      CHECK(max_abs_diff(got, ref) <= 1e-4);
    }
    std::size_t total = 0;
    for (auto s : plan.sub_batches(a)) total += s;
    CHECK(total == batch);
    plan.inverse(b, b).wait();
    gather<cfloat>(b, out).wait();
    CHECK(max_abs_diff(out, x) <= 1e-5);
  }
}

TEST_CASE("batched plan rejects misaligned containers") {
  Environment env(2);
  SegVector<cfloat> a(env, 3 * 16, Natural{});
  BatchedFftPlan plan(env, 4, 4, 3);
  CHECK_THROWS_AS(plan.forward(a, a), UsageError);
  SegVector<cfloat> b(env, 2 * 16, Blockwise{16});
  CHECK_THROWS_AS(plan.forward(b, b), UsageError);
  CHECK_THROWS_AS(BatchedFftPlan(env, 6, 4, 1), UsageError);
}
