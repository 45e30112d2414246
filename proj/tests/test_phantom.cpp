#include <random>

#include "doctest.h"
#include "mgpu/error.hpp"
#include "mgpu/fft.hpp"
#include "mgpu/phantom.hpp"
#include "oracles.hpp"

using namespace mgpu;
using namespace mgpu::phantom;

TEST_CASE("single ellipse covering the field of view") {
  PhantomSpec s;
  s.n = 16;
  s.ellipses = {{0.0, 0.0, 0.5, 0.5, 0.0, 1.0}};
  const auto img = make_phantom(s);
  CHECK(img[8 * 16 + 8] == 1.0f);
  CHECK(img[0] == 0.0f);
  for (float v : img) CHECK((v == 0.0f || v == 1.0f));
}

TEST_CASE("phantom rejects ellipses leaving the field of view") {
  auto s = PhantomSpec::shepp_logan(32);
  CHECK_NOTHROW(make_phantom(s, 0));
  s.motion.dx = 0.05;
  CHECK_NOTHROW(make_phantom(s, 1));
  CHECK_THROWS_AS(make_phantom(s, 10), ConfigError);
}

TEST_CASE("phantom motion shifts the object") {
  auto s = PhantomSpec::shepp_logan(32);
  s.motion.dx = 0.0625;  // one pixel per frame
  const auto a = make_phantom(s, 0), b = make_phantom(s, 1);
  CHECK(a != b);
  CHECK(make_phantom(s, 1) == b);
}

TEST_CASE("uniform single coil has unit RSS") {
  nlinv::ReconGrid g{8};
  CoilSpec c;
  c.channels = 1;
  c.model = CoilModel::Uniform;
  for (float v : coil_rss(make_coils(c, g), 1)) CHECK(v == 1.0f);
}

TEST_CASE("ring coils are smooth, normalized and deterministic") {
  nlinv::ReconGrid g{16};
  CoilSpec c;
  c.channels = 6;
  const auto coils = make_coils(c, g);
  CHECK(coils == make_coils(c, g));
  const auto rss = coil_rss(coils, 6);
  CHECK(*std::max_element(rss.begin(), rss.end()) == doctest::Approx(1.0f));
  const auto in = g.crop(rss);
  CHECK(*std::min_element(in.begin(), in.end()) > 0.0f);
  const auto np = g.pixels();
  for (std::size_t j = 0; j < 6; ++j) {
    CHECK(max_gradient(std::span<const cfloat>(coils).subspan(j * np, np), g.ng()) <= 0.1);
  }
}

TEST_CASE("sampling mask density and center band") {
  const std::size_t ng = 64;
  const auto m = make_mask(ng, 0.25, 16, 7);
  CHECK(column_fraction(m, ng) == doctest::Approx(0.25));
  for (std::size_t x = 0; x < 8; ++x) CHECK(m[x] == 1.0f);
  for (std::size_t x = ng - 8; x < ng; ++x) CHECK(m[x] == 1.0f);
  for (std::size_t y = 0; y < ng; ++y) CHECK(m[y * ng + 5] == m[5]);
  CHECK(m == make_mask(ng, 0.25, 16, 7));
  CHECK(make_mask(ng, 0.5, 16, 7) != make_mask(ng, 0.5, 16, 8));
  CHECK(column_fraction(make_mask(ng, 0.01, 16, 7), ng) == doctest::Approx(0.25));
  CHECK_THROWS_AS(make_mask(ng, 0.0, 16, 7), ConfigError);
  CHECK_THROWS_AS(make_mask(48, 0.5, 16, 7), ConfigError);
}

TEST_CASE("acquisition of a full unit-coil scan is the FFT of the image") {
  nlinv::ReconGrid g{8};
  std::mt19937_64 rng(51);
  std::vector<float> img(64);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto& v : img) v = u(rng);
  CoilSpec c;
  c.channels = 1;
  c.model = CoilModel::Uniform;
  const auto coils = make_coils(c, g);
  const std::vector<float> full(g.pixels(), 1.0f);
  const auto y = simulate_acquisition(img, coils, full, g, 1, 0.0, 1);
  const auto e = g.embed(img);
  const auto ref = oracle::dft2_direct(oracle::cvec(e.begin(), e.end()), g.ng(), g.ng(), -1);
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::abs(std::complex<double>(y[i]) - ref[i]) <= 1e-4);

  const auto mask = make_mask(g.ng(), 0.5, 4, 2);
  const auto ym = simulate_acquisition(img, coils, mask, g, 1, 0.0, 1);
  double em = 0.0, ef = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    em += std::norm(ym[i]);
    ef += std::norm(y[i]);
  }
  CHECK(em <= ef);
}

TEST_CASE("noise only touches sampled entries and is seeded") {
  nlinv::ReconGrid g{8};
  const auto img = make_phantom(PhantomSpec::shepp_logan(8));
  CoilSpec c;
  c.channels = 2;
  const auto coils = make_coils(c, g);
  const auto mask = make_mask(g.ng(), 0.5, 4, 2);
  const auto a = simulate_acquisition(img, coils, mask, g, 2, 0.1, 9);
  CHECK(a == simulate_acquisition(img, coils, mask, g, 2, 0.1, 9));
  CHECK(a != simulate_acquisition(img, coils, mask, g, 2, 0.1, 10));
  for (std::size_t j = 0; j < 2; ++j) {
    for (std::size_t i = 0; i < g.pixels(); ++i) {
      if (mask[i] == 0.0f) CHECK(a[j * g.pixels() + i] == cfloat{});
    }
  }
}

TEST_CASE("weighted domain inverts the coil weighting") {
  nlinv::ReconGrid g{8};
  CoilSpec c;
  c.channels = 2;
  const auto coils = make_coils(c, g);
  const nlinv::WeightParams w;
  const auto chat = to_weighted_domain(coils, g, 2, w);
  const auto wg = nlinv::weight_grid(g.ng(), w);
  Fft2d<double> fft(g.ng(), g.ng());
  for (std::size_t j = 0; j < 2; ++j) {
    std::vector<std::complex<double>> b(g.pixels());
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = std::complex<double>(chat[j * g.pixels() + i]) / wg[i];
    fft(b, FftDirection::Inverse);
    for (std::size_t i = 0; i < b.size(); ++i) {
      CHECK(std::abs(b[i] - std::complex<double>(coils[j * g.pixels() + i])) <= 1e-5);
    }
  }
}
