#include <algorithm>
#include <numeric>
#include <random>

#include "doctest.h"
#include "mgpu/error.hpp"
#include "mgpu/nlinv.hpp"
#include "mgpu/phantom.hpp"
#include "oracles.hpp"

using namespace mgpu;
using namespace mgpu::nlinv;

namespace {

struct Setup {
  ReconGrid grid{8};
  std::size_t channels = 3;
  WeightParams weights;
  std::vector<float> mask;
  HostUnknowns point;
  oracle::NlinvModel::X point_d;
};

Setup make_setup(std::mt19937_64& rng, std::size_t n = 8, std::size_t channels = 3) {
  Setup s;
  s.grid = ReconGrid{n};
  s.channels = channels;
  s.mask = oracle::random_column_mask(s.grid.ng(), 0.5, rng);
  s.point_d = {oracle::random_cvec(s.grid.pixels(), rng), oracle::random_cvec(channels * s.grid.pixels(), rng)};
  s.point = {oracle::to_float(s.point_d.rho), oracle::to_float(s.point_d.chat)};
  return s;
}

double rel(const oracle::cvec& a, const oracle::cvec& b) {
  oracle::cvec d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  return oracle::norm2(d) / oracle::norm2(b);
}

}  // namespace

TEST_CASE("weight grid and schedule") {
  const auto w = weight_grid(8, WeightParams{220.0, 32.0});
  CHECK(w[0] == 1.0);
  // |k| = 1/8 along x
  CHECK(w[1] == doctest::Approx(std::pow(1.0 + 220.0 / 64.0, 16.0)));
  CHECK(w[1] == w[7]);
  CHECK(w[8] == w[1]);
  RegSchedule r;
  for (int i = 0; i + 1 < r.newton_steps; ++i) CHECK(r.alpha(i + 1) < r.alpha(i));
  CHECK(r.alpha(2) == doctest::Approx(1.0 / 9.0));
}

TEST_CASE("field of view helpers") {
  ReconGrid g{4};
  const auto m = g.fov_mask();
  CHECK(std::count(m.begin(), m.end(), 1.0f) == 16);
  CHECK(m[2 * 8 + 2] == 1.0f);
  CHECK(m[1 * 8 + 2] == 0.0f);
  std::vector<int> img(16);
  std::iota(img.begin(), img.end(), 1);
  CHECK(g.crop(g.embed(img)) == img);
}

TEST_CASE("operator matches the double precision model") {
  std::mt19937_64 rng(41);
  auto s = make_setup(rng);
  oracle::NlinvModel model(s.grid, s.channels, s.mask, s.weights);
  model.set_point(s.point_d);
  for (int g = 1; g <= 3; ++g) {
    Environment env(g);
    NlinvOperator op(env, s.grid, s.channels, s.mask, s.weights);
    auto x = op.make_unknowns();
    op.upload(s.point, x);
    auto y = op.make_data();
    op.forward(x, y);
    CHECK(rel(oracle::to_double(op.download_data(y)), model.forward(s.point_d)) <= 1e-5);

    const oracle::NlinvModel::X dx{oracle::random_cvec(s.grid.pixels(), rng),
                                   oracle::random_cvec(s.channels * s.grid.pixels(), rng)};
    auto dxd = op.make_unknowns();
    op.upload({oracle::to_float(dx.rho), oracle::to_float(dx.chat)}, dxd);
    auto dy = op.make_data();
    op.derivative(dxd, dy);
    CHECK(rel(oracle::to_double(op.download_data(dy)), model.derivative(dx)) <= 1e-5);

    const auto dyd = oracle::random_cvec(s.channels * s.grid.pixels(), rng);
    op.upload_data(oracle::to_float(dyd), dy);
    auto back = op.make_unknowns();
    op.adjoint(dy, back);
    const auto h = op.download(back);
    const auto ref = model.adjoint(dyd);
    CHECK(rel(oracle::to_double(h.rho), ref.rho) <= 1e-5);
    CHECK(rel(oracle::to_double(h.chat), ref.chat) <= 1e-4);
  }
}

TEST_CASE("double precision model is an exact adjoint pair") {
  std::mt19937_64 rng(42);
  auto s = make_setup(rng);
  oracle::NlinvModel model(s.grid, s.channels, s.mask, s.weights);
  model.set_point(s.point_d);
  for (int t = 0; t < 5; ++t) {
    const oracle::NlinvModel::X dx{oracle::random_cvec(s.grid.pixels(), rng),
                                   oracle::random_cvec(s.channels * s.grid.pixels(), rng)};
    const auto dy = oracle::random_cvec(s.channels * s.grid.pixels(), rng);
    const auto lhs = oracle::inner(model.derivative(dx), dy);
    const auto back = model.adjoint(dy);
    const auto rhs = oracle::inner(dx.rho, back.rho) + oracle::inner(dx.chat, back.chat);
    CHECK(std::abs(lhs - rhs) <= 1e-10 * std::abs(lhs));
  }
}

TEST_CASE("operator applications do the documented work") {
  std::mt19937_64 rng(43);
  auto s = make_setup(rng);
  Environment env(3);
  NlinvOperator op(env, s.grid, s.channels, s.mask, s.weights);
  auto x = op.make_unknowns();
  op.upload(s.point, x);
  auto y = op.make_data();
  auto dx = op.make_unknowns();
  CHECK_THROWS_AS(op.derivative(dx, y), UsageError);
  const auto f = op.forward(x, y);
  CHECK(f.fft == 2);
  const auto d = op.derivative(x, y);
  CHECK(d.fft == 2);
  CHECK(d.channel_sum == 0);
  const auto a = op.adjoint(y, dx);
  CHECK(a.fft == 2);
  CHECK(a.channel_sum == 1);
  CHECK(a.allreduce == 1);
  const auto n = op.normal(x, dx, 0.5);
  CHECK(n.fft == 4);
  CHECK(n.allreduce == 1);
}

TEST_CASE("normal operator is self adjoint and positive") {
  std::mt19937_64 rng(44);
  auto s = make_setup(rng);
  Environment env(2);
  NlinvOperator op(env, s.grid, s.channels, s.mask, s.weights);
  UnknownsSpace space(op);
  auto x = op.make_unknowns();
  op.upload(s.point, x);
  auto y = op.make_data();
  op.forward(x, y);
  auto u = op.make_unknowns(), v = op.make_unknowns(), nu = op.make_unknowns(), nv = op.make_unknowns();
  op.upload({oracle::to_float(oracle::random_cvec(s.grid.pixels(), rng)),
             oracle::to_float(oracle::random_cvec(s.channels * s.grid.pixels(), rng))},
            u);
  op.upload({oracle::to_float(oracle::random_cvec(s.grid.pixels(), rng)),
             oracle::to_float(oracle::random_cvec(s.channels * s.grid.pixels(), rng))},
            v);
  op.normal(u, nu, 0.1);
  op.normal(v, nv, 0.1);
  const double a = space.dot(nu, v), b = space.dot(u, nv);
  CHECK(std::abs(a - b) <= 1e-4 * std::abs(a));
  CHECK(space.dot(u, nu) > 0.0);
}

TEST_CASE("point spread function convolution equals the normal operator of the image part") {
  std::mt19937_64 rng(45);
  auto s = make_setup(rng);
  Environment env(3);
  NlinvOperator op(env, s.grid, s.channels, s.mask, s.weights);
  auto x = op.make_unknowns();
  op.upload(s.point, x);
  auto y = op.make_data();
  op.forward(x, y);

  // DF^H DF applied to (drho, 0) gives M sum_j conj(c_j) N psf(M drho c_j).
  const auto drho = oracle::random_cvec(s.grid.pixels(), rng);
  auto dx = op.make_unknowns();
  op.upload({oracle::to_float(drho), std::vector<cfloat>(s.channels * s.grid.pixels())}, dx);
  auto nx = op.make_unknowns();
  op.normal(dx, nx, 0.0);
  const auto got = op.download(nx).rho;

  const auto coils = op.download_data(op.coils());
  const auto fov = s.grid.fov_mask();
  const auto np = s.grid.pixels();
  std::vector<cfloat> z(s.channels * np);
  for (std::size_t j = 0; j < s.channels; ++j) {
    for (std::size_t i = 0; i < np; ++i) z[j * np + i] = fov[i] * cfloat(drho[i]) * coils[j * np + i];
  }
  auto zs = op.make_data();
  op.upload_data(z, zs);
  auto pz = op.make_data();
  CHECK(op.psf_convolve(zs, pz).fft == 2);
  const auto p = op.download_data(pz);
  oracle::cvec ref(np);
  for (std::size_t j = 0; j < s.channels; ++j) {
    for (std::size_t i = 0; i < np; ++i) {
      ref[i] += double(fov[i]) * double(np) * std::conj(oracle::cd(coils[j * np + i])) * oracle::cd(p[j * np + i]);
    }
  }
  CHECK(rel(oracle::to_double(got), ref) <= 1e-4);
}

TEST_CASE("operator needs at least one channel per device") {
  Environment env(4);
  ReconGrid g{4};
  CHECK_THROWS_AS(NlinvOperator(env, g, 3, std::vector<float>(g.pixels(), 1.0f), WeightParams{}), ConfigError);
}

TEST_CASE("problem validation") {
  ReconProblem p;
  p.grid = ReconGrid{4};
  p.channels = 2;
  p.mask.assign(p.grid.pixels(), 1.0f);
  p.y.assign(2 * p.grid.pixels(), cfloat(1.0f));
  CHECK_NOTHROW(p.validate());
  p.y.pop_back();
  CHECK_THROWS(p.validate());
}

TEST_CASE("all zero data is a numerical abort") {
  ReconProblem p;
  p.grid = ReconGrid{4};
  p.channels = 2;
  p.mask.assign(p.grid.pixels(), 1.0f);
  p.y.assign(2 * p.grid.pixels(), cfloat{});
  Environment env(1);
  CHECK_THROWS_AS(reconstruct_frame(env, p), NumericalError);
}

TEST_CASE("small reconstruction reduces the residual and is device invariant") {
  const ReconGrid grid{32};
  const std::size_t j = 8;
  const auto img = phantom::make_phantom(phantom::PhantomSpec::shepp_logan(32));
  phantom::CoilSpec cs;
  cs.channels = j;
  const auto coils = phantom::make_coils(cs, grid);
  const auto mask = phantom::make_mask(grid.ng(), 0.25, 16, 3);
  ReconProblem p;
  p.grid = grid;
  p.channels = j;
  p.mask = mask;
  p.y = phantom::simulate_acquisition(img, coils, mask, grid, j, 0.0, 1);

  Environment e1(1), e4(4);
  const auto r1 = reconstruct_frame(e1, p);
  const auto r4 = reconstruct_frame(e4, p);
  REQUIRE(r1.residuals.size() == 7);
  for (std::size_t i = 1; i < r1.residuals.size(); ++i) CHECK(r1.residuals[i] <= r1.residuals[i - 1]);
  CHECK(r1.residuals.back() < 0.1);
  double d = 0.0, n = 0.0;
  for (std::size_t i = 0; i < r1.image.size(); ++i) {
    d += std::norm(r1.image[i] - r4.image[i]);
    n += std::norm(r1.image[i]);
  }
  CHECK(std::sqrt(d / n) <= 1e-4);

  // A second frame regularized towards the first.
  const auto series = reconstruct_series(e4, p, {{p.y, p.mask}, {p.y, p.mask}});
  REQUIRE(series.size() == 2);
  CHECK(series[1].data_scale == series[0].data_scale);
  CHECK(series[1].residuals.front() < series[0].residuals.front());
}

TEST_CASE("channel compression keeps the energy of redundant channels") {
  std::mt19937_64 rng(46);
  const std::size_t j = 4, samples = 50;
  auto base = oracle::random_cvec(2 * samples, rng);
  std::vector<cfloat> data(j * samples);
  for (std::size_t s = 0; s < samples; ++s) {
    data[0 * samples + s] = cfloat(base[s]);
    data[1 * samples + s] = cfloat(base[samples + s]);
    data[2 * samples + s] = cfloat(base[s]);
    data[3 * samples + s] = cfloat(base[samples + s]);
  }
  const auto c = compress_channels(data, j, 2);
  CHECK(c.energy_fraction >= 1.0 - 1e-5);
  CHECK(c.eigenvalues.size() == j);
  CHECK(c.eigenvalues[0] >= c.eigenvalues[1]);
  CHECK(c.data.size() == 2 * samples);
  const auto full = compress_channels(data, j, j);
  CHECK(full.energy_fraction == doctest::Approx(1.0));
  CHECK_THROWS_AS(compress_channels(data, j, 0), UsageError);
}
