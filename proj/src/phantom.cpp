#include "mgpu/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "mgpu/error.hpp"
#include "mgpu/fft.hpp"

namespace mgpu::phantom {

namespace {

// Uniform [0, 1) from the top 53 bits; identical on every standard library.
double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double coord(std::size_t i, std::size_t size, std::size_t fov) {
  return (static_cast<double>(i) + 0.5 - static_cast<double>(size) / 2.0) / (static_cast<double>(fov) / 2.0);
}

bool inside(const Ellipse& e, double u, double v) {
  const double t = e.angle * std::numbers::pi / 180.0;
  const double du = u - e.cx, dv = v - e.cy;
  const double ru = du * std::cos(t) + dv * std::sin(t);
  const double rv = -du * std::sin(t) + dv * std::cos(t);
  return (ru * ru) / (e.ax * e.ax) + (rv * rv) / (e.ay * e.ay) <= 1.0;
}

// Half extents of the rotated ellipse's bounding box.
std::pair<double, double> extent(const Ellipse& e) {
  const double t = e.angle * std::numbers::pi / 180.0;
  const double c = std::cos(t), s = std::sin(t);
  return {std::hypot(e.ax * c, e.ay * s), std::hypot(e.ax * s, e.ay * c)};
}

}  // namespace

PhantomSpec PhantomSpec::shepp_logan(std::size_t n) {
  PhantomSpec s;
  s.n = n;
  // intensity, ax, ay, cx, cy, angle
  const double table[10][6] = {
      {1.0, 0.69, 0.92, 0.0, 0.0, 0.0},        {-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0},
      {-0.2, 0.11, 0.31, 0.22, 0.0, -18.0},    {-0.2, 0.16, 0.41, -0.22, 0.0, 18.0},
      {0.1, 0.21, 0.25, 0.0, 0.35, 0.0},       {0.1, 0.046, 0.046, 0.0, 0.1, 0.0},
      {0.1, 0.046, 0.046, 0.0, -0.1, 0.0},     {0.1, 0.046, 0.023, -0.08, -0.605, 0.0},
      {0.1, 0.023, 0.023, 0.0, -0.606, 0.0},   {0.1, 0.023, 0.046, 0.06, -0.605, 0.0},
  };
  for (const auto& r : table) s.ellipses.push_back({r[3], r[4], r[1], r[2], r[5], r[0]});
  return s;
}

std::vector<float> make_phantom(const PhantomSpec& spec, int frame) {
  if (spec.n == 0) throw ConfigError("phantom size must be positive");
  const double t = frame;
  const double grow = 1.0 + t * spec.motion.dilation;
  if (!(grow > 0.0)) throw ConfigError("phantom dilation collapses the object");

  std::vector<Ellipse> moved;
  for (auto e : spec.ellipses) {
    e.cx = e.cx * grow + t * spec.motion.dx;
    e.cy = e.cy * grow + t * spec.motion.dy;
    e.ax *= grow;
    e.ay *= grow;
    const auto [hx, hy] = extent(e);
    if (std::abs(e.cx) + hx > 1.0 || std::abs(e.cy) + hy > 1.0) {
      throw ConfigError("phantom ellipse leaves the field of view in frame " + std::to_string(frame));
    }
    moved.push_back(e);
  }

  std::vector<float> img(spec.n * spec.n, 0.0f);
  for (std::size_t y = 0; y < spec.n; ++y) {
    const double v = -coord(y, spec.n, spec.n);
    for (std::size_t x = 0; x < spec.n; ++x) {
      const double u = coord(x, spec.n, spec.n);
      double acc = 0.0;
      for (const auto& e : moved) {
        if (inside(e, u, v)) acc += e.intensity;
      }
      img[y * spec.n + x] = static_cast<float>(acc);
    }
  }
  return img;
}

std::vector<cfloat> make_coils(const CoilSpec& spec, const nlinv::ReconGrid& grid) {
  if (spec.channels == 0) throw ConfigError("need at least one coil");
  const auto ng = grid.ng();
  const auto np = grid.pixels();
  std::vector<cfloat> out(spec.channels * np);

  if (spec.model == CoilModel::Uniform) {
    std::fill(out.begin(), out.end(), cfloat(static_cast<float>(1.0 / std::sqrt(double(spec.channels))), 0.0f));
    return out;
  }

  std::mt19937_64 rng(spec.seed);
  std::vector<std::complex<double>> maps(spec.channels * np);
  const double two_s2 = 2.0 * spec.lobe_width * spec.lobe_width;
  for (std::size_t j = 0; j < spec.channels; ++j) {
    const double theta = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(spec.channels);
    const double px = spec.ring_radius * std::cos(theta), py = spec.ring_radius * std::sin(theta);
    const double phase0 = 2.0 * std::numbers::pi * uniform01(rng);
    for (std::size_t y = 0; y < ng; ++y) {
      const double v = -coord(y, ng, grid.n);
      for (std::size_t x = 0; x < ng; ++x) {
        const double u = coord(x, ng, grid.n);
        const double d2 = (u - px) * (u - px) + (v - py) * (v - py);
        const double phase = phase0 + spec.phase_slope * (u * std::cos(theta) + v * std::sin(theta));
        maps[j * np + y * ng + x] = std::polar(std::exp(-d2 / two_s2), phase);
      }
    }
  }
  double max_rss = 0.0;
  for (std::size_t i = 0; i < np; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < spec.channels; ++j) s += std::norm(maps[j * np + i]);
    max_rss = std::max(max_rss, std::sqrt(s));
  }
  for (std::size_t i = 0; i < maps.size(); ++i) out[i] = cfloat(maps[i] / max_rss);
  return out;
}

std::vector<float> coil_rss(const std::vector<cfloat>& coils, std::size_t channels) {
  const auto np = coils.size() / channels;
  std::vector<float> rss(np);
  for (std::size_t i = 0; i < np; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < channels; ++j) s += std::norm(std::complex<double>(coils[j * np + i]));
    rss[i] = static_cast<float>(std::sqrt(s));
  }
  return rss;
}

double max_gradient(std::span<const cfloat> map, std::size_t ng) {
  double g = 0.0;
  for (std::size_t y = 0; y < ng; ++y) {
    for (std::size_t x = 0; x < ng; ++x) {
      const auto c = map[y * ng + x];
      if (x + 1 < ng) g = std::max(g, double(std::abs(map[y * ng + x + 1] - c)));
      if (y + 1 < ng) g = std::max(g, double(std::abs(map[(y + 1) * ng + x] - c)));
    }
  }
  return g;
}

std::vector<float> make_mask(std::size_t ng, double density, std::size_t center_band, std::uint64_t seed) {
  if (!is_pow2(ng)) throw ConfigError("mask size must be a power of two");
  if (!(density > 0.0 && density <= 1.0)) throw ConfigError("mask density must lie in (0, 1]");
  if (center_band == 0 || center_band > ng) throw ConfigError("center band must lie in [1, ng]");

  const auto signed_freq = [ng](std::size_t i) {
    return i < ng / 2 ? static_cast<long>(i) : static_cast<long>(i) - static_cast<long>(ng);
  };
  const long half = static_cast<long>(center_band) / 2;
  std::vector<bool> take(ng, false);
  std::size_t taken = 0;
  for (std::size_t i = 0; i < ng; ++i) {
    const long f = signed_freq(i);
    if (f >= -half && f < static_cast<long>(center_band) - half) {
      take[i] = true;
      ++taken;
    }
  }

  const auto target = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(density * double(ng))), taken, ng);
  // Weighted sampling without replacement: keep the largest u^(1/w).
  std::mt19937_64 rng(seed);
  std::vector<std::pair<double, std::size_t>> keys;
  const double falloff = double(ng) / 8.0;
  for (std::size_t i = 0; i < ng; ++i) {
    const double u = uniform01(rng);
    if (take[i]) continue;
    const double f = double(signed_freq(i)) / falloff;
    const double w = 1.0 / (1.0 + f * f);
    keys.emplace_back(std::log(std::max(u, 1e-300)) / w, i);
  }
  std::sort(keys.begin(), keys.end(), [](const auto& a, const auto& b) {
    return a.first > b.first || (a.first == b.first && a.second < b.second);
  });
  for (std::size_t k = 0; taken < target && k < keys.size(); ++k, ++taken) take[keys[k].second] = true;

  std::vector<float> mask(ng * ng, 0.0f);
  for (std::size_t y = 0; y < ng; ++y) {
    for (std::size_t x = 0; x < ng; ++x) mask[y * ng + x] = take[x] ? 1.0f : 0.0f;
  }
  return mask;
}

double column_fraction(const std::vector<float>& mask, std::size_t ng) {
  std::size_t cols = 0;
  for (std::size_t x = 0; x < ng; ++x) {
    if (mask[x] != 0.0f) ++cols;
  }
  return double(cols) / double(ng);
}

std::vector<cfloat> simulate_acquisition(const std::vector<float>& image, const std::vector<cfloat>& coils,
                                         const std::vector<float>& mask, const nlinv::ReconGrid& grid,
                                         std::size_t channels, double sigma, std::uint64_t seed) {
  const auto np = grid.pixels();
  if (image.size() != grid.n * grid.n) throw UsageError("image must be n x n");
  if (coils.size() != channels * np || mask.size() != np) throw UsageError("coil or mask size mismatch");

  std::vector<float> embedded = grid.embed(image);
  const auto fov = grid.fov_mask();
  Fft2d<float> fft(grid.ng(), grid.ng());
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, std::sqrt(0.5));

  std::vector<cfloat> y(channels * np);
  for (std::size_t j = 0; j < channels; ++j) {
    auto yj = std::span<cfloat>(y).subspan(j * np, np);
    for (std::size_t i = 0; i < np; ++i) yj[i] = fov[i] * (embedded[i] * coils[j * np + i]);
    fft(yj, FftDirection::Forward);
    for (std::size_t i = 0; i < np; ++i) {
      yj[i] *= mask[i];
      if (sigma > 0.0 && mask[i] != 0.0f) {
        const double re = normal(rng), im = normal(rng);
        yj[i] += cfloat(static_cast<float>(sigma * re), static_cast<float>(sigma * im));
      }
    }
  }
  return y;
}

std::vector<cfloat> to_weighted_domain(const std::vector<cfloat>& coils, const nlinv::ReconGrid& grid,
                                       std::size_t channels, const nlinv::WeightParams& weights) {
  const auto np = grid.pixels();
  if (coils.size() != channels * np) throw UsageError("coil size mismatch");
  const auto w = nlinv::weight_grid(grid.ng(), weights);
  Fft2d<double> fft(grid.ng(), grid.ng());
  std::vector<std::complex<double>> buf(np);
  std::vector<cfloat> out(coils.size());
  for (std::size_t j = 0; j < channels; ++j) {
    for (std::size_t i = 0; i < np; ++i) buf[i] = std::complex<double>(coils[j * np + i]);
    fft(buf, FftDirection::Forward);
    for (std::size_t i = 0; i < np; ++i) out[j * np + i] = cfloat(buf[i] * w[i]);
  }
  return out;
}

}  // namespace mgpu::phantom
