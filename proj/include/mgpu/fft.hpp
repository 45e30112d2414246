#pragma once

#include <cmath>
#include <complex>
#include <concepts>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "mgpu/error.hpp"

namespace mgpu {

enum class FftDirection { Forward, Inverse };

constexpr bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

/// Iterative radix-2 decimation-in-time transform of one fixed length.
/// Forward uses exp(-2 pi i jk/n), inverse exp(+2 pi i jk/n); neither scales.
template <std::floating_point R>
class Radix2Fft {
 public:
  explicit Radix2Fft(std::size_t n) : n_(n), rev_(n), twiddle_(n / 2) {
    if (!is_pow2(n)) throw UsageError("fft length " + std::to_string(n) + " is not a power of two");
    std::size_t bits = 0;
    while ((std::size_t{1} << bits) < n) ++bits;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t r = 0;
      for (std::size_t b = 0; b < bits; ++b) r |= ((i >> b) & 1u) << (bits - 1 - b);
      rev_[i] = r;
    }
    for (std::size_t k = 0; k < n / 2; ++k) {
      const double phi = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
      twiddle_[k] = std::complex<R>(static_cast<R>(std::cos(phi)), static_cast<R>(std::sin(phi)));
    }
  }

  std::size_t size() const { return n_; }

  void operator()(std::span<std::complex<R>> x, FftDirection dir) const {
    for (std::size_t i = 0; i < n_; ++i) {
      if (i < rev_[i]) std::swap(x[i], x[rev_[i]]);
    }
    const bool inverse = dir == FftDirection::Inverse;
    for (std::size_t len = 2; len <= n_; len <<= 1) {
      const std::size_t half = len / 2;
      const std::size_t stride = n_ / len;
      for (std::size_t start = 0; start < n_; start += len) {
        for (std::size_t k = 0; k < half; ++k) {
          auto w = twiddle_[k * stride];
          if (inverse) w = std::conj(w);
          const auto u = x[start + k];
          const auto v = x[start + k + half] * w;
          x[start + k] = u + v;
          x[start + k + half] = u - v;
        }
      }
    }
  }

 private:
  std::size_t n_;
  std::vector<std::size_t> rev_;
  std::vector<std::complex<R>> twiddle_;
};

/// 2D transform of row-major matrices with `nx` columns and `ny` rows:
/// rows first, then columns. The inverse is scaled by 1/(nx*ny).
template <std::floating_point R>
class Fft2d {
 public:
  Fft2d(std::size_t nx, std::size_t ny) : row_(nx), col_(ny), scratch_(ny) {}

  std::size_t nx() const { return row_.size(); }
  std::size_t ny() const { return col_.size(); }

  void operator()(std::span<std::complex<R>> m, FftDirection dir) {
    const std::size_t nx = row_.size(), ny = col_.size();
    if (m.size() != nx * ny) throw UsageError("fft2d: buffer size mismatch");
    for (std::size_t y = 0; y < ny; ++y) row_(m.subspan(y * nx, nx), dir);
    for (std::size_t x = 0; x < nx; ++x) {
      for (std::size_t y = 0; y < ny; ++y) scratch_[y] = m[y * nx + x];
      col_(scratch_, dir);
      for (std::size_t y = 0; y < ny; ++y) m[y * nx + x] = scratch_[y];
    }
    if (dir == FftDirection::Inverse) {
      const R s = R(1) / static_cast<R>(nx * ny);
      for (auto& v : m) v *= s;
    }
  }

 private:
  Radix2Fft<R> row_;
  Radix2Fft<R> col_;
  std::vector<std::complex<R>> scratch_;
};

}  // namespace mgpu
