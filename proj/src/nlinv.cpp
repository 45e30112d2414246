#include "mgpu/nlinv.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "mgpu/error.hpp"
#include "mgpu/fft.hpp"

namespace mgpu::nlinv {

namespace {

constexpr double kDataNorm = 100.0;

// Calls fn(block) for every ng^2 channel block of a local channel range.
template <class Span, class Fn>
void for_blocks(Span s, std::size_t n, Fn&& fn) {
  for (std::size_t off = 0; off < s.size(); off += n) fn(s.subspan(off, n));
}

void fill(SegVector<cfloat>& v, cfloat value) {
  invoke_kernel_all(
      v.environment(), [value](int, std::span<cfloat> s) { std::fill(s.begin(), s.end(), value); }, v);
}

double norm(const SegVector<cfloat>& v) { return std::sqrt(std::max(0.0, double(dot(v, v).real()))); }

}  // namespace

std::vector<float> ReconGrid::fov_mask() const {
  std::vector<float> m(pixels(), 0.0f);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) m[(y + fov_offset()) * ng() + x + fov_offset()] = 1.0f;
  }
  return m;
}

Window2D ReconGrid::fov_window() const { return {ng(), fov_offset(), fov_offset(), n, n}; }

std::vector<double> weight_grid(std::size_t ng, const WeightParams& w) {
  std::vector<double> out(ng * ng);
  const auto freq = [ng](std::size_t i) {
    const auto s = static_cast<double>(i < ng / 2 ? static_cast<long>(i) : static_cast<long>(i) - static_cast<long>(ng));
    return s / static_cast<double>(ng);
  };
  for (std::size_t y = 0; y < ng; ++y) {
    for (std::size_t x = 0; x < ng; ++x) {
      const double k2 = freq(x) * freq(x) + freq(y) * freq(y);
      out[y * ng + x] = std::pow(1.0 + w.a * k2, w.b / 2.0);
    }
  }
  return out;
}

double RegSchedule::alpha(int step) const { return alpha0 * std::pow(q, step); }

OpCounters& OpCounters::operator+=(const OpCounters& o) {
  fft += o.fft;
  elementwise += o.elementwise;
  channel_sum += o.channel_sum;
  dot += o.dot;
  allreduce += o.allreduce;
  return *this;
}

void ReconProblem::validate() const {
  const auto ng = grid.ng();
  if (grid.n == 0 || !is_pow2(ng)) throw ConfigError("grid: doubled size " + std::to_string(ng) + " must be a power of two");
  if (channels == 0) throw ConfigError("need at least one channel");
  if (y.size() != channels * grid.pixels()) throw UsageError("measured data has the wrong size");
  if (mask.size() != grid.pixels()) throw UsageError("sampling mask has the wrong size");
  if (std::none_of(mask.begin(), mask.end(), [](float m) { return m != 0.0f; })) {
    throw UsageError("sampling mask is empty");
  }
  for (std::size_t j = 0; j < channels; ++j) {
    for (std::size_t i = 0; i < grid.pixels(); ++i) {
      if (mask[i] == 0.0f && y[j * grid.pixels() + i] != cfloat{}) {
        throw UsageError("measured data is nonzero outside the sampling mask");
      }
    }
  }
  if (!(reg.alpha0 > 0.0) || !(reg.q > 0.0 && reg.q < 1.0) || reg.newton_steps < 1) {
    throw ConfigError("regularization: need alpha0 > 0, 0 < q < 1, newton_steps >= 1");
  }
  if (cg.max_iters < 1 || !(cg.tol >= 0.0)) throw ConfigError("cg: need max_iters >= 1, tol >= 0");
}

NlinvOperator::NlinvOperator(Environment& env, const ReconGrid& grid, std::size_t channels,
                             const std::vector<float>& mask, const WeightParams& weights)
    : env_(&env),
      grid_(grid),
      channels_(channels),
      fft_(env, grid.ng(), grid.ng(), channels),
      mask_(env, grid.pixels(), Clone{}),
      fov_(env, grid.pixels(), Clone{}),
      winv_(env, grid.pixels(), Clone{}),
      coils_(env, channels * grid.pixels(), Blockwise{grid.pixels()}),
      rho_lin_(env, grid.pixels(), Clone{}),
      work_(env, channels * grid.pixels(), Blockwise{grid.pixels()}),
      rho_part_(env, grid.pixels(), Clone{}),
      rho_sum_(env, grid.pixels(), Clone{}) {
  if (channels < static_cast<std::size_t>(env.size())) {
    throw ConfigError(std::to_string(channels) + " channels cannot be spread over " + std::to_string(env.size()) +
                      " devices");
  }
  if (mask.size() != grid.pixels()) throw UsageError("sampling mask has the wrong size");
  const auto w = weight_grid(grid.ng(), weights);
  std::vector<float> winv(w.size());
  std::transform(w.begin(), w.end(), winv.begin(), [](double v) { return static_cast<float>(1.0 / v); });
  const auto fov = grid.fov_mask();
  Fence f = broadcast<float>(mask, mask_);
  f.join(broadcast<float>(fov, fov_));
  f.join(broadcast<float>(winv, winv_));
  f.wait();
  fill(rho_sum_, {});
  fill(coils_, {});
  fill(rho_lin_, {});
}

Unknowns NlinvOperator::make_unknowns() const {
  Unknowns x{make_image(), make_data()};
  return x;
}

SegVector<cfloat> NlinvOperator::make_data() const {
  SegVector<cfloat> d(*env_, channels_ * grid_.pixels(), Blockwise{grid_.pixels()});
  fill(d, {});
  return d;
}

SegVector<cfloat> NlinvOperator::make_image() const {
  SegVector<cfloat> d(*env_, grid_.pixels(), Clone{});
  fill(d, {});
  return d;
}

void NlinvOperator::upload(const HostUnknowns& h, Unknowns& x) const {
  if (h.rho.size() != grid_.pixels() || h.chat.size() != channels_ * grid_.pixels()) {
    throw UsageError("unknowns have the wrong size");
  }
  Fence f = broadcast<cfloat>(h.rho, x.rho);
  f.join(scatter<cfloat>(h.chat, x.chat));
  f.wait();
}

HostUnknowns NlinvOperator::download(const Unknowns& x) const {
  HostUnknowns h{std::vector<cfloat>(grid_.pixels()), std::vector<cfloat>(channels_ * grid_.pixels())};
  Fence f = gather<cfloat>(x.rho, h.rho);
  f.join(gather<cfloat>(x.chat, h.chat));
  f.wait();
  return h;
}

std::vector<cfloat> NlinvOperator::download_data(const SegVector<cfloat>& d) const {
  std::vector<cfloat> h(d.size());
  gather<cfloat>(d, h).wait();
  return h;
}

void NlinvOperator::upload_data(const std::vector<cfloat>& h, SegVector<cfloat>& d) const {
  if (h.size() != d.size()) throw UsageError("data has the wrong size");
  scatter<cfloat>(h, d).wait();
}

void NlinvOperator::require_point() const {
  if (!linearized_) throw UsageError("no linearization point: apply forward() first");
}

OpCounters NlinvOperator::apply_weight_inv(const SegVector<cfloat>& chat, SegVector<cfloat>& c) {
  const auto n = grid_.pixels();
  invoke_kernel_all(
      *env_,
      [n](int, std::span<const cfloat> in, std::span<cfloat> out, std::span<const float> winv) {
        for (std::size_t off = 0; off < in.size(); off += n) {
          for (std::size_t i = 0; i < n; ++i) out[off + i] = in[off + i] * winv[i];
        }
      },
      chat, c, winv_);
  fft_.inverse(c, c);
  return {.fft = 1, .elementwise = 1};
}

OpCounters NlinvOperator::apply_weight_inv_adjoint(const SegVector<cfloat>& c, SegVector<cfloat>& chat) {
  const auto n = grid_.pixels();
  fft_.forward(c, chat);
  const float inv_n = 1.0f / static_cast<float>(n);
  invoke_kernel_all(
      *env_,
      [n, inv_n](int, std::span<cfloat> out, std::span<const float> winv) {
        for_blocks(out, n, [&](std::span<cfloat> b) {
          for (std::size_t i = 0; i < n; ++i) b[i] *= winv[i] * inv_n;
        });
      },
      chat, winv_);
  return {.fft = 1, .elementwise = 1};
}

OpCounters NlinvOperator::forward(const Unknowns& x, SegVector<cfloat>& out) {
  const auto n = grid_.pixels();
  OpCounters c;
  copy_seg(x.rho, rho_lin_);
  c += apply_weight_inv(x.chat, coils_);
  invoke_kernel_all(
      *env_,
      [n](int, std::span<const cfloat> coils, std::span<const cfloat> rho, std::span<const float> fov,
          std::span<cfloat> z) {
        for (std::size_t off = 0; off < coils.size(); off += n) {
          for (std::size_t i = 0; i < n; ++i) z[off + i] = fov[i] * (rho[i] * coils[off + i]);
        }
      },
      coils_, rho_lin_, fov_, work_);
  fft_.forward(work_, out);
  invoke_kernel_all(
      *env_,
      [n](int, std::span<cfloat> d, std::span<const float> p) {
        for_blocks(d, n, [&](std::span<cfloat> b) {
          for (std::size_t i = 0; i < n; ++i) b[i] *= p[i];
        });
      },
      out, mask_);
  c.fft += 1;
  c.elementwise += 2;
  linearized_ = true;
  return c;
}

OpCounters NlinvOperator::derivative(const Unknowns& dx, SegVector<cfloat>& dy) {
  require_point();
  const auto n = grid_.pixels();
  OpCounters c = apply_weight_inv(dx.chat, work_);
  invoke_kernel_all(
      *env_,
      [n](int, std::span<cfloat> dz, std::span<const cfloat> coils, std::span<const cfloat> rho,
          std::span<const cfloat> drho, std::span<const float> fov) {
        for (std::size_t off = 0; off < dz.size(); off += n) {
          for (std::size_t i = 0; i < n; ++i) {
            dz[off + i] = fov[i] * (drho[i] * coils[off + i] + rho[i] * dz[off + i]);
          }
        }
      },
      work_, coils_, rho_lin_, dx.rho, fov_);
  fft_.forward(work_, dy);
  invoke_kernel_all(
      *env_,
      [n](int, std::span<cfloat> d, std::span<const float> p) {
        for_blocks(d, n, [&](std::span<cfloat> b) {
          for (std::size_t i = 0; i < n; ++i) b[i] *= p[i];
        });
      },
      dy, mask_);
  c.fft += 1;
  c.elementwise += 2;
  return c;
}

OpCounters NlinvOperator::adjoint(const SegVector<cfloat>& dy, Unknowns& dx) {
  require_point();
  const auto n = grid_.pixels();
  OpCounters c;

  // work = IFFT(P dy)
  invoke_kernel_all(
      *env_,
      [n](int, std::span<const cfloat> d, std::span<cfloat> w, std::span<const float> p) {
        for (std::size_t off = 0; off < d.size(); off += n) {
          for (std::size_t i = 0; i < n; ++i) w[off + i] = p[i] * d[off + i];
        }
      },
      dy, work_, mask_);
  fft_.inverse(work_, work_);

  // Per-device partial image: the FFT adjoint is ng^2 IFFT.
  const float scale = static_cast<float>(n);
  invoke_kernel_all(
      *env_,
      [n, scale](int, std::span<cfloat> part, std::span<const cfloat> coils, std::span<const cfloat> w) {
        std::fill(part.begin(), part.end(), cfloat{});
        for (std::size_t off = 0; off < w.size(); off += n) {
          for (std::size_t i = 0; i < n; ++i) part[i] += std::conj(coils[off + i]) * w[off + i];
        }
        for (auto& v : part) v *= scale;
      },
      rho_part_, coils_, work_);
  // Only the field of view survives the mask, so only that window is summed.
  all_reduce_blockwise(rho_part_, rho_sum_, ReduceOp::Sum, grid_.fov_window());
  invoke_kernel_all(
      *env_,
      [](int, std::span<cfloat> out, std::span<const cfloat> sum, std::span<const float> fov) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = fov[i] * sum[i];
      },
      dx.rho, rho_sum_, fov_);

  // dchat = W^-H (conj(rho) M ng^2 work) = winv FFT(conj(rho) M work)
  invoke_kernel_all(
      *env_,
      [n](int, std::span<cfloat> w, std::span<const cfloat> rho, std::span<const float> fov) {
        for_blocks(w, n, [&](std::span<cfloat> b) {
          for (std::size_t i = 0; i < n; ++i) b[i] *= fov[i] * std::conj(rho[i]);
        });
      },
      work_, rho_lin_, fov_);
  fft_.forward(work_, dx.chat);
  invoke_kernel_all(
      *env_,
      [n](int, std::span<cfloat> out, std::span<const float> winv) {
        for_blocks(out, n, [&](std::span<cfloat> b) {
          for (std::size_t i = 0; i < n; ++i) b[i] *= winv[i];
        });
      },
      dx.chat, winv_);

  c.fft = 2;
  c.elementwise = 4;
  c.channel_sum = 1;
  c.allreduce = 1;
  return c;
}

OpCounters NlinvOperator::normal(const Unknowns& dx, Unknowns& v, double alpha) {
  auto tmp = make_data();
  OpCounters c = derivative(dx, tmp);
  c += adjoint(tmp, v);
  axpy(cfloat(static_cast<float>(alpha)), dx.rho, v.rho);
  axpy(cfloat(static_cast<float>(alpha)), dx.chat, v.chat);
  c.elementwise += 2;
  return c;
}

OpCounters NlinvOperator::psf_convolve(const SegVector<cfloat>& z, SegVector<cfloat>& out) {
  const auto n = grid_.pixels();
  fft_.forward(z, out);
  invoke_kernel_all(
      *env_,
      [n](int, std::span<cfloat> d, std::span<const float> p) {
        for_blocks(d, n, [&](std::span<cfloat> b) {
          for (std::size_t i = 0; i < n; ++i) b[i] *= p[i];
        });
      },
      out, mask_);
  fft_.inverse(out, out);
  return {.fft = 2, .elementwise = 1};
}

Unknowns UnknownsSpace::make() const { return op_->make_unknowns(); }

double UnknownsSpace::dot(const Unknowns& a, const Unknowns& b) const {
  return double(mgpu::dot(a.rho, b.rho).real()) + double(mgpu::dot(a.chat, b.chat).real());
}

void UnknownsSpace::axpy(double a, const Unknowns& x, Unknowns& y) const {
  mgpu::axpy(cfloat(static_cast<float>(a)), x.rho, y.rho);
  mgpu::axpy(cfloat(static_cast<float>(a)), x.chat, y.chat);
}

void UnknownsSpace::xpay(const Unknowns& x, double a, Unknowns& y) const {
  const float af = static_cast<float>(a);
  auto kernel = [af](int, std::span<const cfloat> xs, std::span<cfloat> ys) {
    for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = xs[i] + af * ys[i];
  };
  invoke_kernel_all(x.rho.environment(), kernel, x.rho, y.rho);
  invoke_kernel_all(x.rho.environment(), kernel, x.chat, y.chat);
}

void UnknownsSpace::copy(const Unknowns& src, Unknowns& dst) const {
  copy_seg(src.rho, dst.rho);
  copy_seg(src.chat, dst.chat);
}

void UnknownsSpace::zero(Unknowns& x) const {
  fill(x.rho, {});
  fill(x.chat, {});
}

NewtonStepLog gauss_newton_step(NlinvOperator& op, const SegVector<cfloat>& y, Unknowns& x, const Unknowns& x_ref,
                                double alpha, const CgParams& cg) {
  NewtonStepLog log;
  log.alpha = alpha;

  auto r = op.make_data();
  log.counters += op.forward(x, r);
  // r = y - F(x)
  invoke_kernel_all(
      op.environment(),
      [](int, std::span<const cfloat> ys, std::span<cfloat> rs) {
        for (std::size_t i = 0; i < rs.size(); ++i) rs[i] = ys[i] - rs[i];
      },
      y, r);
  log.counters.elementwise += 1;
  const double ynorm = norm(y);
  log.residual = ynorm > 0.0 ? norm(r) / ynorm : 0.0;
  log.counters.dot += 2;

  // rhs = DF^H (y - F x) - alpha (x - x_ref)
  UnknownsSpace space(op);
  auto rhs = space.make();
  log.counters += op.adjoint(r, rhs);
  space.axpy(-alpha, x, rhs);
  space.axpy(alpha, x_ref, rhs);
  log.counters.elementwise += 4;

  auto dx = space.make();
  OpCounters inner;
  log.cg = cg_solve(
      space, [&](const Unknowns& p, Unknowns& out) { inner += op.normal(p, out, alpha); }, rhs, dx, cg);
  // Scalar products and vector updates of the CG recursion itself.
  inner.dot += 2 * static_cast<std::size_t>(log.cg.iterations) + 1;
  inner.elementwise += 6 * static_cast<std::size_t>(log.cg.iterations);
  log.counters += inner;

  space.axpy(1.0, dx, x);
  log.counters.elementwise += 2;
  return log;
}

namespace {

HostUnknowns scaled_default_start(const ReconGrid& grid, std::size_t channels) {
  return {std::vector<cfloat>(grid.pixels(), cfloat(1.0f, 0.0f)), std::vector<cfloat>(channels * grid.pixels())};
}

}  // namespace

FrameResult reconstruct_frame(Environment& env, const ReconProblem& problem, std::optional<double> data_scale) {
  problem.validate();
  const auto& grid = problem.grid;
  NlinvOperator op(env, grid, problem.channels, problem.mask, problem.weights);

  FrameResult result;
  double ynorm = 0.0;
  for (const auto& v : problem.y) ynorm += std::norm(std::complex<double>(v));
  ynorm = std::sqrt(ynorm);
  if (!(ynorm > 0.0)) throw NumericalError("measured data is all zero");
  result.data_scale = data_scale.value_or(kDataNorm * std::sqrt(double(grid.pixels())) / ynorm);

  std::vector<cfloat> ys(problem.y.size());
  const float s = static_cast<float>(result.data_scale);
  std::transform(problem.y.begin(), problem.y.end(), ys.begin(), [s](cfloat v) { return v * s; });
  auto y = op.make_data();
  op.upload_data(ys, y);

  auto x = op.make_unknowns();
  op.upload(problem.x_init.value_or(scaled_default_start(grid, problem.channels)), x);
  auto x_ref = op.make_unknowns();
  if (problem.x_ref) op.upload(*problem.x_ref, x_ref);

  for (int step = 0; step < problem.reg.newton_steps; ++step) {
    auto log = gauss_newton_step(op, y, x, x_ref, problem.reg.alpha(step), problem.cg);
    log.step = step;
    if (!std::isfinite(log.residual)) throw NumericalError("residual is not finite at Newton step " + std::to_string(step));
    if (!result.residuals.empty() && log.residual > 10.0 * result.residuals.back()) {
      throw NumericalError("residual grew from " + std::to_string(result.residuals.back()) + " to " +
                           std::to_string(log.residual) + " at Newton step " + std::to_string(step));
    }
    result.residuals.push_back(log.residual);
    result.totals += log.counters;
    result.steps.push_back(log);
  }

  // Final residual and coil maps at x_N.
  auto fx = op.make_data();
  result.totals += op.forward(x, fx);
  const auto fx_host = op.download_data(fx);
  double rr = 0.0, yy = 0.0;
  for (std::size_t i = 0; i < ys.size(); ++i) {
    rr += std::norm(std::complex<double>(ys[i]) - std::complex<double>(fx_host[i]));
    yy += std::norm(std::complex<double>(ys[i]));
  }
  const double final_residual = std::sqrt(rr / yy);
  if (!std::isfinite(final_residual) || final_residual > 10.0 * result.residuals.back()) {
    throw NumericalError("residual diverged after the last Newton step");
  }
  result.residuals.push_back(final_residual);

  result.x = op.download(x);
  const auto coils = op.download_data(op.coils());
  const auto n = grid.pixels();
  std::vector<cfloat> full(n);
  for (std::size_t i = 0; i < n; ++i) {
    double rss = 0.0;
    for (std::size_t j = 0; j < problem.channels; ++j) rss += std::norm(std::complex<double>(coils[j * n + i]));
    full[i] = result.x.rho[i] * static_cast<float>(std::sqrt(rss) / result.data_scale);
  }
  result.image = grid.crop(full);
  return result;
}

std::vector<FrameResult> reconstruct_series(Environment& env, const ReconProblem& base, const std::vector<Frame>& frames) {
  std::vector<FrameResult> out;
  std::optional<double> scale;
  for (const auto& f : frames) {
    ReconProblem p = base;
    p.y = f.y;
    p.mask = f.mask;
    if (!out.empty()) {
      p.x_init = out.back().x;
      p.x_ref = out.back().x;
    }
    out.push_back(reconstruct_frame(env, p, scale));
    scale = out.back().data_scale;
  }
  return out;
}

std::vector<float> zero_filled_rss(const ReconProblem& problem) {
  problem.validate();
  const auto& grid = problem.grid;
  const auto n = grid.pixels();
  Fft2d<float> fft(grid.ng(), grid.ng());
  std::vector<double> acc(n, 0.0);
  std::vector<cfloat> buf(n);
  for (std::size_t j = 0; j < problem.channels; ++j) {
    for (std::size_t i = 0; i < n; ++i) buf[i] = problem.mask[i] * problem.y[j * n + i];
    fft(buf, FftDirection::Inverse);
    for (std::size_t i = 0; i < n; ++i) acc[i] += std::norm(std::complex<double>(buf[i]));
  }
  std::vector<float> full(n);
  std::transform(acc.begin(), acc.end(), full.begin(), [](double v) { return static_cast<float>(std::sqrt(v)); });
  return grid.crop(full);
}

Compression compress_channels(const std::vector<cfloat>& data, std::size_t channels, std::size_t keep) {
  if (channels == 0 || data.size() % channels != 0) throw UsageError("compress: data is not channels x samples");
  if (keep < 1 || keep > channels) throw UsageError("compress: need 1 <= kept channels <= channels");
  const std::size_t samples = data.size() / channels;
  const auto jc = static_cast<Eigen::Index>(channels);

  Eigen::MatrixXcd d(jc, static_cast<Eigen::Index>(samples));
  for (std::size_t j = 0; j < channels; ++j) {
    for (std::size_t s = 0; s < samples; ++s) {
      d(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(s)) = std::complex<double>(data[j * samples + s]);
    }
  }
  const Eigen::MatrixXcd cov = d * d.adjoint();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> eig(cov);
  if (eig.info() != Eigen::Success) throw NumericalError("compress: eigendecomposition failed");

  Compression out;
  double total = 0.0;
  for (Eigen::Index k = jc - 1; k >= 0; --k) {
    const double lambda = std::max(0.0, eig.eigenvalues()(k));
    out.eigenvalues.push_back(lambda);
    total += lambda;
  }
  double kept = 0.0;
  for (std::size_t k = 0; k < keep; ++k) kept += out.eigenvalues[k];
  out.energy_fraction = total > 0.0 ? kept / total : 1.0;

  Eigen::MatrixXcd basis(jc, static_cast<Eigen::Index>(keep));
  for (std::size_t k = 0; k < keep; ++k) {
    Eigen::VectorXcd v = eig.eigenvectors().col(jc - 1 - static_cast<Eigen::Index>(k));
    Eigen::Index big = 0;
    v.cwiseAbs().maxCoeff(&big);
    v *= std::conj(v(big)) / std::abs(v(big));
    basis.col(static_cast<Eigen::Index>(k)) = v;
  }
  const Eigen::MatrixXcd projected = basis.adjoint() * d;

  out.data.resize(keep * samples);
  out.basis.resize(channels * keep);
  for (std::size_t k = 0; k < keep; ++k) {
    for (std::size_t s = 0; s < samples; ++s) {
      out.data[k * samples + s] = cfloat(projected(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(s)));
    }
    for (std::size_t j = 0; j < channels; ++j) {
      out.basis[j * keep + k] = cfloat(basis(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)));
    }
  }
  return out;
}

}  // namespace mgpu::nlinv
