#include "mgpu/numerics.hpp"

#include <algorithm>
#include <string>

#include "mgpu/comm.hpp"

namespace mgpu {

namespace {

void require_same_layout(const auto& a, const auto& b, const char* op) {
  if (!a.same_layout(b) || a.size() != b.size()) {
    throw UsageError(std::string(op) + ": operands must share one segmentation");
  }
}

}  // namespace

BatchedFftPlan::BatchedFftPlan(Environment& env, std::size_t nx, std::size_t ny, std::size_t batch)
    : env_(&env), nx_(nx), ny_(ny), batch_(batch) {
  if (!is_pow2(nx) || !is_pow2(ny)) {
    throw UsageError("fft size " + std::to_string(nx) + "x" + std::to_string(ny) + " is not a power of two");
  }
  if (batch == 0) throw UsageError("fft batch must be positive");
  for (int r = 0; r < env.size(); ++r) per_rank_.push_back(std::make_shared<Fft2d<float>>(nx, ny));
}

void BatchedFftPlan::check(const SegVector<cfloat>& src, const SegVector<cfloat>& dst) const {
  if (&src.environment() != env_) throw UsageError("fft: container from another environment");
  require_same_layout(src, dst, "fft");
  if (src.size() != matrix_len() * batch_) throw UsageError("fft: container length != nx*ny*batch");
  for (const auto& d : src.segments()) {
    if (src.local_range(d.rank).size() % matrix_len() != 0 || src.global_of(d.rank, 0) % matrix_len() != 0) {
      throw UsageError("fft: segment on rank " + std::to_string(d.rank) + " is not matrix aligned");
    }
  }
}

std::vector<std::size_t> BatchedFftPlan::sub_batches(const SegVector<cfloat>& v) const {
  std::vector<std::size_t> out(static_cast<std::size_t>(env_->size()), 0);
  for (const auto& d : v.segments()) out[static_cast<std::size_t>(d.rank)] = v.local_range(d.rank).size() / matrix_len();
  return out;
}

Fence BatchedFftPlan::run(const SegVector<cfloat>& src, SegVector<cfloat>& dst, FftDirection dir) {
  check(src, dst);
  ++invocations_;
  const auto mlen = matrix_len();
  return invoke_kernel_all(
      *env_,
      [mlen, dir, plans = per_rank_](int rank, std::span<const cfloat> in, std::span<cfloat> out) {
        if (in.data() != out.data()) std::copy(in.begin(), in.end(), out.begin());
        auto& fft = *plans[static_cast<std::size_t>(rank)];
        for (std::size_t off = 0; off < out.size(); off += mlen) fft(out.subspan(off, mlen), dir);
      },
      src, dst);
}

Fence BatchedFftPlan::forward(const SegVector<cfloat>& src, SegVector<cfloat>& dst) {
  return run(src, dst, FftDirection::Forward);
}

Fence BatchedFftPlan::inverse(const SegVector<cfloat>& src, SegVector<cfloat>& dst) {
  return run(src, dst, FftDirection::Inverse);
}

Fence axpy(cfloat a, const SegVector<cfloat>& x, SegVector<cfloat>& y) {
  require_same_layout(x, y, "axpy");
  return invoke_kernel_all(
      x.environment(),
      [a](int, std::span<const cfloat> xs, std::span<cfloat> ys) {
        for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = a * xs[i] + ys[i];
      },
      x, y);
}

Fence pointwise_mul(const SegVector<cfloat>& x, const SegVector<cfloat>& y, SegVector<cfloat>& z) {
  require_same_layout(x, y, "pointwise_mul");
  require_same_layout(x, z, "pointwise_mul");
  return invoke_kernel_all(
      x.environment(),
      [](int, std::span<const cfloat> xs, std::span<const cfloat> ys, std::span<cfloat> zs) {
        for (std::size_t i = 0; i < zs.size(); ++i) zs[i] = xs[i] * ys[i];
      },
      x, y, z);
}

Fence pointwise_conj_mul(const SegVector<cfloat>& x, const SegVector<cfloat>& y, SegVector<cfloat>& z) {
  require_same_layout(x, y, "pointwise_conj_mul");
  require_same_layout(x, z, "pointwise_conj_mul");
  return invoke_kernel_all(
      x.environment(),
      [](int, std::span<const cfloat> xs, std::span<const cfloat> ys, std::span<cfloat> zs) {
        for (std::size_t i = 0; i < zs.size(); ++i) zs[i] = std::conj(xs[i]) * ys[i];
      },
      x, y, z);
}

Fence scale(cfloat a, SegVector<cfloat>& x) {
  return invoke_kernel_all(
      x.environment(),
      [a](int, std::span<cfloat> xs) {
        for (auto& v : xs) v *= a;
      },
      x);
}

Fence add(const SegVector<cfloat>& x, const SegVector<cfloat>& y, SegVector<cfloat>& z) {
  require_same_layout(x, y, "add");
  require_same_layout(x, z, "add");
  return invoke_kernel_all(
      x.environment(),
      [](int, std::span<const cfloat> xs, std::span<const cfloat> ys, std::span<cfloat> zs) {
        for (std::size_t i = 0; i < zs.size(); ++i) zs[i] = xs[i] + ys[i];
      },
      x, y, z);
}

Fence apply_mask(const SegVector<float>& m, SegVector<cfloat>& x) {
  require_same_layout(x, m, "apply_mask");
  return invoke_kernel_all(
      x.environment(),
      [](int, std::span<const float> ms, std::span<cfloat> xs) {
        for (std::size_t i = 0; i < xs.size(); ++i) xs[i] *= ms[i];
      },
      m, x);
}

cfloat dot(const SegVector<cfloat>& x, const SegVector<cfloat>& y) {
  require_same_layout(x, y, "dot");
  Environment& env = x.environment();
  SegVector<cfloat> partials(env, 1, Clone{});
  const bool clone = x.is_clone();
  for (int r = 0; r < env.size(); ++r) {
    const bool counts = x.has_segment(r) && (!clone || r == 0);
    invoke_kernel(
        env, r,
        [counts, &x, &y](int rank, std::span<cfloat> out) {
          std::complex<double> acc = 0.0;
          if (counts) {
            auto xs = x.owned_range(rank);
            auto ys = y.owned_range(rank);
            for (std::size_t i = 0; i < xs.size(); ++i) {
              acc += std::conj(std::complex<double>(xs[i])) * std::complex<double>(ys[i]);
            }
          }
          out[0] = cfloat(acc);
        },
        partials);
  }
  cfloat result{};
  reduce(partials, std::span<cfloat>(&result, 1)).wait();
  return result;
}

Fence gemm(std::size_t m, std::size_t k, std::size_t n, const SegVector<cfloat>& a, const SegVector<cfloat>& b,
           SegVector<cfloat>& c) {
  if (a.size() != m * k || b.size() != k * n || c.size() != m * n) throw UsageError("gemm: shape mismatch");
  if (!b.is_clone()) throw UsageError("gemm: B must use the clone policy");
  if (a.is_clone() || c.is_clone()) throw UsageError("gemm: A and C must be row-split");
  for (const auto& d : a.segments()) {
    if (d.len % k != 0 || d.global_offset % k != 0) throw UsageError("gemm: A segment splits a row");
    if (!c.has_segment(d.rank) || c.segment(d.rank).len != d.len / k * n ||
        c.segment(d.rank).global_offset != d.global_offset / k * n) {
      throw UsageError("gemm: C rows must match A rows per device");
    }
  }
  if (c.segments().size() != a.segments().size()) throw UsageError("gemm: C rows must match A rows per device");

  Environment& env = a.environment();
  Fence f;
  for (const auto& d : a.segments()) {
    f.join(invoke_kernel(
        env, d.rank,
        [k, n](int, std::span<const cfloat> as, std::span<const cfloat> bs, std::span<cfloat> cs) {
          const std::size_t rows = as.size() / k;
          for (std::size_t i = 0; i < rows; ++i) {
            auto crow = cs.subspan(i * n, n);
            std::fill(crow.begin(), crow.end(), cfloat{});
            for (std::size_t p = 0; p < k; ++p) {
              const cfloat aip = as[i * k + p];
              const auto brow = bs.subspan(p * n, n);
              for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
            }
          }
        },
        a, b, c));
  }
  return f;
}

}  // namespace mgpu
