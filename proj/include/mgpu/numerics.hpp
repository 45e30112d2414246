#pragma once

#include <atomic>
#include <cstddef>
#include <memory>
#include <vector>

#include "mgpu/fft.hpp"
#include "mgpu/runtime.hpp"
#include "mgpu/segvec.hpp"

namespace mgpu {

/// Batched 2D FFT over a segmented container of `batch` row-major matrices
/// (`nx` columns, `ny` rows). Each device transforms the matrices it holds;
/// a single matrix is never split across devices.
class BatchedFftPlan {
 public:
  BatchedFftPlan(Environment& env, std::size_t nx, std::size_t ny, std::size_t batch);

  std::size_t nx() const { return nx_; }
  std::size_t ny() const { return ny_; }
  std::size_t batch() const { return batch_; }
  std::size_t matrix_len() const { return nx_ * ny_; }

  /// Unnormalized, negative exponent.
  Fence forward(const SegVector<cfloat>& src, SegVector<cfloat>& dst);
  /// Positive exponent, scaled by 1/(nx*ny).
  Fence inverse(const SegVector<cfloat>& src, SegVector<cfloat>& dst);

  /// Matrices each rank transforms per invocation.
  std::vector<std::size_t> sub_batches(const SegVector<cfloat>& v) const;
  /// Batched transforms submitted through this plan.
  std::size_t invocations() const { return invocations_.load(); }

 private:
  Fence run(const SegVector<cfloat>& src, SegVector<cfloat>& dst, FftDirection dir);
  void check(const SegVector<cfloat>& src, const SegVector<cfloat>& dst) const;

  Environment* env_;
  std::size_t nx_, ny_, batch_;
  // One per rank; only that rank's queue touches it.
  std::vector<std::shared_ptr<Fft2d<float>>> per_rank_;
  std::atomic<std::size_t> invocations_{0};
};

/// Y <- a*X + Y.
Fence axpy(cfloat a, const SegVector<cfloat>& x, SegVector<cfloat>& y);
/// Z <- X (.) Y.
Fence pointwise_mul(const SegVector<cfloat>& x, const SegVector<cfloat>& y, SegVector<cfloat>& z);
/// Z <- conj(X) (.) Y.
Fence pointwise_conj_mul(const SegVector<cfloat>& x, const SegVector<cfloat>& y, SegVector<cfloat>& z);
/// X <- a*X.
Fence scale(cfloat a, SegVector<cfloat>& x);
/// Z <- X + Y.
Fence add(const SegVector<cfloat>& x, const SegVector<cfloat>& y, SegVector<cfloat>& z);
/// X <- M (.) X with a real mask of the same layout.
Fence apply_mask(const SegVector<float>& m, SegVector<cfloat>& x);

/// sum conj(X_i) Y_i. Each device reduces its own segment (double
/// accumulation), the partials go through the reduce collective. On Clone
/// vectors only the rank 0 replica counts. Blocks until done.
cfloat dot(const SegVector<cfloat>& x, const SegVector<cfloat>& y);

/// C <- A B for row-major A (m x k), B (k x n), C (m x n). A and C are split
/// in whole rows with matching row counts per device, B is a Clone, so no
/// inter-device traffic is needed.
Fence gemm(std::size_t m, std::size_t k, std::size_t n, const SegVector<cfloat>& a,
           const SegVector<cfloat>& b, SegVector<cfloat>& c);

}  // namespace mgpu
