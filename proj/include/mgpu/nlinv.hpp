#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "mgpu/cg.hpp"
#include "mgpu/comm.hpp"
#include "mgpu/numerics.hpp"
#include "mgpu/runtime.hpp"
#include "mgpu/segvec.hpp"

namespace mgpu::nlinv {

/// Base image n x n, reconstructed on the doubled grid ng x ng. The field of
/// view is the centered n x n square.
struct ReconGrid {
  std::size_t n = 32;

  std::size_t ng() const { return 2 * n; }
  std::size_t pixels() const { return ng() * ng(); }
  std::size_t fov_offset() const { return n / 2; }
  /// 1 inside the field of view, 0 outside.
  std::vector<float> fov_mask() const;
  Window2D fov_window() const;
  /// n x n crop of an ng x ng image.
  template <class T>
  std::vector<T> crop(const std::vector<T>& full) const {
    std::vector<T> out(n * n);
    for (std::size_t y = 0; y < n; ++y) {
      for (std::size_t x = 0; x < n; ++x) out[y * n + x] = full[(y + fov_offset()) * ng() + x + fov_offset()];
    }
    return out;
  }
  /// ng x ng zero-padded embedding of an n x n image.
  template <class T>
  std::vector<T> embed(const std::vector<T>& img) const {
    std::vector<T> out(pixels(), T{});
    for (std::size_t y = 0; y < n; ++y) {
      for (std::size_t x = 0; x < n; ++x) out[(y + fov_offset()) * ng() + x + fov_offset()] = img[y * n + x];
    }
    return out;
  }
};

/// Sobolev-type weight w(k) = (1 + a |k|^2)^(b/2) on the unshifted DFT grid,
/// k normalized to [-1/2, 1/2)^2. Penalizes high frequencies of the coils.
struct WeightParams {
  double a = 220.0;
  double b = 32.0;
};

/// w(k) for an ng x ng grid, double precision.
std::vector<double> weight_grid(std::size_t ng, const WeightParams& w);

/// alpha_n = alpha0 * q^n.
struct RegSchedule {
  double alpha0 = 1.0;
  double q = 1.0 / 3.0;
  int newton_steps = 6;

  double alpha(int step) const;
};

/// Work done by one operator application (or a sum of them).
struct OpCounters {
  std::size_t fft = 0;          // batched FFT invocations
  std::size_t elementwise = 0;  // point-wise kernel launches
  std::size_t channel_sum = 0;  // sum over channels
  std::size_t dot = 0;          // scalar products
  std::size_t allreduce = 0;    // inter-device image reductions

  OpCounters& operator+=(const OpCounters& o);
  friend bool operator==(const OpCounters&, const OpCounters&) = default;
};

/// Host copy of the unknowns: image rho (ng x ng) and the weighted-domain
/// coil representations chat (channels x ng x ng, c_j = W^-1 chat_j).
struct HostUnknowns {
  std::vector<cfloat> rho;
  std::vector<cfloat> chat;
};

struct ReconProblem {
  ReconGrid grid;
  std::size_t channels = 1;
  std::vector<cfloat> y;     // channels x ng x ng k-space, zero off the mask
  std::vector<float> mask;   // ng x ng sampling pattern P_k
  WeightParams weights;
  RegSchedule reg;
  CgParams cg;
  std::optional<HostUnknowns> x_ref;   // temporal reference; zero if absent
  std::optional<HostUnknowns> x_init;  // start point; rho = 1, chat = 0 if absent

  void validate() const;
};

/// Device-resident unknowns. rho is replicated on every device, chat is
/// split by channel (contiguous channel runs, remainder to low ranks).
struct Unknowns {
  SegVector<cfloat> rho;
  SegVector<cfloat> chat;
};

/// The forward model F(rho, chat)_j = P FFT(M (rho . W^-1 chat_j)) with its
/// derivative and adjoint, distributed over the devices of `env`.
class NlinvOperator {
 public:
  NlinvOperator(Environment& env, const ReconGrid& grid, std::size_t channels, const std::vector<float>& mask,
                const WeightParams& weights);

  Environment& environment() const { return *env_; }
  const ReconGrid& grid() const { return grid_; }
  std::size_t channels() const { return channels_; }

  Unknowns make_unknowns() const;
  /// channels x ng x ng, split like chat.
  SegVector<cfloat> make_data() const;
  /// Clone-replicated ng x ng image.
  SegVector<cfloat> make_image() const;

  void upload(const HostUnknowns& h, Unknowns& x) const;
  HostUnknowns download(const Unknowns& x) const;
  std::vector<cfloat> download_data(const SegVector<cfloat>& d) const;
  void upload_data(const std::vector<cfloat>& h, SegVector<cfloat>& d) const;

  /// c = W^-1 chat = IFFT(chat / w), per channel.
  OpCounters apply_weight_inv(const SegVector<cfloat>& chat, SegVector<cfloat>& c);
  /// Adjoint of apply_weight_inv: chat = FFT(c) / (w ng^2).
  OpCounters apply_weight_inv_adjoint(const SegVector<cfloat>& c, SegVector<cfloat>& chat);

  /// out = F(x). Also makes x the linearization point of derivative/adjoint.
  OpCounters forward(const Unknowns& x, SegVector<cfloat>& out);
  /// dy = DF(x) dx at the linearization point.
  OpCounters derivative(const Unknowns& dx, SegVector<cfloat>& dy);
  /// dx = DF(x)^H dy at the linearization point.
  OpCounters adjoint(const SegVector<cfloat>& dy, Unknowns& dx);
  /// v = DF^H DF dx + alpha dx.
  OpCounters normal(const Unknowns& dx, Unknowns& v, double alpha);
  /// z' = IFFT(P FFT(z)) per channel.
  OpCounters psf_convolve(const SegVector<cfloat>& z, SegVector<cfloat>& out);

  bool linearized() const { return linearized_; }
  const SegVector<cfloat>& coils() const { return coils_; }

 private:
  void require_point() const;

  Environment* env_;
  ReconGrid grid_;
  std::size_t channels_;
  BatchedFftPlan fft_;
  SegVector<float> mask_;    // P_k, per-device replica
  SegVector<float> fov_;     // M_Omega
  SegVector<float> winv_;    // 1 / w(k)
  SegVector<cfloat> coils_;  // cached W^-1 chat at the linearization point
  SegVector<cfloat> rho_lin_;
  SegVector<cfloat> work_;
  SegVector<cfloat> rho_part_;
  SegVector<cfloat> rho_sum_;
  bool linearized_ = false;
};

/// Vector arithmetic over Unknowns for cg_solve.
class UnknownsSpace {
 public:
  explicit UnknownsSpace(const NlinvOperator& op) : op_(&op) {}
  Unknowns make() const;
  double dot(const Unknowns& a, const Unknowns& b) const;
  void axpy(double a, const Unknowns& x, Unknowns& y) const;
  void xpay(const Unknowns& x, double a, Unknowns& y) const;
  void copy(const Unknowns& src, Unknowns& dst) const;
  void zero(Unknowns& x) const;

 private:
  const NlinvOperator* op_;
};

struct NewtonStepLog {
  int step = 0;
  double alpha = 0.0;
  double residual = 0.0;  // |F(x_n) - y| / |y| before the step
  CgResult cg;
  OpCounters counters;
};

struct FrameResult {
  std::vector<cfloat> image;         // n x n, rho times coil RSS, in data units
  HostUnknowns x;                    // final unknowns (scaled data units)
  std::vector<NewtonStepLog> steps;
  std::vector<double> residuals;     // |F(x_n) - y| / |y| for n = 0..N
  double data_scale = 1.0;           // internal scale applied to y
  OpCounters totals;
};

/// One Gauss-Newton step. Returns the step log; x is updated in place.
NewtonStepLog gauss_newton_step(NlinvOperator& op, const SegVector<cfloat>& y, Unknowns& x, const Unknowns& x_ref,
                                double alpha, const CgParams& cg);

/// Runs the regularized Gauss-Newton iteration for one frame. `data_scale`
/// overrides the automatic normalization of y (used across a series).
FrameResult reconstruct_frame(Environment& env, const ReconProblem& problem,
                              std::optional<double> data_scale = std::nullopt);

struct Frame {
  std::vector<cfloat> y;
  std::vector<float> mask;
};

/// Reconstructs frames in order; frame t starts from, and is regularized
/// towards, the result of frame t-1.
std::vector<FrameResult> reconstruct_series(Environment& env, const ReconProblem& base, const std::vector<Frame>& frames);

/// Root-sum-of-squares combination of zero-filled inverse FFTs, n x n.
std::vector<float> zero_filled_rss(const ReconProblem& problem);

struct Compression {
  std::vector<cfloat> data;          // kept x samples
  std::vector<double> eigenvalues;   // descending, all channels
  std::vector<cfloat> basis;         // channels x kept, column k = k-th component
  double energy_fraction = 0.0;
};

/// PCA channel compression of `channels` matrices of `samples` values each.
/// Component signs are fixed so the largest-magnitude entry is real positive.
Compression compress_channels(const std::vector<cfloat>& data, std::size_t channels, std::size_t keep);

}  // namespace mgpu::nlinv
