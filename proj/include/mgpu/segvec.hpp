#pragma once

#include <complex>
#include <concepts>
#include <cstddef>
#include <functional>
#include <span>
#include <tuple>
#include <type_traits>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "mgpu/error.hpp"
#include "mgpu/runtime.hpp"

namespace mgpu {

using cfloat = std::complex<float>;

/// Equal shares, the first `len % G` devices get one element more.
struct Natural {};
/// Whole blocks of `block_len` elements, contiguous runs of blocks per device.
struct Blockwise {
  std::size_t block_len = 1;
};
/// Every device holds the full array.
struct Clone {};
/// Row blocks of a rows x cols matrix; each segment also stores up to `halo`
/// rows of each neighbor.
struct Overlap2D {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t halo = 0;
};

using SplitPolicy = std::variant<Natural, Blockwise, Clone, Overlap2D>;

std::string to_string(const SplitPolicy& p);

/// Location of one segment. `len` counts owned elements; halo rows
/// (Overlap2D only) are stored before and after them in the local range.
struct SegmentDescriptor {
  int rank = 0;
  std::size_t global_offset = 0;
  std::size_t len = 0;
  std::size_t halo_lo = 0;  // rows
  std::size_t halo_hi = 0;  // rows

  friend bool operator==(const SegmentDescriptor&, const SegmentDescriptor&) = default;
};

/// Computes the segment layout of `logical_len` elements over `devices`
/// ranks. Devices that receive nothing (Blockwise with fewer blocks than
/// devices) get no descriptor. Throws UsageError if infeasible.
std::vector<SegmentDescriptor> plan_segments(std::size_t logical_len, const SplitPolicy& policy,
                                             int devices);

/// Elements stored on the device for `d`, halos included.
std::size_t local_extent(const SegmentDescriptor& d, const SplitPolicy& policy);

template <class T>
concept Element = std::same_as<T, float> || std::same_as<T, cfloat>;

/// One logical array physically split across the arenas of an environment.
/// Descriptors are fixed at construction. Contents start uninitialized.
template <Element T>
class SegVector {
 public:
  using value_type = T;

  SegVector(Environment& env, std::size_t logical_len, SplitPolicy policy = Natural{})
      : env_(&env), len_(logical_len), policy_(policy) {
    segments_ = plan_segments(logical_len, policy_, env.size());
    slot_of_rank_.assign(static_cast<std::size_t>(env.size()), -1);
    buffers_.reserve(segments_.size());
    for (std::size_t i = 0; i < segments_.size(); ++i) {
      const auto& d = segments_[i];
      slot_of_rank_[static_cast<std::size_t>(d.rank)] = static_cast<int>(i);
      buffers_.emplace_back(env.device(d.rank).arena(), local_extent(d, policy_));
    }
  }

  SegVector(const SegVector&) = delete;
  SegVector& operator=(const SegVector&) = delete;
  SegVector(SegVector&&) noexcept = default;
  SegVector& operator=(SegVector&& o) noexcept {
    if (this != &o) {
      release();
      env_ = o.env_;
      len_ = o.len_;
      policy_ = std::move(o.policy_);
      segments_ = std::move(o.segments_);
      slot_of_rank_ = std::move(o.slot_of_rank_);
      buffers_ = std::move(o.buffers_);
    }
    return *this;
  }
  /// Waits for queued commands before the arenas are released.
  ~SegVector() { release(); }

  Environment& environment() const { return *env_; }
  std::size_t size() const { return len_; }
  const SplitPolicy& policy() const { return policy_; }
  bool is_clone() const { return std::holds_alternative<Clone>(policy_); }
  const std::vector<SegmentDescriptor>& segments() const { return segments_; }

  bool has_segment(int rank) const {
    return rank >= 0 && rank < static_cast<int>(slot_of_rank_.size()) &&
           slot_of_rank_[static_cast<std::size_t>(rank)] >= 0;
  }

  const SegmentDescriptor& segment(int rank) const { return segments_[slot(rank)]; }

  /// The rank's whole local storage, halos included. Only touch it from
  /// commands on that rank, or from the host after a fence.
  std::span<T> local_range(int rank) { return buffers_[slot(rank)].span(); }
  std::span<const T> local_range(int rank) const { return buffers_[slot(rank)].span(); }

  /// The owned (non-halo) part of the local range.
  std::span<T> owned_range(int rank) { return local_range(rank).subspan(halo_lo_elems(rank), segment(rank).len); }
  std::span<const T> owned_range(int rank) const {
    return local_range(rank).subspan(halo_lo_elems(rank), segment(rank).len);
  }

  /// Global index of `local_index` into the rank's local range.
  std::size_t global_of(int rank, std::size_t local_index) const {
    const auto& d = segment(rank);
    if (local_index >= buffers_[slot(rank)].size()) throw UsageError("local index out of range");
    return d.global_offset - halo_lo_elems(rank) + local_index;
  }

  /// Owning rank and local-range index of global element `g`. Clone resolves
  /// to rank 0.
  std::pair<int, std::size_t> segment_of(std::size_t g) const {
    if (g >= len_) throw UsageError("global index " + std::to_string(g) + " out of range");
    if (is_clone()) return {segments_.front().rank, g};
    // Segments are ordered by global offset.
    std::size_t lo = 0, hi = segments_.size();
    while (hi - lo > 1) {
      const auto mid = (lo + hi) / 2;
      if (segments_[mid].global_offset <= g) lo = mid; else hi = mid;
    }
    const auto& d = segments_[lo];
    return {d.rank, g - d.global_offset + halo_lo_elems(d.rank)};
  }

  bool same_layout(const SegVector& o) const { return env_ == o.env_ && segments_ == o.segments_; }

  template <Element U>
  bool same_layout(const SegVector<U>& o) const {
    return env_ == &o.environment() && segments_ == o.segments();
  }

 private:
  void release() noexcept {
    if (!buffers_.empty()) env_->quiesce();
    buffers_.clear();
  }

  std::size_t slot(int rank) const {
    if (!has_segment(rank)) throw UsageError("rank " + std::to_string(rank) + " holds no segment");
    return static_cast<std::size_t>(slot_of_rank_[static_cast<std::size_t>(rank)]);
  }
  std::size_t halo_lo_elems(int rank) const {
    if (const auto* o = std::get_if<Overlap2D>(&policy_)) return segment(rank).halo_lo * o->cols;
    return 0;
  }

  Environment* env_;
  std::size_t len_;
  SplitPolicy policy_;
  std::vector<SegmentDescriptor> segments_;
  std::vector<int> slot_of_rank_;
  std::vector<DeviceBuffer<T>> buffers_;
};

/// Wraps a segmented container so invoke_kernel forwards it whole instead of
/// as the rank's local range.
template <Element T>
struct PassThrough {
  SegVector<T>* vec;
};

template <Element T>
PassThrough<T> pass_through(SegVector<T>& v) {
  return {&v};
}

namespace detail {

template <class A>
struct is_segvec : std::false_type {};
template <Element T>
struct is_segvec<SegVector<T>> : std::true_type {};

template <class A>
struct is_pass_through : std::false_type {};
template <Element T>
struct is_pass_through<PassThrough<T>> : std::true_type {};

// Segmented containers become the rank's local span, PassThrough becomes a
// reference to the container, anything else is copied.
template <class A>
auto bind_local(A&& a, int rank) {
  using D = std::remove_cvref_t<A>;
  if constexpr (is_segvec<D>::value) {
    return a.local_range(rank);
  } else if constexpr (is_pass_through<D>::value) {
    return std::ref(*a.vec);
  } else {
    return D(std::forward<A>(a));
  }
}

template <class A>
bool participates(const A& a, int rank) {
  if constexpr (is_segvec<A>::value) {
    return a.has_segment(rank);
  } else {
    return true;
  }
}

template <class A>
decltype(auto) unwrap(A& a) {
  if constexpr (requires { a.get(); typename A::type; }) {
    return a.get();
  } else {
    return (a);
  }
}

}  // namespace detail

/// Runs `caller(rank, args...)` on `rank`'s queue. Segmented containers in
/// `args` arrive as that rank's local range, PassThrough arrives as the
/// container itself, everything else is copied.
template <class Caller, class... Args>
Fence invoke_kernel(Environment& env, int rank, Caller caller, Args&&... args) {
  auto bound = std::make_tuple(detail::bind_local(std::forward<Args>(args), rank)...);
  return env.submit(rank, [caller = std::move(caller), bound = std::move(bound), rank]() mutable {
    std::apply([&](auto&... a) { caller(rank, detail::unwrap(a)...); }, bound);
  });
}

/// invoke_kernel once per rank holding a segment of every segmented argument
/// (all ranks if there are none).
template <class Caller, class... Args>
Fence invoke_kernel_all(Environment& env, Caller caller, Args&&... args) {
  Fence f;
  for (int r = 0; r < env.size(); ++r) {
    if (!(detail::participates(args, r) && ...)) continue;
    f.join(invoke_kernel(env, r, caller, args...));
  }
  return f;
}

}  // namespace mgpu
