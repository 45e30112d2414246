#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "mgpu/error.hpp"
#include "mgpu/runtime.hpp"
#include "mgpu/segvec.hpp"
#include "mgpu/topology.hpp"

namespace mgpu {

enum class ReduceOp { Sum };

template <Element T>
inline void combine(ReduceOp op, T& acc, const T& v) {
  switch (op) {
    case ReduceOp::Sum:
      acc += v;
      break;
  }
}

/// What a reduce did, known at submission time.
struct ReduceStats {
  std::size_t partials = 0;  // device-to-host partial transfers
  bool host_combine = false;
};

/// Rectangular section of row-major matrices with row pitch `pitch`.
struct Window2D {
  std::size_t pitch = 0;
  std::size_t row = 0;
  std::size_t col = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
};

namespace detail {

/// Moves `src` into `dst` along the topology path and books the bytes.
template <Element T>
void transfer(Environment& env, Endpoint from, Endpoint to, std::span<const T> src, std::span<T> dst) {
  const auto kind = env.topology().resolve_path(from, to);
  if (kind == PathKind::HostStaged) {
    std::vector<T> staging(src.begin(), src.end());
    std::copy(staging.begin(), staging.end(), dst.begin());
  } else {
    std::copy(src.begin(), src.end(), dst.begin());
  }
  env.ledger().record(from, to, kind, src.size_bytes());
}

/// Contiguous runs [begin, end) of a window, in memory order.
std::vector<std::pair<std::size_t, std::size_t>> window_runs(const Window2D& w, std::size_t len);

/// Maps a range [lo, hi) of flattened window positions to memory runs.
std::vector<std::pair<std::size_t, std::size_t>> slice_runs(
    const std::vector<std::pair<std::size_t, std::size_t>>& runs, std::size_t lo, std::size_t hi);

}  // namespace detail

/// dst <- src element for element. Spans are matched through their global
/// index ranges, so the two split policies may differ. dst halos are filled.
template <Element T>
Fence copy_seg(const SegVector<T>& src, SegVector<T>& dst) {
  if (&src == &dst) return {};
  if (src.size() != dst.size()) throw UsageError("copy_seg: length mismatch");
  if (&src.environment() != &dst.environment()) throw UsageError("copy_seg: different environments");
  Environment& env = dst.environment();

  struct Piece {
    int src_rank;
    std::size_t src_local;
    std::size_t dst_local;
    std::size_t n;
  };
  // (src rank, dst rank) -> pieces
  std::map<std::pair<int, int>, std::vector<Piece>> plan;

  for (const auto& dd : dst.segments()) {
    const std::size_t dlen = dst.local_range(dd.rank).size();
    const std::size_t dbeg = dst.global_of(dd.rank, 0);
    const std::size_t dend = dbeg + dlen;
    if (src.is_clone()) {
      const int sr = src.has_segment(dd.rank) ? dd.rank : src.segments().front().rank;
      plan[{sr, dd.rank}].push_back({sr, dbeg, 0, dlen});
      continue;
    }
    for (const auto& sd : src.segments()) {
      const std::size_t sbeg = sd.global_offset;
      const std::size_t send = sbeg + sd.len;
      const auto lo = std::max(sbeg, dbeg);
      const auto hi = std::min(send, dend);
      if (lo >= hi) continue;
      const auto [r, sl] = src.segment_of(lo);
      plan[{sd.rank, dd.rank}].push_back({r, sl, lo - dbeg, hi - lo});
    }
  }

  Fence fence;
  for (auto& [ranks, pieces] : plan) {
    const auto [sr, dr] = ranks;
    auto run = [&env, &src, &dst, sr, dr, pieces](int) {
      auto s = src.local_range(sr);
      auto d = dst.local_range(dr);
      for (const auto& p : pieces) {
        detail::transfer<T>(env, env.endpoint(sr), env.endpoint(dr), s.subspan(p.src_local, p.n),
                            d.subspan(p.dst_local, p.n));
      }
    };
    if (sr == dr) {
      fence.join(env.submit(dr, [run] { run(0); }));
    } else {
      // Pull on the destination while the source queue is parked.
      const int rs[2] = {sr, dr};
      fence.join(env.submit_spmd(rs, {[run, dr](int rank) {
                                   if (rank == dr) run(rank);
                                 }}));
    }
  }
  return fence;
}

/// Each segment receives its global span of `host` (halos included). On a
/// Clone destination every device gets the whole array. `host` must stay
/// alive until the fence completes.
template <Element T>
Fence scatter(std::span<const T> host, SegVector<T>& dst) {
  if (host.size() != dst.size()) throw UsageError("scatter: length mismatch");
  Environment& env = dst.environment();
  Fence fence;
  for (const auto& d : dst.segments()) {
    const int r = d.rank;
    const auto begin = dst.global_of(r, 0);
    fence.join(env.submit(r, [&env, &dst, host, r, begin] {
      auto local = dst.local_range(r);
      detail::transfer<T>(env, Endpoint::host(), env.endpoint(r), host.subspan(begin, local.size()), local);
    }));
  }
  return fence;
}

/// Host array <- logical contents (owned elements only; Clone reads rank 0).
template <Element T>
Fence gather(const SegVector<T>& src, std::span<T> host) {
  if (host.size() != src.size()) throw UsageError("gather: length mismatch");
  Environment& env = src.environment();
  Fence fence;
  for (const auto& d : src.segments()) {
    const int r = d.rank;
    fence.join(env.submit(r, [&env, &src, host, r, off = d.global_offset] {
      auto owned = src.owned_range(r);
      detail::transfer<T>(env, env.endpoint(r), Endpoint::host(), owned, host.subspan(off, owned.size()));
    }));
    if (src.is_clone()) break;
  }
  return fence;
}

/// Copies `host` to every device of a Clone destination.
template <Element T>
Fence broadcast(std::span<const T> host, SegVector<T>& dst) {
  if (!dst.is_clone()) throw UsageError("broadcast: destination must use the clone policy");
  return scatter(host, dst);
}

/// host <- op over all replicas of a Clone source. The lowest rank under
/// each IOH pulls its peers, combines in ascending rank order and ships one
/// partial to the host; the host combines partials when several IOHs take
/// part.
template <Element T>
Fence reduce(const SegVector<T>& src, std::span<T> host, ReduceOp op = ReduceOp::Sum,
             ReduceStats* stats = nullptr) {
  if (!src.is_clone()) throw UsageError("reduce: source must use the clone policy");
  if (host.size() != src.size()) throw UsageError("reduce: length mismatch");
  Environment& env = src.environment();
  const auto& topo = env.topology();

  // Ranks grouped by IOH, groups ordered by their lowest rank.
  std::vector<std::vector<int>> groups;
  std::map<int, std::size_t> group_of_ioh;
  for (int r = 0; r < env.size(); ++r) {
    const int ioh = topo.ioh_of_device(env.device_id(r));
    auto [it, fresh] = group_of_ioh.emplace(ioh, groups.size());
    if (fresh) groups.emplace_back();
    groups[it->second].push_back(r);
  }
  const bool host_combine = groups.size() > 1;
  if (stats) *stats = {groups.size(), host_combine};

  struct State {
    std::vector<DeviceBuffer<T>> acc;
    std::vector<std::vector<T>> partials;
  };
  auto state = std::make_shared<State>();
  for (const auto& g : groups) state->acc.emplace_back(env.device(g.front()).arena(), src.size());
  if (host_combine) state->partials.assign(groups.size(), std::vector<T>(src.size()));

  auto leader_phase = [&env, &src, host, op, groups, state, host_combine](int rank) {
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
      if (groups[gi].front() != rank) continue;
      auto acc = state->acc[gi].span();
      auto own = src.local_range(rank);
      std::copy(own.begin(), own.end(), acc.begin());
      std::vector<T> staged(acc.size());
      for (std::size_t k = 1; k < groups[gi].size(); ++k) {
        const int peer = groups[gi][k];
        detail::transfer<T>(env, env.endpoint(peer), env.endpoint(rank), src.local_range(peer),
                            std::span<T>(staged));
        for (std::size_t i = 0; i < acc.size(); ++i) combine(op, acc[i], staged[i]);
      }
      std::span<T> out = host_combine ? std::span<T>(state->partials[gi]) : host;
      detail::transfer<T>(env, env.endpoint(rank), Endpoint::host(), std::span<const T>(acc), out);
    }
  };
  auto host_phase = [host, op, state, host_combine](int rank) {
    if (!host_combine || rank != 0) return;
    std::copy(state->partials[0].begin(), state->partials[0].end(), host.begin());
    for (std::size_t g = 1; g < state->partials.size(); ++g) {
      for (std::size_t i = 0; i < host.size(); ++i) combine(op, host[i], state->partials[g][i]);
    }
  };
  return env.submit_all_spmd({leader_phase, host_phase});
}

/// Block-wise all-reduce of per-device full-length buffers: every out replica
/// becomes op over all parts replicas. Rank g sums block g of the (optionally
/// windowed) region by pulling it from every peer in ascending rank order,
/// then all ranks exchange their finished blocks. Outside the window `out`
/// is left unchanged. `parts` and `out` must be distinct buffers.
template <Element T>
Fence all_reduce_blockwise(const SegVector<T>& parts, SegVector<T>& out, ReduceOp op = ReduceOp::Sum,
                           std::optional<Window2D> window = std::nullopt) {
  if (!parts.is_clone() || !out.is_clone()) throw UsageError("all_reduce: buffers must use the clone policy");
  if (static_cast<const void*>(&parts) == static_cast<const void*>(&out)) {
    throw UsageError("all_reduce: parts and out alias, double buffering required");
  }
  if (parts.size() != out.size() || &parts.environment() != &out.environment()) {
    throw UsageError("all_reduce: buffer mismatch");
  }
  Environment& env = out.environment();
  const int g = env.size();
  for (int r = 1; r < g; ++r) {
    if (!env.topology().peer_accessible(env.device_id(0), env.device_id(r))) {
      throw UnsupportedError("all_reduce: devices span several IOH groups, peer-to-peer access unavailable");
    }
  }

  const auto runs = window ? detail::window_runs(*window, parts.size())
                           : std::vector<std::pair<std::size_t, std::size_t>>{{0, parts.size()}};
  std::size_t region = 0;
  for (const auto& [b, e] : runs) region += e - b;
  auto blocks = std::make_shared<std::vector<std::vector<std::pair<std::size_t, std::size_t>>>>();
  {
    std::size_t lo = 0;
    for (int r = 0; r < g; ++r) {
      const auto n = region / static_cast<std::size_t>(g) + (static_cast<std::size_t>(r) < region % static_cast<std::size_t>(g) ? 1 : 0);
      blocks->push_back(detail::slice_runs(runs, lo, lo + n));
      lo += n;
    }
  }

  auto reduce_phase = [&env, &parts, &out, op, blocks, g](int rank) {
    auto dst = out.local_range(rank);
    for (const auto& [b, e] : (*blocks)[static_cast<std::size_t>(rank)]) {
      auto own = parts.local_range(0).subspan(b, e - b);
      std::vector<T> acc(e - b);
      // Rank 0's contribution first, then ascending.
      if (rank == 0) {
        std::copy(own.begin(), own.end(), acc.begin());
      } else {
        detail::transfer<T>(env, env.endpoint(0), env.endpoint(rank), own, std::span<T>(acc));
      }
      std::vector<T> peer(e - b);
      for (int r = 1; r < g; ++r) {
        auto src = parts.local_range(r).subspan(b, e - b);
        if (r == rank) {
          std::copy(src.begin(), src.end(), peer.begin());
        } else {
          detail::transfer<T>(env, env.endpoint(r), env.endpoint(rank), src, std::span<T>(peer));
        }
        for (std::size_t i = 0; i < acc.size(); ++i) combine(op, acc[i], peer[i]);
      }
      std::copy(acc.begin(), acc.end(), dst.begin() + static_cast<std::ptrdiff_t>(b));
    }
  };
  auto exchange_phase = [&env, &out, blocks, g](int rank) {
    auto dst = out.local_range(rank);
    for (int r = 0; r < g; ++r) {
      if (r == rank) continue;
      auto src = out.local_range(r);
      for (const auto& [b, e] : (*blocks)[static_cast<std::size_t>(r)]) {
        detail::transfer<T>(env, env.endpoint(r), env.endpoint(rank), std::span<const T>(src.subspan(b, e - b)),
                            dst.subspan(b, e - b));
      }
    }
  };
  return env.submit_all_spmd({reduce_phase, exchange_phase});
}

/// Refreshes every halo row of an Overlap2D vector from the row's owner.
template <Element T>
Fence halo_exchange(SegVector<T>& v) {
  const auto* shape = std::get_if<Overlap2D>(&v.policy());
  if (!shape) throw UsageError("halo_exchange: vector does not use the overlap2d policy");
  Environment& env = v.environment();
  const std::size_t cols = shape->cols;

  std::vector<int> ranks;
  for (const auto& d : v.segments()) ranks.push_back(d.rank);
  auto phase = [&env, &v, cols](int rank) {
    const auto& d = v.segment(rank);
    auto local = v.local_range(rank);
    const std::size_t first_row = d.global_offset / cols - d.halo_lo;
    const std::size_t own_rows = d.len / cols;
    for (std::size_t i = 0; i < d.halo_lo + own_rows + d.halo_hi; ++i) {
      if (i >= d.halo_lo && i < d.halo_lo + own_rows) continue;
      const auto [owner, off] = v.segment_of((first_row + i) * cols);
      auto src = std::as_const(v).local_range(owner).subspan(off, cols);
      detail::transfer<T>(env, env.endpoint(owner), env.endpoint(rank), src, local.subspan(i * cols, cols));
    }
  };
  return env.submit_spmd(ranks, {phase});
}

}  // namespace mgpu
