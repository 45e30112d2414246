#pragma once

#include <atomic>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <exception>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <thread>
#include <utility>
#include <vector>

#include "mgpu/topology.hpp"

namespace mgpu {

/// Contiguous range of physical devices an environment computes on.
struct DevGroup {
  int first = 0;
  int last_exclusive = 0;

  static DevGroup from_to(int first, int last_exclusive) { return {first, last_exclusive}; }
  int size() const { return last_exclusive - first; }
};

/// Private memory of one simulated device. Only tracks the byte budget; the
/// storage itself belongs to DeviceBuffer.
class Arena {
 public:
  explicit Arena(std::size_t capacity_bytes = 0) : capacity_(capacity_bytes) {}

  void reserve(std::size_t bytes);
  void release(std::size_t bytes) noexcept { used_.fetch_sub(bytes); }
  std::size_t used() const { return used_.load(); }
  std::size_t capacity() const { return capacity_; }  // 0 = unlimited

 private:
  std::size_t capacity_;
  std::atomic<std::size_t> used_{0};
};

/// Typed allocation inside one device arena.
template <class T>
class DeviceBuffer {
 public:
  DeviceBuffer() = default;
  DeviceBuffer(Arena& arena, std::size_t n) : arena_(&arena), size_(n) {
    arena.reserve(n * sizeof(T));
    try {
      data_ = std::make_unique_for_overwrite<T[]>(n);
    } catch (...) {
      arena.release(n * sizeof(T));
      throw;
    }
  }
  DeviceBuffer(DeviceBuffer&& o) noexcept { swap(o); }
  DeviceBuffer& operator=(DeviceBuffer&& o) noexcept {
    DeviceBuffer tmp(std::move(o));
    swap(tmp);
    return *this;
  }
  ~DeviceBuffer() {
    if (arena_ && data_) arena_->release(size_ * sizeof(T));
  }

  std::span<T> span() { return {data_.get(), size_}; }
  std::span<const T> span() const { return {data_.get(), size_}; }
  std::size_t size() const { return size_; }

 private:
  void swap(DeviceBuffer& o) noexcept {
    std::swap(arena_, o.arena_);
    std::swap(data_, o.data_);
    std::swap(size_, o.size_);
  }

  Arena* arena_ = nullptr;
  std::unique_ptr<T[]> data_;
  std::size_t size_ = 0;
};

using Command = std::function<void()>;

class Fence;

/// One simulated device: a worker thread draining an in-order command queue.
class DeviceHandle {
 public:
  DeviceHandle(int rank, int device_id, std::size_t arena_bytes);
  ~DeviceHandle();
  DeviceHandle(const DeviceHandle&) = delete;
  DeviceHandle& operator=(const DeviceHandle&) = delete;

  int rank() const { return rank_; }
  int device_id() const { return device_id_; }
  Arena& arena() { return arena_; }

  std::uint64_t enqueue(Command cmd);
  /// Blocks until command `seq` completed. Rethrows the first unreported
  /// command failure at or before `seq`.
  void wait_for(std::uint64_t seq);
  /// Like wait_for but never throws and leaves failures for the next fence.
  void wait_quietly(std::uint64_t seq);
  std::uint64_t submitted() const;
  std::uint64_t completed() const;

 private:
  void run(std::stop_token stop);

  int rank_;
  int device_id_;
  Arena arena_;

  mutable std::mutex mutex_;
  std::condition_variable_any work_cv_;
  std::condition_variable done_cv_;
  std::deque<std::pair<std::uint64_t, Command>> queue_;
  std::uint64_t submitted_ = 0;
  std::uint64_t completed_ = 0;
  std::exception_ptr error_;
  std::uint64_t error_seq_ = 0;

  std::jthread worker_;
};

/// Identifies a set of submitted commands. Waiting returns after all of them
/// completed.
class Fence {
 public:
  Fence() = default;
  Fence(DeviceHandle* dev, std::uint64_t seq) { waits_.emplace_back(dev, seq); }

  void join(const Fence& other);
  void wait() const;
  bool empty() const { return waits_.empty(); }

 private:
  std::vector<std::pair<DeviceHandle*, std::uint64_t>> waits_;
};

/// Owns the simulated devices of one node plus the topology and transfer
/// ledger shared by all communication on them.
class Environment {
 public:
  /// Uses devices [group.first, group.last_exclusive) of `device_count`.
  /// `arena_bytes` = 0 means unlimited device memory.
  explicit Environment(int device_count, std::optional<DevGroup> group = std::nullopt,
                       std::optional<Topology> topology = std::nullopt, std::size_t arena_bytes = 0);
  ~Environment();
  Environment(const Environment&) = delete;
  Environment& operator=(const Environment&) = delete;

  /// Number of ranks in the group. Ranks are 0-based within the group.
  int size() const { return static_cast<int>(devices_.size()); }
  DevGroup group() const { return group_; }
  int device_id(int rank) const { return device(rank).device_id(); }
  Endpoint endpoint(int rank) const { return Endpoint::dev(device_id(rank)); }

  DeviceHandle& device(int rank);
  const DeviceHandle& device(int rank) const;

  const Topology& topology() const { return topology_; }
  TransferLedger& ledger() { return ledger_; }
  const TransferLedger& ledger() const { return ledger_; }

  /// Enqueues `cmd` on `rank` and returns immediately.
  Fence submit(int rank, Command cmd);

  using Phase = std::function<void(int rank)>;
  /// Enqueues a rendezvous on every rank of `ranks`. Once all of them reached
  /// it, each rank runs phases[0](rank), meets the others again, runs
  /// phases[1](rank), and so on. Used for transfers that touch several arenas.
  Fence submit_spmd(std::span<const int> ranks, std::vector<Phase> phases);
  Fence submit_all_spmd(std::vector<Phase> phases);

  /// Blocks until every queue in the group is drained.
  void barrier_fence();
  /// barrier_fence that swallows nothing and reports nothing: command
  /// failures stay pending for the next fence.
  void quiesce() noexcept;

 private:
  void check_rank(int rank) const;

  DevGroup group_;
  Topology topology_;
  TransferLedger ledger_;
  std::vector<std::unique_ptr<DeviceHandle>> devices_;
  std::mutex spmd_mutex_;
};

std::unique_ptr<Environment> create_environment(int device_count,
                                                std::optional<DevGroup> group = std::nullopt);

}  // namespace mgpu
