#include "mgpu/runtime.hpp"

#include <barrier>
#include <string>

#include "mgpu/error.hpp"

namespace mgpu {

void Arena::reserve(std::size_t bytes) {
  std::size_t cur = used_.load();
  do {
    if (capacity_ != 0 && cur + bytes > capacity_) {
      throw AllocationError("arena exhausted: requested " + std::to_string(bytes) + " bytes, " +
                            std::to_string(capacity_ - cur) + " free");
    }
  } while (!used_.compare_exchange_weak(cur, cur + bytes));
}

DeviceHandle::DeviceHandle(int rank, int device_id, std::size_t arena_bytes)
    : rank_(rank), device_id_(device_id), arena_(arena_bytes) {
  worker_ = std::jthread([this](std::stop_token st) { run(st); });
}

DeviceHandle::~DeviceHandle() {
  worker_.request_stop();
  work_cv_.notify_all();
}

std::uint64_t DeviceHandle::enqueue(Command cmd) {
  std::uint64_t seq;
  {
    std::lock_guard lock(mutex_);
    seq = ++submitted_;
    queue_.emplace_back(seq, std::move(cmd));
  }
  work_cv_.notify_one();
  return seq;
}

void DeviceHandle::run(std::stop_token stop) {
  while (true) {
    std::pair<std::uint64_t, Command> item;
    {
      std::unique_lock lock(mutex_);
      // Drain everything before honoring a stop request.
      work_cv_.wait(lock, stop, [&] { return !queue_.empty(); });
      if (queue_.empty()) return;
      item = std::move(queue_.front());
      queue_.pop_front();
    }
    std::exception_ptr err;
    try {
      item.second();
    } catch (...) {
      err = std::current_exception();
    }
    {
      std::lock_guard lock(mutex_);
      if (err && !error_) {
        error_ = err;
        error_seq_ = item.first;
      }
      completed_ = item.first;
    }
    done_cv_.notify_all();
  }
}

void DeviceHandle::wait_for(std::uint64_t seq) {
  std::unique_lock lock(mutex_);
  done_cv_.wait(lock, [&] { return completed_ >= seq; });
  if (error_ && error_seq_ <= seq) {
    auto e = std::exchange(error_, nullptr);
    std::rethrow_exception(e);
  }
}

void DeviceHandle::wait_quietly(std::uint64_t seq) {
  std::unique_lock lock(mutex_);
  done_cv_.wait(lock, [&] { return completed_ >= seq; });
}

std::uint64_t DeviceHandle::submitted() const {
  std::lock_guard lock(mutex_);
  return submitted_;
}

std::uint64_t DeviceHandle::completed() const {
  std::lock_guard lock(mutex_);
  return completed_;
}

void Fence::join(const Fence& other) {
  for (const auto& w : other.waits_) {
    bool merged = false;
    for (auto& mine : waits_) {
      if (mine.first == w.first) {
        mine.second = std::max(mine.second, w.second);
        merged = true;
      }
    }
    if (!merged) waits_.push_back(w);
  }
}

void Fence::wait() const {
  std::exception_ptr first;
  for (const auto& [dev, seq] : waits_) {
    try {
      dev->wait_for(seq);
    } catch (...) {
      if (!first) first = std::current_exception();
    }
  }
  if (first) std::rethrow_exception(first);
}

Environment::Environment(int device_count, std::optional<DevGroup> group,
                         std::optional<Topology> topology, std::size_t arena_bytes)
    : topology_(1) {
  if (device_count < 1) throw ConfigError("device count must be positive");
  group_ = group.value_or(DevGroup::from_to(0, device_count));
  if (group_.first < 0 || group_.first >= group_.last_exclusive || group_.last_exclusive > device_count) {
    throw ConfigError("device group [" + std::to_string(group_.first) + "," +
                      std::to_string(group_.last_exclusive) + ") outside [0," +
                      std::to_string(device_count) + ")");
  }
  if (topology) {
    if (topology->device_count() < device_count) {
      throw ConfigError("topology describes " + std::to_string(topology->device_count()) +
                        " devices, environment needs " + std::to_string(device_count));
    }
    topology_ = topology->prefix(device_count);
  } else {
    topology_ = Topology(device_count);
  }
  for (int r = 0; r < group_.size(); ++r) {
    devices_.push_back(std::make_unique<DeviceHandle>(r, group_.first + r, arena_bytes));
  }
}

Environment::~Environment() {
  // Workers drain their queues before joining.
  devices_.clear();
}

void Environment::check_rank(int rank) const {
  if (rank < 0 || rank >= size()) {
    throw UsageError("rank " + std::to_string(rank) + " not in group of " + std::to_string(size()));
  }
}

DeviceHandle& Environment::device(int rank) {
  check_rank(rank);
  return *devices_[static_cast<std::size_t>(rank)];
}

const DeviceHandle& Environment::device(int rank) const {
  check_rank(rank);
  return *devices_[static_cast<std::size_t>(rank)];
}

Fence Environment::submit(int rank, Command cmd) {
  auto& dev = device(rank);
  return Fence(&dev, dev.enqueue(std::move(cmd)));
}

Fence Environment::submit_spmd(std::span<const int> ranks, std::vector<Phase> phases) {
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    check_rank(ranks[i]);
    for (std::size_t j = 0; j < i; ++j) {
      if (ranks[i] == ranks[j]) throw UsageError("duplicate rank in collective");
    }
  }
  if (ranks.empty()) return {};

  struct State {
    explicit State(std::ptrdiff_t n, std::vector<Phase> p) : sync(n), phases(std::move(p)) {}
    std::barrier<> sync;
    std::vector<Phase> phases;
  };
  auto state = std::make_shared<State>(static_cast<std::ptrdiff_t>(ranks.size()), std::move(phases));

  // Collectives enter every queue in one global order, so rendezvous never
  // wait on each other cyclically.
  std::lock_guard lock(spmd_mutex_);
  Fence fence;
  for (int rank : ranks) {
    fence.join(submit(rank, [state, rank] {
      std::exception_ptr err;
      for (auto& phase : state->phases) {
        state->sync.arrive_and_wait();
        if (err) continue;
        try {
          phase(rank);
        } catch (...) {
          err = std::current_exception();
        }
      }
      state->sync.arrive_and_wait();
      if (err) std::rethrow_exception(err);
    }));
  }
  return fence;
}

Fence Environment::submit_all_spmd(std::vector<Phase> phases) {
  std::vector<int> ranks(static_cast<std::size_t>(size()));
  for (int r = 0; r < size(); ++r) ranks[static_cast<std::size_t>(r)] = r;
  return submit_spmd(ranks, std::move(phases));
}

void Environment::barrier_fence() {
  Fence all;
  for (auto& d : devices_) {
    if (const auto seq = d->submitted(); seq > 0) all.join(Fence(d.get(), seq));
  }
  all.wait();
}

void Environment::quiesce() noexcept {
  for (auto& d : devices_) d->wait_quietly(d->submitted());
}

std::unique_ptr<Environment> create_environment(int device_count, std::optional<DevGroup> group) {
  return std::make_unique<Environment>(device_count, group);
}

}  // namespace mgpu
