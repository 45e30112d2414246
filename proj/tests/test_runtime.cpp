#include <atomic>
#include <chrono>
#include <stdexcept>
#include <thread>
#include <vector>

#include "doctest.h"
#include "mgpu/error.hpp"
#include "mgpu/runtime.hpp"
#include "mgpu/segvec.hpp"

using namespace mgpu;

TEST_CASE("commands on one device run in submission order") {
  Environment env(1);
  std::vector<int> order;
  Fence f;
  for (int i = 0; i < 100; ++i) f.join(env.submit(0, [&order, i] { order.push_back(i); }));
  f.wait();
  REQUIRE(order.size() == 100);
  for (int i = 0; i < 100; ++i) CHECK(order[static_cast<std::size_t>(i)] == i);
}

TEST_CASE("submit returns before the command runs") {
  Environment env(1);
  std::atomic<bool> release{false};
  std::atomic<bool> done{false};
  auto f = env.submit(0, [&] {
    while (!release) std::this_thread::yield();
    done = true;
  });
  CHECK(!done);
  release = true;
  f.wait();
  CHECK(done);
}

TEST_CASE("device failures surface at the fence") {
  Environment env(2);
  auto bad = env.submit(1, [] { throw std::runtime_error("kernel fault"); });
  auto good = env.submit(0, [] {});
  CHECK_NOTHROW(good.wait());
  CHECK_THROWS_WITH_AS(bad.wait(), "kernel fault", std::runtime_error);
  // Reported once, then the queue keeps working.
  auto later = env.submit(1, [] {});
  CHECK_NOTHROW(later.wait());
}

TEST_CASE("barrier fence drains every queue") {
  Environment env(4);
  std::atomic<int> ran{0};
  for (int r = 0; r < 4; ++r) {
    for (int i = 0; i < 10; ++i) env.submit(r, [&ran] { ++ran; });
  }
  env.barrier_fence();
  CHECK(ran == 40);
}

TEST_CASE("spmd phases rendezvous") {
  Environment env(3);
  std::vector<int> first(3, 0);
  std::vector<int> seen(3, 0);
  env.submit_all_spmd({[&](int r) { first[static_cast<std::size_t>(r)] = r + 1; },
                       [&](int r) {
                         int s = 0;
                         for (int v : first) s += v;
                         seen[static_cast<std::size_t>(r)] = s;
                       }})
      .wait();
  for (int s : seen) CHECK(s == 6);
}

TEST_CASE("interleaved collectives on overlapping ranks do not deadlock") {
  Environment env(4);
  std::atomic<int> count{0};
  Fence f;
  for (int i = 0; i < 50; ++i) {
    const int a[2] = {i % 4, (i + 1) % 4};
    f.join(env.submit_spmd(a, {[&count](int) { ++count; }}));
    f.join(env.submit_all_spmd({[&count](int) { ++count; }}));
  }
  f.wait();
  CHECK(count == 50 * 2 + 50 * 4);
  const int dup[2] = {1, 1};
  CHECK_THROWS_AS(env.submit_spmd(dup, {}), UsageError);
}

TEST_CASE("environment groups and ranks") {
  Environment env(8, DevGroup::from_to(2, 5));
  CHECK(env.size() == 3);
  CHECK(env.device_id(0) == 2);
  CHECK(env.endpoint(2) == Endpoint::dev(4));
  CHECK_THROWS_AS(env.device(3), UsageError);
  CHECK_THROWS_AS(Environment(4, DevGroup::from_to(3, 6)), ConfigError);
  CHECK_THROWS_AS(Environment(0), ConfigError);
  CHECK_THROWS_AS(Environment(8, std::nullopt, Topology(4)), ConfigError);
  CHECK(create_environment(2)->size() == 2);
}

TEST_CASE("arena capacity is enforced and released") {
  Environment env(2, std::nullopt, std::nullopt, 1024);
  {
    SegVector<float> v(env, 400, Natural{});
    CHECK(env.device(0).arena().used() == 800);
    CHECK_THROWS_AS(SegVector<float>(env, 200, Natural{}), AllocationError);
  }
  CHECK(env.device(0).arena().used() == 0);
  CHECK(env.device(1).arena().used() == 0);
}

TEST_CASE("dropping a vector waits for its queued commands") {
  Environment env(2);
  std::atomic<bool> release{false};
  std::atomic<int> touched{0};
  std::thread opener;
  {
    SegVector<float> v(env, 1000, Natural{});
    env.submit(0, [&] {
      while (!release) std::this_thread::yield();
    });
    for (int r = 0; r < 2; ++r) {
      auto s = v.local_range(r);
      env.submit(r, [s, &touched] {
        for (auto& x : s) x = 1.0f;
        ++touched;
      });
    }
    opener = std::thread([&] {
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
      release = true;
    });
  }
  CHECK(touched == 2);
  opener.join();
}
