#include <complex>
#include <random>
#include <vector>

#include "doctest.h"
#include "mgpu/comm.hpp"
#include "mgpu/error.hpp"

using namespace mgpu;

namespace {

std::vector<cfloat> make_samples(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<cfloat> v(n);
  for (auto& x : v) x = {u(rng), u(rng)};
  return v;
}

std::vector<SplitPolicy> policies() {
  return {Natural{}, Blockwise{7}, Clone{}, Overlap2D{12, 10, 2}};
}

}  // namespace

TEST_CASE("gather after scatter is the identity for every policy") {
  const auto host = make_samples(120, 1);
  for (int g = 1; g <= 4; ++g) {
    Environment env(g);
    for (const auto& p : policies()) {
      CAPTURE(to_string(p));
      SegVector<cfloat> v(env, host.size(), p);
      scatter<cfloat>(host, v).wait();
      std::vector<cfloat> back(host.size());
      gather<cfloat>(v, back).wait();
      CHECK(back == host);
    }
  }
}

TEST_CASE("scatter fills halos from the global array") {
  Environment env(3);
  const auto host = make_samples(120, 2);
  SegVector<cfloat> v(env, host.size(), Overlap2D{12, 10, 2});
  scatter<cfloat>(host, v).wait();
  for (int r = 0; r < 3; ++r) {
    const auto local = v.local_range(r);
    for (std::size_t i = 0; i < local.size(); ++i) CHECK(local[i] == host[v.global_of(r, i)]);
  }
}

TEST_CASE("copy between different policies") {
  Environment env(3);
  const auto host = make_samples(120, 3);
  for (const auto& from : policies()) {
    for (const auto& to : policies()) {
      SegVector<cfloat> a(env, host.size(), from);
      SegVector<cfloat> b(env, host.size(), to);
      scatter<cfloat>(host, a).wait();
      copy_seg(a, b).wait();
      std::vector<cfloat> back(host.size());
      gather<cfloat>(b, back).wait();
      CHECK(back == host);
      if (std::holds_alternative<Clone>(to)) {
        for (int r = 0; r < 3; ++r) {
          CHECK(std::equal(host.begin(), host.end(), b.local_range(r).begin()));
        }
      }
    }
  }
  SegVector<cfloat> a(env, 10), b(env, 11);
  CHECK_THROWS_AS(copy_seg(a, b), UsageError);
}

TEST_CASE("broadcast requires a clone and books one copy per device") {
  Environment env(3);
  const auto host = make_samples(16, 4);
  SegVector<cfloat> v(env, 16, Clone{});
  env.ledger().reset();
  broadcast<cfloat>(host, v).wait();
  CHECK(env.ledger().query(PathKind::HostToDevice).bytes == 3 * 16 * sizeof(cfloat));
  SegVector<cfloat> n(env, 16, Natural{});
  CHECK_THROWS_AS(broadcast<cfloat>(host, n), UsageError);
}

TEST_CASE("reduce of a broadcast is G times the input") {
  const auto host = make_samples(64, 5);
  for (int g = 1; g <= 8; ++g) {
    Environment env(8, DevGroup::from_to(0, g), Topology::octo_gpu());
    SegVector<cfloat> v(env, 64, Clone{});
    broadcast<cfloat>(host, v).wait();
    env.ledger().reset();
    std::vector<cfloat> out(64);
    ReduceStats st;
    reduce<cfloat>(v, out, ReduceOp::Sum, &st).wait();
    for (std::size_t i = 0; i < 64; ++i) CHECK(std::abs(out[i] - host[i] * float(g)) <= 1e-6f * float(g));
    const std::size_t iohs = g > 4 ? 2 : 1;
    CHECK(st.partials == iohs);
    CHECK(st.host_combine == (iohs > 1));
    CHECK(env.ledger().query(PathKind::DeviceToHost).count == iohs);
    CHECK(env.ledger().query(PathKind::HostStaged).bytes == 0);
  }
}

TEST_CASE("all reduce matches a host sum on every device") {
  for (int g = 1; g <= 4; ++g) {
    Environment env(g);
    const std::size_t len = 50;
    SegVector<cfloat> parts(env, len, Clone{});
    SegVector<cfloat> out(env, len, Clone{});
    std::vector<std::complex<double>> ref(len);
    for (int r = 0; r < g; ++r) {
      const auto d = make_samples(len, 10 + unsigned(r));
      std::copy(d.begin(), d.end(), parts.local_range(r).begin());
      for (std::size_t i = 0; i < len; ++i) ref[i] += std::complex<double>(d[i]);
    }
    all_reduce_blockwise(parts, out).wait();
    for (int r = 0; r < g; ++r) {
      const auto o = out.local_range(r);
      CHECK(std::equal(o.begin(), o.end(), out.local_range(0).begin()));
      for (std::size_t i = 0; i < len; ++i) CHECK(std::abs(std::complex<double>(o[i]) - ref[i]) <= 1e-6 * std::abs(ref[i]) + 1e-7);
    }
    CHECK_THROWS_AS(all_reduce_blockwise(parts, parts), UsageError);
  }
}

TEST_CASE("windowed all reduce leaves the outside untouched") {
  Environment env(3);
  const std::size_t pitch = 8, len = 64;
  SegVector<cfloat> parts(env, len, Clone{});
  SegVector<cfloat> out(env, len, Clone{});
  for (int r = 0; r < 3; ++r) {
    std::fill(parts.local_range(r).begin(), parts.local_range(r).end(), cfloat(float(r + 1), 0.0f));
    std::fill(out.local_range(r).begin(), out.local_range(r).end(), cfloat(-1.0f, 0.0f));
  }
  all_reduce_blockwise(parts, out, ReduceOp::Sum, Window2D{pitch, 2, 1, 4, 5}).wait();
  for (int r = 0; r < 3; ++r) {
    const auto o = out.local_range(r);
    for (std::size_t y = 0; y < 8; ++y) {
      for (std::size_t x = 0; x < pitch; ++x) {
        const bool inside = y >= 2 && y < 6 && x >= 1 && x < 6;
        CHECK(o[y * pitch + x] == cfloat(inside ? 6.0f : -1.0f, 0.0f));
      }
    }
  }
}

TEST_CASE("all reduce across hubs is unsupported") {
  Environment env(8, std::nullopt, Topology::octo_gpu());
  SegVector<cfloat> parts(env, 8, Clone{});
  SegVector<cfloat> out(env, 8, Clone{});
  CHECK_THROWS_AS(all_reduce_blockwise(parts, out), UnsupportedError);
  Environment half(8, DevGroup::from_to(0, 4), Topology::octo_gpu());
  SegVector<cfloat> p2(half, 8, Clone{});
  SegVector<cfloat> o2(half, 8, Clone{});
  CHECK_NOTHROW(all_reduce_blockwise(p2, o2).wait());
}

TEST_CASE("halo exchange refreshes neighbor rows") {
  Environment env(3);
  const std::size_t rows = 9, cols = 4;
  std::vector<cfloat> host(rows * cols);
  for (std::size_t i = 0; i < host.size(); ++i) host[i] = cfloat(float(i), 0.0f);
  SegVector<cfloat> v(env, host.size(), Overlap2D{rows, cols, 1});
  scatter<cfloat>(host, v).wait();
  // Owners change their rows, halos go stale until the exchange.
  for (int r = 0; r < 3; ++r) {
    for (auto& x : v.owned_range(r)) x += cfloat(1000.0f, 0.0f);
  }
  env.ledger().reset();
  halo_exchange(v).wait();
  for (int r = 0; r < 3; ++r) {
    const auto local = v.local_range(r);
    for (std::size_t i = 0; i < local.size(); ++i) CHECK(local[i] == host[v.global_of(r, i)] + cfloat(1000.0f, 0.0f));
  }
  // Two interior boundaries, one row each way.
  CHECK(env.ledger().query(PathKind::PeerToPeer).bytes == 4 * cols * sizeof(cfloat));
}

TEST_CASE("transfers across hubs are staged through the host") {
  Environment env(8, std::nullopt, Topology::octo_gpu());
  SegVector<cfloat> a(env, 16, Blockwise{2});
  SegVector<cfloat> b(env, 16, Clone{});
  const auto host = make_samples(16, 7);
  scatter<cfloat>(host, a).wait();
  env.ledger().reset();
  copy_seg(a, b).wait();
  CHECK(env.ledger().query(PathKind::HostStaged).bytes > 0);
  std::vector<cfloat> back(16);
  gather<cfloat>(b, back).wait();
  CHECK(back == host);
}
