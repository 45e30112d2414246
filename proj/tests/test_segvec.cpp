#include <numeric>
#include <vector>

#include "doctest.h"
#include "mgpu/comm.hpp"
#include "mgpu/error.hpp"
#include "mgpu/segvec.hpp"

using namespace mgpu;

TEST_CASE("natural split front-loads the remainder") {
  const auto s = plan_segments(10, Natural{}, 3);
  REQUIRE(s.size() == 3);
  CHECK(s[0].len == 4);
  CHECK(s[1].len == 3);
  CHECK(s[2].len == 3);
  CHECK(s[1].global_offset == 4);
  CHECK(s[2].global_offset == 7);
  CHECK_THROWS_AS(plan_segments(2, Natural{}, 3), UsageError);
}

TEST_CASE("blockwise split keeps blocks whole") {
  // 5 blocks of 4 over 2 devices: 3 + 2 blocks.
  auto s = plan_segments(20, Blockwise{4}, 2);
  REQUIRE(s.size() == 2);
  CHECK(s[0].len == 12);
  CHECK(s[1].len == 8);
  // Fewer blocks than devices: trailing devices hold nothing.
  s = plan_segments(8, Blockwise{4}, 3);
  REQUIRE(s.size() == 2);
  CHECK(s[1].rank == 1);
  // Partial trailing block.
  s = plan_segments(10, Blockwise{4}, 2);
  CHECK(s[0].len == 8);
  CHECK(s[1].len == 2);
}

TEST_CASE("clone and overlap2d plans") {
  const auto c = plan_segments(7, Clone{}, 3);
  for (const auto& d : c) {
    CHECK(d.len == 7);
    CHECK(d.global_offset == 0);
  }
  const Overlap2D o{5, 4, 1};
  const auto s = plan_segments(20, o, 2);
  REQUIRE(s.size() == 2);
  CHECK(s[0].len == 12);
  CHECK(s[0].halo_lo == 0);
  CHECK(s[0].halo_hi == 1);
  CHECK(s[1].halo_lo == 1);
  CHECK(s[1].halo_hi == 0);
  CHECK(local_extent(s[0], o) == 16);
  CHECK_THROWS_AS(plan_segments(21, o, 2), UsageError);
}

TEST_CASE("segment lookup maps global indices") {
  Environment env(3);
  SegVector<float> v(env, 10, Natural{});
  CHECK(v.segment_of(0) == std::pair<int, std::size_t>{0, 0});
  CHECK(v.segment_of(4) == std::pair<int, std::size_t>{1, 0});
  CHECK(v.segment_of(9) == std::pair<int, std::size_t>{2, 2});
  CHECK(v.global_of(2, 1) == 8);
  CHECK(v.local_range(0).size() == 4);
  CHECK_THROWS_AS(v.segment_of(10), UsageError);

  SegVector<float> h(env, 30, Overlap2D{10, 3, 2});
  CHECK(h.local_range(1).size() == (3 + 2 + 2) * 3);
  CHECK(h.owned_range(1).size() == 9);
  CHECK(h.global_of(1, 0) == 6);
  CHECK(h.segment_of(13).first == 1);
}

TEST_CASE("kernels see local ranges and run where segments live") {
  Environment env(3);
  SegVector<float> v(env, 9, Blockwise{3});
  SegVector<float> w(env, 9, Blockwise{3});
  std::vector<float> host(9);
  std::iota(host.begin(), host.end(), 0.0f);
  scatter<float>(host, v).wait();
  invoke_kernel_all(
      env,
      [](int rank, std::span<const float> a, std::span<float> b, float k) {
        for (std::size_t i = 0; i < a.size(); ++i) b[i] = a[i] * k + float(rank);
      },
      v, w, 2.0f)
      .wait();
  std::vector<float> out(9);
  gather<float>(w, out).wait();
  for (std::size_t i = 0; i < 9; ++i) CHECK(out[i] == host[i] * 2.0f + float(i / 3));
}

TEST_CASE("pass through hands over the whole container") {
  Environment env(2);
  SegVector<float> v(env, 4, Natural{});
  std::vector<std::size_t> sizes(2);
  invoke_kernel_all(env, [&sizes](int rank, SegVector<float>& whole) { sizes[std::size_t(rank)] = whole.size(); },
                    pass_through(v))
      .wait();
  CHECK(sizes == std::vector<std::size_t>{4, 4});
}

TEST_CASE("moved vectors keep their storage") {
  Environment env(2);
  SegVector<float> a(env, 4, Natural{});
  std::vector<float> host = {1, 2, 3, 4};
  scatter<float>(host, a).wait();
  SegVector<float> b(std::move(a));
  SegVector<float> c(env, 6, Clone{});
  c = std::move(b);
  std::vector<float> out(4);
  gather<float>(c, out).wait();
  CHECK(out == host);
  CHECK(to_string(c.policy()) == "natural");
}
