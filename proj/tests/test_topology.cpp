#include "doctest.h"
#include "mgpu/error.hpp"
#include "mgpu/topology.hpp"

using namespace mgpu;

TEST_CASE("octo topology path kinds") {
  const auto t = Topology::octo_gpu();
  CHECK(t.device_count() == 8);
  CHECK(t.domain_count() == 4);
  CHECK(t.resolve_path(Endpoint::dev(0), Endpoint::dev(0)) == PathKind::OnDevice);
  CHECK(t.resolve_path(Endpoint::dev(0), Endpoint::dev(1)) == PathKind::PeerToPeer);
  CHECK(t.resolve_path(Endpoint::dev(0), Endpoint::dev(3)) == PathKind::PeerToPeer);
  CHECK(t.resolve_path(Endpoint::dev(0), Endpoint::dev(4)) == PathKind::HostStaged);
  CHECK(t.resolve_path(Endpoint::dev(7), Endpoint::dev(2)) == PathKind::HostStaged);
  CHECK(t.resolve_path(Endpoint::host(), Endpoint::dev(5)) == PathKind::HostToDevice);
  CHECK(t.resolve_path(Endpoint::dev(5), Endpoint::host()) == PathKind::DeviceToHost);
  CHECK_THROWS_AS(t.resolve_path(Endpoint::host(), Endpoint::host()), UsageError);
  CHECK_THROWS_AS(t.resolve_path(Endpoint::dev(8), Endpoint::host()), UsageError);
}

TEST_CASE("single hub topology never stages through the host") {
  const Topology t(4);
  for (int a = 0; a < 4; ++a) {
    for (int b = 0; b < 4; ++b) {
      CHECK(t.resolve_path(Endpoint::dev(a), Endpoint::dev(b)) != PathKind::HostStaged);
    }
  }
}

TEST_CASE("topology text format") {
  const auto t = Topology::parse("devices = 4\npcie_domains = 0,0,1,1\nioh = 0,1\nbandwidth.peer_to_peer = 5e9\n");
  CHECK(t.ioh_of_device(3) == 1);
  CHECK(!t.peer_accessible(1, 2));
  CHECK(t.nominal_bandwidth(PathKind::PeerToPeer) == 5e9);
  CHECK(!t.nominal_bandwidth(PathKind::HostStaged));
  const auto again = Topology::parse(t.to_text());
  CHECK(again.to_text() == t.to_text());

  CHECK_THROWS_AS(Topology::parse("devices = 3\npcie_domains = 0,1"), ConfigError);
  CHECK_THROWS_AS(Topology::parse("pcie_domains = 0,1\nioh = 0"), ConfigError);
  CHECK_THROWS_AS(Topology::parse("devices = 2\nwires = 3"), ConfigError);
  CHECK_THROWS_AS(Topology::parse("devices = 0"), ConfigError);
}

TEST_CASE("topology prefix keeps hub assignment") {
  const auto t = Topology::octo_gpu().prefix(6);
  CHECK(t.device_count() == 6);
  CHECK(t.ioh_of_device(5) == 1);
  CHECK_THROWS_AS(Topology::octo_gpu().prefix(9), ConfigError);
}

TEST_CASE("ledger accumulates and filters") {
  TransferLedger l;
  l.record(Endpoint::host(), Endpoint::dev(0), PathKind::HostToDevice, 100);
  l.record(Endpoint::host(), Endpoint::dev(0), PathKind::HostToDevice, 50);
  l.record(Endpoint::dev(0), Endpoint::dev(1), PathKind::PeerToPeer, 8);
  l.record(Endpoint::dev(1), Endpoint::host(), PathKind::DeviceToHost, 4);

  CHECK(l.query().bytes == 162);
  CHECK(l.query().count == 4);
  CHECK(l.query(PathKind::HostToDevice).bytes == 150);
  CHECK(l.query(PathKind::HostToDevice).count == 2);
  CHECK(l.query(LedgerFilter{std::nullopt, std::nullopt, std::nullopt, Endpoint::dev(1)}).bytes == 12);
  CHECK(l.query(LedgerFilter{std::nullopt, Endpoint::dev(0), std::nullopt, std::nullopt}).bytes == 8);
  CHECK(l.entries().size() == 3);
  l.reset();
  CHECK(l.query().bytes == 0);
}
