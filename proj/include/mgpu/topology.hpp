#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

namespace mgpu {

/// A transfer endpoint: host memory or one device (by physical device id).
struct Endpoint {
  int device = -1;  // -1 is host

  static constexpr Endpoint host() { return Endpoint{-1}; }
  static constexpr Endpoint dev(int id) { return Endpoint{id}; }
  constexpr bool is_host() const { return device < 0; }

  friend constexpr auto operator<=>(const Endpoint&, const Endpoint&) = default;
};

std::string to_string(Endpoint e);

enum class PathKind : std::uint8_t {
  OnDevice,
  PeerToPeer,
  HostStaged,
  HostToDevice,
  DeviceToHost,
};

inline constexpr std::size_t kPathKindCount = 5;

std::string_view to_string(PathKind k);

/// Interconnect of one simulated node. Devices live in PCIe domains, domains
/// hang off I/O hubs. Peer-to-peer access only works below a common IOH.
class Topology {
 public:
  /// All devices in one domain under one IOH.
  explicit Topology(int device_count = 1);
  Topology(std::vector<int> pcie_domain_of, std::vector<int> ioh_of_domain);

  /// Parses the flat `key = value` topology format.
  static Topology parse(std::string_view text);
  static Topology load(const std::string& path);
  /// 2 IOHs x 2 PCIe domains x 2 devices.
  static Topology octo_gpu();

  int device_count() const { return static_cast<int>(domain_of_.size()); }
  int domain_count() const { return static_cast<int>(ioh_of_.size()); }
  int domain_of(int device) const;
  int ioh_of_device(int device) const;
  bool peer_accessible(int a, int b) const;

  PathKind resolve_path(Endpoint src, Endpoint dst) const;

  /// Restriction to the first `count` devices, keeping domain/IOH ids.
  Topology prefix(int count) const;

  /// Nominal bytes/second per path kind, reporting only.
  std::optional<double> nominal_bandwidth(PathKind k) const;
  void set_nominal_bandwidth(PathKind k, double bytes_per_second);

  std::string to_text() const;

 private:
  void check_device(int device) const;

  std::vector<int> domain_of_;
  std::vector<int> ioh_of_;
  std::map<PathKind, double> bandwidth_;
};

struct LedgerTotals {
  std::uint64_t bytes = 0;
  std::uint64_t count = 0;
};

struct LedgerFilter {
  std::optional<PathKind> kind;
  std::optional<Endpoint> src;
  std::optional<Endpoint> dst;
  std::optional<Endpoint> involving;  // src or dst
};

struct LedgerEntry {
  Endpoint src;
  Endpoint dst;
  PathKind kind;
  LedgerTotals totals;
};

/// Cumulative byte accounting per (src, dst, path kind). Thread safe.
class TransferLedger {
 public:
  void record(Endpoint src, Endpoint dst, PathKind kind, std::uint64_t bytes);
  LedgerTotals query(const LedgerFilter& filter = {}) const;
  LedgerTotals query(PathKind kind) const { return query(LedgerFilter{kind, {}, {}, {}}); }
  std::vector<LedgerEntry> entries() const;
  void reset();

 private:
  using Key = std::tuple<Endpoint, Endpoint, PathKind>;
  mutable std::mutex mutex_;
  std::map<Key, LedgerTotals> totals_;
};

}  // namespace mgpu
