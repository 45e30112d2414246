#include "mgpu/topology.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <sstream>

#include "mgpu/error.hpp"
#include "mgpu/keyvalue.hpp"

namespace mgpu {

namespace {

constexpr std::array<std::string_view, kPathKindCount> kPathNames = {
    "on_device", "peer_to_peer", "host_staged", "host_to_device", "device_to_host"};

std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(v[i]);
  }
  return s;
}

}  // namespace

std::string to_string(Endpoint e) {
  return e.is_host() ? std::string("host") : "dev" + std::to_string(e.device);
}

std::string_view to_string(PathKind k) { return kPathNames[static_cast<std::size_t>(k)]; }

Topology::Topology(int device_count) {
  if (device_count < 1) throw ConfigError("topology needs at least one device");
  domain_of_.assign(static_cast<std::size_t>(device_count), 0);
  ioh_of_.assign(1, 0);
}

Topology::Topology(std::vector<int> pcie_domain_of, std::vector<int> ioh_of_domain)
    : domain_of_(std::move(pcie_domain_of)), ioh_of_(std::move(ioh_of_domain)) {
  if (domain_of_.empty()) throw ConfigError("topology needs at least one device");
  for (int d : domain_of_) {
    if (d < 0 || d >= static_cast<int>(ioh_of_.size())) {
      throw ConfigError("pcie domain id " + std::to_string(d) + " has no ioh entry");
    }
  }
  for (int h : ioh_of_) {
    if (h < 0) throw ConfigError("negative ioh id");
  }
}

Topology Topology::parse(std::string_view text) {
  std::optional<int> devices;
  std::optional<std::vector<int>> domains;
  std::optional<std::vector<int>> iohs;
  std::map<PathKind, double> bw;

  for (const auto& kv : parse_key_values(text)) {
    if (kv.key == "devices") {
      int n = 0;
      auto [p, ec] = std::from_chars(kv.value.data(), kv.value.data() + kv.value.size(), n);
      if (ec != std::errc{} || p != kv.value.data() + kv.value.size() || n < 1) {
        throw ConfigError("key 'devices': expected a positive integer");
      }
      devices = n;
    } else if (kv.key == "pcie_domains") {
      domains = parse_int_list(kv.value, kv.key);
    } else if (kv.key == "ioh") {
      iohs = parse_int_list(kv.value, kv.key);
    } else if (kv.key.starts_with("bandwidth.")) {
      const auto name = std::string_view(kv.key).substr(10);
      auto it = std::find(kPathNames.begin(), kPathNames.end(), name);
      if (it == kPathNames.end()) throw ConfigError("unknown key '" + kv.key + "'");
      try {
        bw[static_cast<PathKind>(it - kPathNames.begin())] = std::stod(kv.value);
      } catch (const std::exception&) {
        throw ConfigError("key '" + kv.key + "': expected a number");
      }
    } else {
      throw ConfigError("unknown key '" + kv.key + "'");
    }
  }

  if (!devices) {
    if (!domains) throw ConfigError("topology: missing key 'devices'");
    devices = static_cast<int>(domains->size());
  }
  if (!domains) domains = std::vector<int>(static_cast<std::size_t>(*devices), 0);
  if (static_cast<int>(domains->size()) != *devices) {
    throw ConfigError("key 'pcie_domains': expected " + std::to_string(*devices) + " entries");
  }
  const int domain_count = *std::max_element(domains->begin(), domains->end()) + 1;
  if (!iohs) iohs = std::vector<int>(static_cast<std::size_t>(domain_count), 0);
  if (static_cast<int>(iohs->size()) != domain_count) {
    throw ConfigError("key 'ioh': expected " + std::to_string(domain_count) + " entries");
  }

  Topology t(std::move(*domains), std::move(*iohs));
  t.bandwidth_ = std::move(bw);
  return t;
}

Topology Topology::load(const std::string& path) { return parse(read_text_file(path)); }

Topology Topology::octo_gpu() { return Topology({0, 0, 1, 1, 2, 2, 3, 3}, {0, 0, 1, 1}); }

void Topology::check_device(int device) const {
  if (device < 0 || device >= device_count()) {
    throw UsageError("unknown device " + std::to_string(device));
  }
}

int Topology::domain_of(int device) const {
  check_device(device);
  return domain_of_[static_cast<std::size_t>(device)];
}

int Topology::ioh_of_device(int device) const {
  return ioh_of_[static_cast<std::size_t>(domain_of(device))];
}

bool Topology::peer_accessible(int a, int b) const { return ioh_of_device(a) == ioh_of_device(b); }

PathKind Topology::resolve_path(Endpoint src, Endpoint dst) const {
  if (!src.is_host()) check_device(src.device);
  if (!dst.is_host()) check_device(dst.device);
  if (src.is_host() && dst.is_host()) throw UsageError("host to host is not a device transfer");
  if (src.is_host()) return PathKind::HostToDevice;
  if (dst.is_host()) return PathKind::DeviceToHost;
  if (src.device == dst.device) return PathKind::OnDevice;
  return peer_accessible(src.device, dst.device) ? PathKind::PeerToPeer : PathKind::HostStaged;
}

Topology Topology::prefix(int count) const {
  if (count < 1 || count > device_count()) {
    throw ConfigError("topology has " + std::to_string(device_count()) + " devices, requested " +
                      std::to_string(count));
  }
  Topology t(std::vector<int>(domain_of_.begin(), domain_of_.begin() + count), ioh_of_);
  t.bandwidth_ = bandwidth_;
  return t;
}

std::optional<double> Topology::nominal_bandwidth(PathKind k) const {
  if (auto it = bandwidth_.find(k); it != bandwidth_.end()) return it->second;
  return std::nullopt;
}

void Topology::set_nominal_bandwidth(PathKind k, double bytes_per_second) {
  bandwidth_[k] = bytes_per_second;
}

std::string Topology::to_text() const {
  std::ostringstream os;
  os << "devices = " << device_count() << '\n'
     << "pcie_domains = " << join(domain_of_) << '\n'
     << "ioh = " << join(ioh_of_) << '\n';
  for (const auto& [k, v] : bandwidth_) os << "bandwidth." << to_string(k) << " = " << v << '\n';
  return os.str();
}

void TransferLedger::record(Endpoint src, Endpoint dst, PathKind kind, std::uint64_t bytes) {
  std::lock_guard lock(mutex_);
  auto& t = totals_[Key{src, dst, kind}];
  t.bytes += bytes;
  t.count += 1;
}

LedgerTotals TransferLedger::query(const LedgerFilter& f) const {
  std::lock_guard lock(mutex_);
  LedgerTotals out;
  for (const auto& [key, t] : totals_) {
    const auto& [src, dst, kind] = key;
    if (f.kind && *f.kind != kind) continue;
    if (f.src && *f.src != src) continue;
    if (f.dst && *f.dst != dst) continue;
    if (f.involving && *f.involving != src && *f.involving != dst) continue;
    out.bytes += t.bytes;
    out.count += t.count;
  }
  return out;
}

std::vector<LedgerEntry> TransferLedger::entries() const {
  std::lock_guard lock(mutex_);
  std::vector<LedgerEntry> out;
  out.reserve(totals_.size());
  for (const auto& [key, t] : totals_) {
    const auto& [src, dst, kind] = key;
    out.push_back({src, dst, kind, t});
  }
  return out;
}

void TransferLedger::reset() {
  std::lock_guard lock(mutex_);
  totals_.clear();
}

}  // namespace mgpu
