#include "mgpu/config.hpp"

#include <charconv>
#include <cmath>
#include <functional>
#include <map>
#include <sstream>

#include "mgpu/error.hpp"
#include "mgpu/fft.hpp"
#include "mgpu/keyvalue.hpp"

namespace mgpu {

namespace {

[[noreturn]] void bad(std::string_view key, std::string_view what) {
  throw ConfigError("key '" + std::string(key) + "': " + std::string(what));
}

template <class T>
T parse_number(std::string_view key, std::string_view value) {
  T v{};
  auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (value.empty() || ec != std::errc{} || p != value.data() + value.size()) bad(key, "invalid number '" + std::string(value) + "'");
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(v)) bad(key, "must be finite");
  }
  return v;
}

using Setter = std::function<void(RunConfig&, std::string_view, std::string_view)>;
using Getter = std::function<std::string(const RunConfig&)>;

struct Field {
  Setter set;
  Getter get;
};

template <class T>
std::string show(const T& v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

std::string show_list(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

template <class T>
Field number(T RunConfig::*m) {
  return {[m](RunConfig& c, std::string_view k, std::string_view v) { c.*m = parse_number<T>(k, v); },
          [m](const RunConfig& c) { return show(c.*m); }};
}

Field text(std::string RunConfig::*m) {
  return {[m](RunConfig& c, std::string_view, std::string_view v) { c.*m = std::string(v); },
          [m](const RunConfig& c) { return c.*m; }};
}

Field list(std::vector<int> RunConfig::*m) {
  return {[m](RunConfig& c, std::string_view k, std::string_view v) {
            c.*m = v.empty() ? std::vector<int>{} : parse_int_list(v, k);
          },
          [m](const RunConfig& c) { return show_list(c.*m); }};
}

const std::map<std::string, Field, std::less<>>& fields() {
  static const std::map<std::string, Field, std::less<>> f = {
      {"devices", number(&RunConfig::devices)},
      {"topology", text(&RunConfig::topology)},
      {"n", number(&RunConfig::n)},
      {"channels", number(&RunConfig::channels)},
      {"compressed_channels", number(&RunConfig::compressed_channels)},
      {"mask_density", number(&RunConfig::mask_density)},
      {"center_band", number(&RunConfig::center_band)},
      {"noise_sigma", number(&RunConfig::noise_sigma)},
      {"weight_a", number(&RunConfig::weight_a)},
      {"weight_b", number(&RunConfig::weight_b)},
      {"alpha0", number(&RunConfig::alpha0)},
      {"q", number(&RunConfig::q)},
      {"newton_steps", number(&RunConfig::newton_steps)},
      {"cg_iters", number(&RunConfig::cg_iters)},
      {"cg_tol", number(&RunConfig::cg_tol)},
      {"seed", number(&RunConfig::seed)},
      {"out", text(&RunConfig::out)},
      {"data_dir", text(&RunConfig::data_dir)},
      {"frames", number(&RunConfig::frames)},
      {"motion_dx", number(&RunConfig::motion_dx)},
      {"motion_dy", number(&RunConfig::motion_dy)},
      {"motion_dilation", number(&RunConfig::motion_dilation)},
      {"invariance_devices", list(&RunConfig::invariance_devices)},
      {"invariance_tol", number(&RunConfig::invariance_tol)},
      {"bench_matrices", number(&RunConfig::bench_matrices)},
      {"bench_matrix_size", number(&RunConfig::bench_matrix_size)},
      {"bench_sizes", list(&RunConfig::bench_sizes)},
      {"bench_gemm_max_size", number(&RunConfig::bench_gemm_max_size)},
      {"bench_max_devices", number(&RunConfig::bench_max_devices)},
  };
  return f;
}

}  // namespace

void RunConfig::set(std::string_view key, std::string_view value) {
  const auto it = fields().find(key);
  if (it == fields().end()) throw ConfigError("unknown key '" + std::string(key) + "'");
  it->second.set(*this, key, value);
}

void RunConfig::validate() const {
  if (devices < 1) bad("devices", "must be at least 1");
  if (n < 4 || !is_pow2(n)) bad("n", "must be a power of two >= 4");
  if (channels < 1) bad("channels", "must be at least 1");
  if (compressed_channels > channels) bad("compressed_channels", "must not exceed channels");
  const auto recon_channels = compressed_channels ? compressed_channels : channels;
  if (recon_channels < static_cast<std::size_t>(devices)) {
    bad(compressed_channels ? "compressed_channels" : "channels", "must be at least the number of devices");
  }
  if (!(mask_density > 0.0 && mask_density <= 1.0)) bad("mask_density", "must lie in (0, 1]");
  if (center_band < 1 || center_band > 2 * n) bad("center_band", "must lie in [1, 2n]");
  if (noise_sigma < 0.0) bad("noise_sigma", "must be non-negative");
  if (weight_a <= 0.0) bad("weight_a", "must be positive");
  if (weight_b < 0.0) bad("weight_b", "must be non-negative");
  if (alpha0 <= 0.0) bad("alpha0", "must be positive");
  if (!(q > 0.0 && q < 1.0)) bad("q", "must lie in (0, 1)");
  if (newton_steps < 1) bad("newton_steps", "must be at least 1");
  if (cg_iters < 1) bad("cg_iters", "must be at least 1");
  if (!(cg_tol > 0.0 && cg_tol < 1.0)) bad("cg_tol", "must lie in (0, 1)");
  if (out.empty()) bad("out", "must not be empty");
  if (frames < 1) bad("frames", "must be at least 1");
  for (int g : invariance_devices) {
    if (g < 1 || static_cast<std::size_t>(g) > recon_channels) bad("invariance_devices", "entries must lie in [1, channels]");
  }
  if (!(invariance_tol > 0.0)) bad("invariance_tol", "must be positive");
  if (bench_matrices < 1) bad("bench_matrices", "must be at least 1");
  if (bench_matrix_size < 1) bad("bench_matrix_size", "must be positive");
  if (bench_sizes.empty()) bad("bench_sizes", "must not be empty");
  for (int s : bench_sizes) {
    if (s < 1 || !is_pow2(static_cast<std::size_t>(s))) bad("bench_sizes", "entries must be powers of two");
  }
  if (bench_max_devices < 1) bad("bench_max_devices", "must be at least 1");
}

RunConfig RunConfig::parse(std::string_view text) {
  RunConfig c;
  for (const auto& kv : parse_key_values(text)) c.set(kv.key, kv.value);
  return c;
}

RunConfig RunConfig::load(const std::string& path) { return parse(read_text_file(path)); }

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& [name, _] : fields()) out.push_back(name);
    return out;
  }();
  return k;
}

std::string RunConfig::to_text() const {
  std::string s;
  for (const auto& [name, f] : fields()) s += name + " = " + f.get(*this) + "\n";
  return s;
}

}  // namespace mgpu
