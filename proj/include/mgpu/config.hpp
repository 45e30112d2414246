#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace mgpu {

/// Flat run configuration shared by all CLI commands. Every key is optional
/// and has a default; unknown keys and invalid values throw ConfigError
/// naming the key.
struct RunConfig {
  int devices = 4;
  std::string topology;         // topology file, empty = single IOH
  std::size_t n = 64;           // base grid, power of two
  std::size_t channels = 8;     // simulated coils J
  std::size_t compressed_channels = 0;  // J' after PCA, 0 = no compression
  double mask_density = 0.25;
  std::size_t center_band = 16;
  double noise_sigma = 0.0;
  double weight_a = 220.0;
  double weight_b = 32.0;
  double alpha0 = 1.0;
  double q = 1.0 / 3.0;
  int newton_steps = 6;
  int cg_iters = 30;
  double cg_tol = 1e-2;
  std::uint64_t seed = 1;
  std::string out = "out";
  std::string data_dir;         // recon input written by `phantom`, empty = simulate
  int frames = 1;
  double motion_dx = 0.0;
  double motion_dy = 0.0;
  double motion_dilation = 0.0;
  std::vector<int> invariance_devices;  // recon reruns with these device counts
  double invariance_tol = 1e-4;
  std::size_t bench_matrices = 12;
  std::size_t bench_matrix_size = 256;
  std::vector<int> bench_sizes = {64, 128, 256, 512};
  std::size_t bench_gemm_max_size = 256;  // larger sizes skip gemm
  int bench_max_devices = 4;

  /// Sets one key from its textual value.
  void set(std::string_view key, std::string_view value);
  /// Cross-key checks; throws ConfigError naming the offending key.
  void validate() const;

  static RunConfig parse(std::string_view text);
  static RunConfig load(const std::string& path);
  static const std::vector<std::string>& keys();
  /// Canonical `key = value` listing of every key.
  std::string to_text() const;
};

}  // namespace mgpu
