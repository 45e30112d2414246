#include "app.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

#include "mgpu/array_io.hpp"
#include "mgpu/comm.hpp"
#include "mgpu/error.hpp"
#include "mgpu/numerics.hpp"

namespace fs = std::filesystem;

namespace mgpu::app {

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string frame_file(const std::string& dir, const char* stem, int frame) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%03d.segv", stem, frame);
  return (fs::path(dir) / buf).string();
}

class Csv {
 public:
  explicit Csv(std::vector<std::string> header) : header_(std::move(header)) {}

  void row(std::vector<std::string> cells) {
    if (cells.size() != header_.size()) throw std::logic_error("csv row width mismatch");
    rows_.push_back(std::move(cells));
  }

  void write(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + path);
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
      out << '\n';
    };
    line(header_);
    for (const auto& r : rows_) line(r);
  }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(std::move(cells));
  }
  return rows;
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("key 'out': cannot create directory " + dir);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (std::uint64_t{out[0]} << 32) | out[1];
}

std::vector<cfloat> random_complex(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<cfloat> v(n);
  for (auto& x : v) x = {u(rng), u(rng)};
  return v;
}

std::string endpoint_name(Endpoint e) { return e.is_host() ? "host" : std::to_string(e.device); }

void dump_ledger(Csv& csv, const std::string& scenario, int devices, const TransferLedger& ledger) {
  for (const auto& e : ledger.entries()) {
    csv.row({scenario, std::to_string(devices), endpoint_name(e.src), endpoint_name(e.dst),
             std::string(to_string(e.kind)), std::to_string(e.totals.bytes), std::to_string(e.totals.count)});
  }
}

std::vector<float> magnitude(const std::vector<cfloat>& v) {
  std::vector<float> m(v.size());
  std::transform(v.begin(), v.end(), m.begin(), [](cfloat c) { return std::abs(c); });
  return m;
}

double relative_l2(const std::vector<cfloat>& a, const std::vector<cfloat>& b) {
  double num2 = 0.0, den2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num2 += std::norm(std::complex<double>(a[i]) - std::complex<double>(b[i]));
    den2 += std::norm(std::complex<double>(b[i]));
  }
  return den2 > 0.0 ? std::sqrt(num2 / den2) : std::sqrt(num2);
}

phantom::PhantomSpec phantom_spec(const RunConfig& cfg) {
  auto spec = phantom::PhantomSpec::shepp_logan(cfg.n);
  spec.motion = {cfg.motion_dx, cfg.motion_dy, cfg.motion_dilation};
  return spec;
}

}  // namespace

bool CheckLog::all_passed() const {
  return std::all_of(checks_.begin(), checks_.end(), [](const Check& c) { return c.pass; });
}

void CheckLog::write_csv(const std::string& path) const {
  Csv csv({"command", "check", "devices", "expected", "observed", "pass"});
  for (const auto& c : checks_) {
    csv.row({c.command, c.name, std::to_string(c.devices), c.expected, c.observed, c.pass ? "1" : "0"});
  }
  csv.write(path);
}

Topology resolve_topology(const RunConfig& cfg) {
  Topology topo = cfg.topology.empty() ? Topology(cfg.devices) : Topology::load(cfg.topology);
  if (topo.device_count() < cfg.devices) {
    throw ConfigError("key 'topology': describes " + std::to_string(topo.device_count()) + " devices, 'devices' is " +
                      std::to_string(cfg.devices));
  }
  return topo;
}

Scenario simulate(const RunConfig& cfg) {
  Scenario s;
  s.grid = nlinv::ReconGrid{cfg.n};
  s.channels = cfg.channels;
  phantom::CoilSpec coil_spec;
  coil_spec.channels = cfg.channels;
  coil_spec.seed = derive_seed(cfg.seed, 1, 0);
  s.coils = phantom::make_coils(coil_spec, s.grid);
  const auto spec = phantom_spec(cfg);
  for (int t = 0; t < cfg.frames; ++t) {
    auto image = phantom::make_phantom(spec, t);
    auto mask = phantom::make_mask(s.grid.ng(), cfg.mask_density, cfg.center_band, derive_seed(cfg.seed, 2, t));
    auto y = phantom::simulate_acquisition(image, s.coils, mask, s.grid, s.channels, cfg.noise_sigma,
                                           derive_seed(cfg.seed, 3, t));
    s.images.push_back(std::move(image));
    s.frames.push_back({std::move(y), std::move(mask)});
  }
  return s;
}

void save_scenario(const Scenario& s, const std::string& dir) {
  ensure_dir(dir);
  const auto n = static_cast<std::uint32_t>(s.grid.n);
  const auto ng = static_cast<std::uint32_t>(s.grid.ng());
  const auto j = static_cast<std::uint32_t>(s.channels);
  io::write_array((fs::path(dir) / "coils.segv").string(), s.coils, {j, ng, ng});
  for (std::size_t t = 0; t < s.frames.size(); ++t) {
    const int f = static_cast<int>(t);
    io::write_array(frame_file(dir, "truth", f), s.images[t], {n, n});
    io::write_array(frame_file(dir, "mask", f), s.frames[t].mask, {ng, ng});
    io::write_array(frame_file(dir, "kspace", f), s.frames[t].y, {j, ng, ng});
  }
}

Scenario load_scenario(const RunConfig& cfg) {
  const auto& dir = cfg.data_dir;
  Scenario s;
  s.grid = nlinv::ReconGrid{cfg.n};
  const auto ng = static_cast<std::uint32_t>(s.grid.ng());
  for (int t = 0;; ++t) {
    const auto kpath = frame_file(dir, "kspace", t);
    if (!fs::exists(kpath)) {
      if (t == 0) throw ConfigError("key 'data_dir': no kspace_000.segv in " + dir);
      break;
    }
    io::ArrayInfo info;
    auto y = io::read_complex(kpath, &info);
    if (info.dims.size() != 3 || info.dims[1] != ng || info.dims[2] != ng) {
      throw ConfigError("key 'n': " + kpath + " is not channels x " + std::to_string(ng) + " x " + std::to_string(ng));
    }
    if (t == 0) s.channels = info.dims[0];
    if (info.dims[0] != s.channels) throw ConfigError("key 'data_dir': channel count changes between frames");
    auto mask = io::read_real(frame_file(dir, "mask", t), &info);
    if (info.element_count() != std::size_t{ng} * ng) throw ConfigError("key 'data_dir': mask size mismatch");
    s.frames.push_back({std::move(y), std::move(mask)});
    const auto tpath = frame_file(dir, "truth", t);
    if (fs::exists(tpath)) s.images.push_back(io::read_real(tpath));
  }
  if (s.channels != cfg.channels) {
    throw ConfigError("key 'channels': config says " + std::to_string(cfg.channels) + ", data has " +
                      std::to_string(s.channels));
  }
  const auto cpath = (fs::path(dir) / "coils.segv").string();
  if (fs::exists(cpath)) s.coils = io::read_complex(cpath);
  if (s.coils.size() != s.channels * s.grid.pixels() || s.images.size() != s.frames.size()) {
    s.coils.clear();
    s.images.clear();
  }
  return s;
}

double relative_error(const std::vector<float>& mag, const std::vector<float>& truth, const std::vector<cfloat>& coils,
                      const nlinv::ReconGrid& grid, std::size_t channels) {
  const auto rss = grid.crop(phantom::coil_rss(coils, channels));
  double e = 0.0, r = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double ref = std::abs(double(truth[i])) * rss[i];
    e += (mag[i] - ref) * (mag[i] - ref);
    r += ref * ref;
  }
  return std::sqrt(e / r);
}

nlinv::ReconProblem base_problem(const RunConfig& cfg, const nlinv::ReconGrid& grid, std::size_t channels) {
  nlinv::ReconProblem p;
  p.grid = grid;
  p.channels = channels;
  p.weights = {cfg.weight_a, cfg.weight_b};
  p.reg = {cfg.alpha0, cfg.q, cfg.newton_steps};
  p.cg = {cfg.cg_iters, cfg.cg_tol};
  return p;
}

double compress_frames(std::vector<nlinv::Frame>& frames, std::size_t channels, std::size_t keep) {
  const auto first = nlinv::compress_channels(frames.front().y, channels, keep);
  const std::size_t samples = frames.front().y.size() / channels;
  for (auto& f : frames) {
    std::vector<std::complex<double>> acc(keep * samples);
    for (std::size_t j = 0; j < channels; ++j) {
      for (std::size_t k = 0; k < keep; ++k) {
        const auto b = std::conj(std::complex<double>(first.basis[j * keep + k]));
        for (std::size_t s = 0; s < samples; ++s) acc[k * samples + s] += b * std::complex<double>(f.y[j * samples + s]);
      }
    }
    f.y.assign(keep * samples, {});
    std::transform(acc.begin(), acc.end(), f.y.begin(), [](std::complex<double> v) { return cfloat(v); });
  }
  return first.energy_fraction;
}

int cmd_bench_transfer(const RunConfig& cfg, std::ostream& log) {
  const auto topo = resolve_topology(cfg);
  ensure_dir(cfg.out);
  CheckLog checks;
  Csv ledger_csv({"scenario", "devices", "src", "dst", "kind", "bytes", "transfers"});
  Csv timing({"scenario", "devices", "seconds"});

  const std::size_t mlen = cfg.bench_matrix_size * cfg.bench_matrix_size;
  const std::uint64_t mbytes = mlen * sizeof(cfloat);
  const std::size_t m = cfg.bench_matrices;
  const auto base = random_complex(mlen, derive_seed(cfg.seed, 10, 0));

  for (int g = 1; g <= cfg.devices; ++g) {
    Environment env(cfg.devices, DevGroup::from_to(0, g), topo);
    auto& ledger = env.ledger();
    auto check = [&](std::string name, std::string expected, std::string observed, bool pass) {
      checks.add({"bench-transfer", std::move(name), g, std::move(expected), std::move(observed), pass});
    };
    auto h2d_of = [&](int rank) {
      return ledger.query(LedgerFilter{PathKind::HostToDevice, std::nullopt, env.endpoint(rank), std::nullopt}).bytes;
    };

    // Strong copy: a fixed set of matrices spread over g devices.
    {
      std::vector<cfloat> host(m * mlen);
      for (std::size_t i = 0; i < m; ++i) std::copy(base.begin(), base.end(), host.begin() + i * mlen);
      SegVector<cfloat> v(env, host.size(), Blockwise{mlen});
      ledger.reset();
      Stopwatch sw;
      scatter(std::span<const cfloat>(host), v).wait();
      timing.row({"strong_copy", std::to_string(g), num(sw.seconds())});
      dump_ledger(ledger_csv, "strong_copy", g, ledger);
      const double share = double(m * mbytes) / g;
      bool ok = true;
      std::uint64_t lo = UINT64_MAX, hi = 0;
      for (int r = 0; r < g; ++r) {
        const auto b = h2d_of(r);
        lo = std::min(lo, b);
        hi = std::max(hi, b);
        ok = ok && std::abs(double(b) - share) <= double(mbytes);
      }
      check("strong_copy_per_device_bytes", num(share) + " +- " + std::to_string(mbytes),
            std::to_string(lo) + ".." + std::to_string(hi), ok);
      const auto total = ledger.query(PathKind::HostToDevice).bytes;
      check("strong_copy_total_bytes", std::to_string(m * mbytes), std::to_string(total), total == m * mbytes);
    }

    // Weak copy: the same number of matrices per device.
    {
      std::vector<cfloat> host(m * g * mlen);
      for (std::size_t i = 0; i < m * g; ++i) std::copy(base.begin(), base.end(), host.begin() + i * mlen);
      SegVector<cfloat> v(env, host.size(), Blockwise{mlen});
      ledger.reset();
      Stopwatch sw;
      scatter(std::span<const cfloat>(host), v).wait();
      timing.row({"weak_copy", std::to_string(g), num(sw.seconds())});
      dump_ledger(ledger_csv, "weak_copy", g, ledger);
      bool ok = true;
      for (int r = 0; r < g; ++r) ok = ok && h2d_of(r) == m * mbytes;
      check("weak_copy_per_device_bytes", std::to_string(m * mbytes), ok ? std::to_string(m * mbytes) : "varies", ok);
    }

    // Broadcast one matrix to a clone.
    SegVector<cfloat> clone(env, mlen, Clone{});
    {
      ledger.reset();
      Stopwatch sw;
      broadcast(std::span<const cfloat>(base), clone).wait();
      timing.row({"broadcast", std::to_string(g), num(sw.seconds())});
      dump_ledger(ledger_csv, "broadcast", g, ledger);
      const auto total = ledger.query(PathKind::HostToDevice).bytes;
      check("broadcast_host_to_device_bytes", std::to_string(g * mbytes), std::to_string(total), total == g * mbytes);
    }

    // Reduce the clone back to the host.
    {
      std::vector<cfloat> host(mlen);
      ReduceStats stats;
      ledger.reset();
      Stopwatch sw;
      reduce(clone, std::span<cfloat>(host), ReduceOp::Sum, &stats).wait();
      timing.row({"reduce", std::to_string(g), num(sw.seconds())});
      dump_ledger(ledger_csv, "reduce", g, ledger);

      std::set<int> iohs;
      for (int r = 0; r < g; ++r) iohs.insert(topo.ioh_of_device(env.device_id(r)));
      const auto partials = ledger.query(PathKind::DeviceToHost).count;
      check("reduce_device_to_host_partials", std::to_string(iohs.size()), std::to_string(partials),
            partials == iohs.size());
      std::uint64_t cross = 0;
      for (const auto& e : ledger.entries()) {
        if (e.kind == PathKind::PeerToPeer && topo.ioh_of_device(e.src.device) != topo.ioh_of_device(e.dst.device)) {
          cross += e.totals.bytes;
        }
      }
      check("reduce_cross_ioh_peer_bytes", "0", std::to_string(cross), cross == 0);
      if (iohs.size() == 1) {
        const auto staged = ledger.query(PathKind::HostStaged).bytes;
        check("reduce_host_staged_bytes", "0", std::to_string(staged), staged == 0);
      }
      double err = 0.0, ref = 0.0;
      for (std::size_t i = 0; i < mlen; ++i) {
        const auto want = std::complex<double>(base[i]) * double(g);
        err = std::max(err, std::abs(std::complex<double>(host[i]) - want));
        ref = std::max(ref, std::abs(want));
      }
      check("reduce_of_broadcast_is_g_times_x", "<= 1e-6", num(err / ref), err <= 1e-6 * ref);
    }
    log << "bench-transfer: " << g << " device(s) done\n";
  }

  ledger_csv.write((fs::path(cfg.out) / "bench_transfer.csv").string());
  timing.write((fs::path(cfg.out) / "bench_transfer_timing.csv").string());
  checks.write_csv((fs::path(cfg.out) / "bench_transfer_checks.csv").string());
  return checks.all_passed() ? Ok : InvariantFailed;
}

int cmd_bench_algos(const RunConfig& cfg, std::ostream& log) {
  const auto topo = resolve_topology(cfg);
  ensure_dir(cfg.out);
  CheckLog checks;
  Csv work({"op", "size", "devices", "rank", "elements", "bytes_moved"});
  Csv timing({"op", "size", "devices", "seconds"});
  const std::size_t m = cfg.bench_matrices;
  const int max_g = std::min(cfg.devices, cfg.bench_max_devices);

  for (int size_i : cfg.bench_sizes) {
    const auto size = static_cast<std::size_t>(size_i);
    const std::size_t mlen = size * size;
    const auto host = random_complex(m * mlen, derive_seed(cfg.seed, 20, size));
    for (int g = 1; g <= max_g; ++g) {
      Environment env(cfg.devices, DevGroup::from_to(0, g), topo);
      auto& ledger = env.ledger();
      SegVector<cfloat> a(env, m * mlen, Blockwise{mlen});
      SegVector<cfloat> b(env, m * mlen, Blockwise{mlen});
      scatter(std::span<const cfloat>(host), a).wait();

      auto run = [&](const std::string& op, auto&& body, auto&& elements_of, std::uint64_t expected_bytes) {
        ledger.reset();
        Stopwatch sw;
        body();
        env.barrier_fence();
        timing.row({op, std::to_string(size), std::to_string(g), num(sw.seconds())});
        std::size_t lo = SIZE_MAX, hi = 0;
        for (int r = 0; r < g; ++r) {
          const std::size_t elems = a.has_segment(r) ? elements_of(a.segment(r).len) : 0;
          lo = std::min(lo, elems);
          hi = std::max(hi, elems);
          const auto moved = ledger.query(LedgerFilter{std::nullopt, std::nullopt, std::nullopt, env.endpoint(r)}).bytes;
          work.row({op, std::to_string(size), std::to_string(g), std::to_string(r), std::to_string(elems),
                    std::to_string(moved)});
        }
        const auto moved = ledger.query().bytes;
        checks.add({"bench-algos", op + "_" + std::to_string(size) + "_bytes_moved", g, std::to_string(expected_bytes),
                    std::to_string(moved), moved == expected_bytes});
        const std::size_t one = elements_of(mlen);
        checks.add({"bench-algos", op + "_" + std::to_string(size) + "_balance", g, "<= " + std::to_string(one),
                    std::to_string(hi - lo), hi - lo <= one});
      };

      BatchedFftPlan plan(env, size, size, m);
      run("fft", [&] { plan.forward(a, b); }, [](std::size_t len) { return len; }, 0);
      run("axpy", [&] { axpy(cfloat(2.0f, 0.0f), a, b); }, [](std::size_t len) { return len; }, 0);
      if (size <= cfg.bench_gemm_max_size) {
        SegVector<cfloat> bm(env, mlen, Clone{});
        SegVector<cfloat> c(env, m * mlen, Blockwise{mlen});
        const std::span<const cfloat> first(host.data(), mlen);
        run(
            "gemm",
            [&] {
              broadcast(first, bm);
              gemm(m * size, size, size, a, bm, c);
            },
            [size](std::size_t len) { return len * size; }, std::uint64_t(g) * mlen * sizeof(cfloat));
      }
      log << "bench-algos: size " << size << ", " << g << " device(s) done\n";
    }
  }

  work.write((fs::path(cfg.out) / "bench_algos.csv").string());
  timing.write((fs::path(cfg.out) / "bench_algos_timing.csv").string());
  checks.write_csv((fs::path(cfg.out) / "bench_algos_checks.csv").string());
  return checks.all_passed() ? Ok : InvariantFailed;
}

int cmd_phantom(const RunConfig& cfg, std::ostream& log) {
  const auto topo = resolve_topology(cfg);
  Stopwatch sw;
  const auto s = simulate(cfg);
  save_scenario(s, cfg.out);
  CheckLog checks;

  const auto ng = s.grid.ng();
  const auto expect_cols = std::max<std::size_t>(std::lround(cfg.mask_density * double(ng)), cfg.center_band);
  for (std::size_t t = 0; t < s.frames.size(); ++t) {
    const auto frac = phantom::column_fraction(s.frames[t].mask, ng);
    checks.add({"phantom", "mask_column_fraction_frame_" + std::to_string(t), 0,
                num(double(std::min(expect_cols, ng)) / double(ng)), num(frac),
                std::abs(frac - double(std::min(expect_cols, ng)) / double(ng)) < 1e-12});
  }
  const auto rss = s.grid.crop(phantom::coil_rss(s.coils, s.channels));
  const float min_rss = *std::min_element(rss.begin(), rss.end());
  checks.add({"phantom", "coil_rss_positive", 0, "> 0", num(min_rss), min_rss > 0.0f});

  if (cfg.noise_sigma == 0.0 && s.channels >= static_cast<std::size_t>(cfg.devices)) {
    // The simulator and the reconstruction operator must agree at the truth.
    Environment env(cfg.devices, std::nullopt, topo);
    const nlinv::WeightParams weights{cfg.weight_a, cfg.weight_b};
    nlinv::NlinvOperator op(env, s.grid, s.channels, s.frames[0].mask, weights);
    nlinv::HostUnknowns truth;
    const auto embedded = s.grid.embed(s.images[0]);
    truth.rho.assign(embedded.begin(), embedded.end());
    truth.chat = phantom::to_weighted_domain(s.coils, s.grid, s.channels, weights);
    auto x = op.make_unknowns();
    op.upload(truth, x);
    auto fx = op.make_data();
    op.forward(x, fx);
    const double diff = relative_l2(op.download_data(fx), s.frames[0].y);
    checks.add({"phantom", "forward_model_matches_simulation", cfg.devices, "<= 1e-5", num(diff), diff <= 1e-5});
  }

  Csv timing({"command", "seconds"});
  timing.row({"phantom", num(sw.seconds())});
  timing.write((fs::path(cfg.out) / "phantom_timing.csv").string());
  checks.write_csv((fs::path(cfg.out) / "phantom_checks.csv").string());
  log << "phantom: wrote " << s.frames.size() << " frame(s) to " << cfg.out << "\n";
  return checks.all_passed() ? Ok : InvariantFailed;
}

int cmd_recon(const RunConfig& cfg, std::ostream& log) {
  const auto topo = resolve_topology(cfg);
  for (int g : cfg.invariance_devices) {
    if (g > topo.device_count()) throw ConfigError("key 'invariance_devices': topology has only " +
                                                   std::to_string(topo.device_count()) + " devices");
  }
  auto scenario = cfg.data_dir.empty() ? simulate(cfg) : load_scenario(cfg);
  ensure_dir(cfg.out);
  CheckLog checks;

  auto frames = scenario.frames;
  std::size_t channels = scenario.channels;
  double energy = 1.0;
  if (cfg.compressed_channels != 0) {
    energy = compress_frames(frames, channels, cfg.compressed_channels);
    channels = cfg.compressed_channels;
  }
  const auto problem = base_problem(cfg, scenario.grid, channels);

  Environment env(cfg.devices, std::nullopt, topo);
  Stopwatch sw;
  const auto results = nlinv::reconstruct_series(env, problem, frames);
  const double seconds = sw.seconds();
  log << "recon: " << results.size() << " frame(s) on " << cfg.devices << " device(s)\n";

  const auto n = static_cast<std::uint32_t>(scenario.grid.n);
  Csv residuals({"frame", "step", "alpha", "residual", "cg_iterations", "cg_residual", "cg_breakdown"});
  Csv metrics({"frame", "devices", "channels", "energy_fraction", "nlinv_error", "zero_filled_error",
               "final_residual", "data_scale"});
  for (std::size_t t = 0; t < results.size(); ++t) {
    const auto& r = results[t];
    const int f = static_cast<int>(t);
    io::write_array(frame_file(cfg.out, "recon", f), r.image, {n, n});
    for (const auto& s : r.steps) {
      residuals.row({std::to_string(t), std::to_string(s.step), num(s.alpha), num(s.residual),
                     std::to_string(s.cg.iterations), num(s.cg.residual), s.cg.breakdown ? "1" : "0"});
    }
    residuals.row({std::to_string(t), std::to_string(r.steps.size()), "", num(r.residuals.back()), "0", "", "0"});

    bool monotone = true;
    for (std::size_t i = 1; i < r.residuals.size(); ++i) monotone = monotone && r.residuals[i] <= r.residuals[i - 1];
    checks.add({"recon", "residual_non_increasing_frame_" + std::to_string(t), cfg.devices, "1",
                monotone ? "1" : "0", monotone});

    std::string e_nlinv, e_zf;
    if (!scenario.images.empty()) {
      auto p = problem;
      p.y = frames[t].y;
      p.mask = frames[t].mask;
      const double en = relative_error(magnitude(r.image), scenario.images[t], scenario.coils, scenario.grid,
                                       scenario.channels);
      const double ez = relative_error(nlinv::zero_filled_rss(p), scenario.images[t], scenario.coils, scenario.grid,
                                       scenario.channels);
      e_nlinv = num(en);
      e_zf = num(ez);
      checks.add({"recon", "nlinv_beats_zero_filled_frame_" + std::to_string(t), cfg.devices, "< " + e_zf, e_nlinv,
                  en < ez});
    }
    metrics.row({std::to_string(t), std::to_string(cfg.devices), std::to_string(channels), num(energy), e_nlinv,
                 e_zf, num(r.residuals.back()), num(r.data_scale)});
  }

  // Per-application operator work at the final estimate.
  {
    const auto& last = results.back();
    nlinv::NlinvOperator op(env, scenario.grid, channels, frames.back().mask, problem.weights);
    auto x = op.make_unknowns();
    op.upload(last.x, x);
    auto y = op.make_data();
    auto dx = op.make_unknowns();
    op.upload(last.x, dx);
    Csv counters({"operator", "fft", "elementwise", "channel_sum", "dot", "allreduce", "expected_fft", "pass"});
    auto row = [&](const std::string& name, const nlinv::OpCounters& c, std::size_t fft, bool extra_ok) {
      const bool pass = c.fft == fft && extra_ok;
      counters.row({name, std::to_string(c.fft), std::to_string(c.elementwise), std::to_string(c.channel_sum),
                    std::to_string(c.dot), std::to_string(c.allreduce), std::to_string(fft), pass ? "1" : "0"});
      checks.add({"recon", "counters_" + name, cfg.devices, "fft=" + std::to_string(fft),
                  "fft=" + std::to_string(c.fft) + " channel_sum=" + std::to_string(c.channel_sum) +
                      " allreduce=" + std::to_string(c.allreduce),
                  pass});
    };
    row("F", op.forward(x, y), 2, true);
    row("DF", op.derivative(dx, y), 2, true);
    const auto adj = op.adjoint(y, dx);
    row("DFH", adj, 2, adj.channel_sum == 1 && adj.allreduce == 1);
    counters.write((fs::path(cfg.out) / "counters.csv").string());
  }

  Csv invariance({"frame", "devices", "reference_devices", "relative_l2", "tolerance", "pass"});
  for (int g : cfg.invariance_devices) {
    Environment other(topo.device_count(), DevGroup::from_to(0, g), topo);
    const auto rerun = nlinv::reconstruct_series(other, problem, frames);
    for (std::size_t t = 0; t < rerun.size(); ++t) {
      const double d = relative_l2(rerun[t].image, results[t].image);
      const bool pass = d <= cfg.invariance_tol;
      invariance.row({std::to_string(t), std::to_string(g), std::to_string(cfg.devices), num(d),
                      num(cfg.invariance_tol), pass ? "1" : "0"});
      checks.add({"recon", "device_count_invariance_frame_" + std::to_string(t), g,
                  "<= " + num(cfg.invariance_tol), num(d), pass});
    }
    log << "recon: invariance rerun on " << g << " device(s) done\n";
  }

  residuals.write((fs::path(cfg.out) / "residuals.csv").string());
  metrics.write((fs::path(cfg.out) / "metrics.csv").string());
  invariance.write((fs::path(cfg.out) / "invariance.csv").string());
  Csv timing({"command", "frames", "devices", "seconds", "frames_per_second"});
  timing.row({"recon", std::to_string(results.size()), std::to_string(cfg.devices), num(seconds),
              num(double(results.size()) / seconds)});
  timing.write((fs::path(cfg.out) / "recon_timing.csv").string());
  checks.write_csv((fs::path(cfg.out) / "recon_checks.csv").string());
  return checks.all_passed() ? Ok : InvariantFailed;
}

int cmd_report(const std::string& dir, std::ostream& log) {
  if (!fs::is_directory(dir)) throw ConfigError("key 'out': " + dir + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.size() > 11 && name.ends_with("_checks.csv")) files.push_back(e.path());
  }
  if (files.empty()) throw ConfigError("key 'out': no *_checks.csv files in " + dir);
  std::sort(files.begin(), files.end());

  std::size_t failed = 0;
  for (const auto& path : files) {
    const auto rows = read_csv(path.string());
    std::size_t pass = 0, total = 0;
    std::vector<std::string> failures;
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const auto& r = rows[i];
      if (r.size() != 6) throw ConfigError("malformed row in " + path.string());
      ++total;
      if (r[5] == "1") {
        ++pass;
      } else {
        failures.push_back(r[1] + " (devices " + r[2] + "): expected " + r[3] + ", observed " + r[4]);
      }
    }
    failed += total - pass;
    char line[160];
    std::snprintf(line, sizeof line, "%-28s %4zu/%-4zu checks passed\n", path.filename().string().c_str(), pass,
                  total);
    log << line;
    for (const auto& f : failures) log << "  FAIL " << f << "\n";
  }

  const auto metrics = fs::path(dir) / "metrics.csv";
  if (fs::exists(metrics)) {
    log << "\nreconstruction metrics\n";
    for (const auto& r : read_csv(metrics.string())) {
      for (std::size_t i = 0; i < r.size(); ++i) {
        char cell[24];
        std::snprintf(cell, sizeof cell, "%-18s", r[i].c_str());
        log << cell;
      }
      log << "\n";
    }
  }
  log << (failed == 0 ? "\nall checks passed\n" : "\n" + std::to_string(failed) + " check(s) failed\n");
  return failed == 0 ? Ok : InvariantFailed;
}

}  // namespace mgpu::app
