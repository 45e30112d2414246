#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "app.hpp"
#include "mgpu/error.hpp"

int main(int argc, char** argv) {
  using namespace mgpu;

  CLI::App cli{"Multi-device segmented containers and nlinv reconstruction on simulated devices"};
  cli.require_subcommand(1);
  cli.fallthrough();

  std::string config_path;
  std::optional<int> devices;
  std::optional<std::string> topology;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  cli.add_option("--config", config_path, "key = value configuration file")->check(CLI::ExistingFile);
  cli.add_option("--devices", devices, "number of simulated devices (overrides the config)");
  cli.add_option("--topology", topology, "topology file (overrides the config)");
  cli.add_option("--seed", seed, "random seed (overrides the config)");
  cli.add_option("--out", out, "output directory (overrides the config)");

  auto* bench_transfer = cli.add_subcommand("bench-transfer", "ledger byte counts of copies, broadcast and reduce");
  auto* bench_algos = cli.add_subcommand("bench-algos", "per-device work of fft, axpy and gemm");
  auto* phantom = cli.add_subcommand("phantom", "write a simulated acquisition");
  auto* recon = cli.add_subcommand("recon", "nlinv reconstruction with metrics");
  auto* report = cli.add_subcommand("report", "summarize the checks in an output directory");
  std::string report_dir;
  report->add_option("dir", report_dir, "directory written by another command");

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = cli.exit(e);
    return code == 0 ? 0 : app::BadConfig;
  }

  try {
    RunConfig cfg = config_path.empty() ? RunConfig{} : RunConfig::load(config_path);
    if (devices) cfg.set("devices", std::to_string(*devices));
    if (topology) cfg.set("topology", *topology);
    if (seed) cfg.set("seed", std::to_string(*seed));
    if (out) cfg.set("out", *out);

    if (report->parsed()) return app::cmd_report(report_dir.empty() ? cfg.out : report_dir, std::cout);
    cfg.validate();
    if (bench_transfer->parsed()) return app::cmd_bench_transfer(cfg, std::cout);
    if (bench_algos->parsed()) return app::cmd_bench_algos(cfg, std::cout);
    if (phantom->parsed()) return app::cmd_phantom(cfg, std::cout);
    if (recon->parsed()) return app::cmd_recon(cfg, std::cout);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return app::BadConfig;
  } catch (const NumericalError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return app::NumericalAbort;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return app::InvariantFailed;
  }
  return app::InvariantFailed;
}
