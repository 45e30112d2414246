#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mgpu/config.hpp"
#include "mgpu/nlinv.hpp"
#include "mgpu/phantom.hpp"
#include "mgpu/topology.hpp"

namespace mgpu::app {

enum ExitCode : int { Ok = 0, InvariantFailed = 1, BadConfig = 2, NumericalAbort = 3 };

/// One asserted property of a command run.
struct Check {
  std::string command;
  std::string name;
  int devices = 0;
  std::string expected;
  std::string observed;
  bool pass = false;
};

class CheckLog {
 public:
  void add(Check c) { checks_.push_back(std::move(c)); }
  bool all_passed() const;
  const std::vector<Check>& checks() const { return checks_; }
  void write_csv(const std::string& path) const;

 private:
  std::vector<Check> checks_;
};

/// Seeded synthetic acquisition derived from a RunConfig.
struct Scenario {
  nlinv::ReconGrid grid;
  std::size_t channels = 0;
  std::vector<cfloat> coils;  // channels x ng x ng
  std::vector<std::vector<float>> images;  // per frame, n x n
  std::vector<nlinv::Frame> frames;
};

Scenario simulate(const RunConfig& cfg);
Scenario load_scenario(const RunConfig& cfg);
void save_scenario(const Scenario& s, const std::string& dir);

/// |image| against truth * RSS(coils), relative L2 over the field of view.
double relative_error(const std::vector<float>& magnitude, const std::vector<float>& truth,
                      const std::vector<cfloat>& coils, const nlinv::ReconGrid& grid, std::size_t channels);

nlinv::ReconProblem base_problem(const RunConfig& cfg, const nlinv::ReconGrid& grid, std::size_t channels);

/// Projects every frame onto the first `keep` principal channels of frame 0.
/// Returns the retained energy fraction of frame 0.
double compress_frames(std::vector<nlinv::Frame>& frames, std::size_t channels, std::size_t keep);

/// Loads the topology file named by the config, or a single-IOH topology.
Topology resolve_topology(const RunConfig& cfg);

int cmd_bench_transfer(const RunConfig& cfg, std::ostream& log);
int cmd_bench_algos(const RunConfig& cfg, std::ostream& log);
int cmd_phantom(const RunConfig& cfg, std::ostream& log);
int cmd_recon(const RunConfig& cfg, std::ostream& log);
int cmd_report(const std::string& dir, std::ostream& log);

}  // namespace mgpu::app
