#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "dsgd/config.hpp"
#include "dsgd/noise.hpp"
#include "dsgd/objectives.hpp"
#include "dsgd/stats.hpp"
#include "dsgd/topology.hpp"

// The dsgd-lab subcommands. Each returns the process exit code:
// 0 success / all claims pass, 1 config or IO error, 2 assumption or claim failure.

namespace dsgd {

struct Problem {
  CommMatrix w;
  ObjectiveSet obj;
  NoiseModel noise;
  Stacked theta0;
};

CommMatrix build_graph(const TopologySection& topology, TopologyKind kind, int m);
ObjectiveSet build_objective(const ObjectiveSection& objective, int m);
NoiseModel build_noise(const NoiseSection& noise, int m, int d);
Problem build_problem(const ExperimentConfig& config, TopologyKind kind, int m);

/// run.T, or the smallest T with (1 - gamma mu)^T <= 1e-3 when unset.
long resolve_horizon(const RunSection& run, const ObjectiveSet& obj, double gamma);

/// DGD fixed point; quadratics start from the closed form when it applies.
Stacked det_limit(const Problem& p, double gamma);

struct CommandOptions {
  int threads = 1;
  std::ostream* out = nullptr;  ///< main CSV / summary
  std::ostream* err = nullptr;  ///< diagnostics
};

int cmd_graph_info(const ExperimentConfig& config, const CommandOptions& options);
int cmd_simulate(const ExperimentConfig& config, const CommandOptions& options);
int cmd_predict(const ExperimentConfig& config, const CommandOptions& options);
int cmd_compare(const ExperimentConfig& config, const CommandOptions& options);
int cmd_sweep(const ExperimentConfig& config, const CommandOptions& options);

std::vector<std::string> command_names();
/// Dispatches by name and maps errors to exit codes, printing them to options.err.
int run_command(const std::string& name, const ExperimentConfig& config,
                const CommandOptions& options);

int exit_code_for(ErrorCode code);

struct Claim {
  std::string id;
  double predicted = 0.0;
  double observed = 0.0;
  double tolerance = 0.0;
  std::string status;  ///< pass, fail, info or skipped
  bool hard = true;
};

/// The per-claim comparison behind cmd_compare for one graph size and kind.
std::vector<Claim> compare_claims(const ExperimentConfig& config, TopologyKind kind, int m,
                                  int threads);

/// CSV `claim,predicted,observed,tolerance,status`.
void write_claims_csv(const std::vector<Claim>& claims, std::ostream& out);

constexpr int kMaxSweepCells = 200;

}  // namespace dsgd
