// dsgd-lab: simulate decentralized (stochastic) gradient descent and compare
// runs against closed-form predictions.
//
// Settings are layered, later layers winning:
//   defaults < --preset < --config file < DSGD_LAB_SEED < --set < shorthand flags

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <thread>
#include <utility>

#include "dsgd/commands.hpp"

namespace {

struct Shorthand {
  const char* flag;
  const char* key;
  const char* help;
};

constexpr std::pair<const char*, const char*> kCommands[] = {
    {"graph-info", "spectral summary of the communication matrix"},
    {"simulate", "run DGD / DSGD / RR replicates and write trajectories"},
    {"predict", "closed-form fixed point, bias and variance predictions"},
    {"compare", "simulate and check each prediction, one verdict per claim"},
    {"sweep", "bias and stationary variance over a grid of m, topology and gamma"},
};

constexpr Shorthand kShorthands[] = {
    {"--topology", "topology.kind", "graph kind: full, ring, path, clusters, edges (list for sweep)"},
    {"--graph", "topology.kind", "alias of --topology"},
    {"--m", "topology.m", "number of clients (list for sweep)"},
    {"--t", "topology.t", "Laplacian step: W = I - t L"},
    {"--algorithm", "run.algorithm", "dgd, dsgd, rr-dgd or rr-dsgd"},
    {"--gamma", "run.gamma", "step size (comma list for grids)"},
    {"--T", "run.T", "number of iterations, or auto"},
    {"--replicates", "run.replicates", "independent runs"},
    {"--seed", "run.seed", "random seed"},
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decentralized SGD laboratory"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  std::string config_path;
  std::vector<std::string> sets;
  std::string out_dir;
  std::string preset_name;
  int threads = int(std::max(1u, std::thread::hardware_concurrency()));
  std::vector<std::string> shorthand_values(std::size(kShorthands));

  std::vector<std::string> presets = dsgd::preset_names();
  for (const auto& [name, description] : kCommands) {
    auto* sub = app.add_subcommand(name, description);
    sub->add_option("--config", config_path, "config file of `section.key = value` lines")
        ->check(CLI::ExistingFile);
    sub->add_option("--set", sets, "override, e.g. --set run.gamma=0.01 (repeatable)");
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--preset", preset_name, "named experiment")->check(CLI::IsMember(presets));
    for (std::size_t i = 0; i < std::size(kShorthands); ++i) {
      sub->add_option(kShorthands[i].flag, shorthand_values[i], kShorthands[i].help);
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  dsgd::ExperimentConfig config;
  try {
    if (!preset_name.empty()) config.apply(dsgd::preset(preset_name));
    if (!config_path.empty()) config.apply(dsgd::read_key_values(config_path));
    if (const char* seed = std::getenv("DSGD_LAB_SEED"); seed && *seed) {
      config.apply({{"run.seed", seed}});
    }
    dsgd::KeyValues overrides;
    for (const auto& s : sets) {
      auto [key, value] = dsgd::parse_assignment(s);
      overrides[key] = value;
    }
    config.apply(overrides);
    dsgd::KeyValues shorthands;
    for (std::size_t i = 0; i < std::size(kShorthands); ++i) {
      if (!shorthand_values[i].empty()) shorthands[kShorthands[i].key] = shorthand_values[i];
    }
    config.apply(shorthands);
    if (!out_dir.empty()) config.output.dir = out_dir;
  } catch (const dsgd::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }

  dsgd::CommandOptions options;
  options.threads = threads;
  options.out = &std::cout;
  options.err = &std::cerr;
  return dsgd::run_command(command, config, options);
}
