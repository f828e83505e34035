#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dsgd/dynamics.hpp"

// Experiment configuration: line-oriented `section.key = value` text, `#`
// comments, booleans true/false, lists comma-separated.

namespace dsgd {

using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(std::istream& in);
KeyValues read_key_values(const std::string& path);
/// One `key = value` line per entry, keys sorted.
std::string serialize_key_values(const KeyValues& kv);

/// Splits `section.key=value` (spaces around '=' allowed).
std::pair<std::string, std::string> parse_assignment(const std::string& text);

enum class TopologyKind { Full, Ring, Path, Clusters, Edges };
enum class ObjectiveChoice { Quadratic, Logistic, TwoPoint };
enum class NoiseChoice { None, Gaussian, Minibatch };

std::string to_string(TopologyKind k);
std::string to_string(ObjectiveChoice k);
std::string to_string(NoiseChoice k);

struct TopologySection {
  std::vector<TopologyKind> kinds{TopologyKind::Ring};
  std::vector<int> m{4};
  std::optional<double> t;  ///< unset: 1/3 for rings, 1/(1 + max degree) otherwise
  int clusters = 4;
  double bridge_weight = 1.0;
  std::string edges;  ///< edge-list path for kind = edges

  bool operator==(const TopologySection&) const = default;
};

struct ObjectiveSection {
  ObjectiveChoice kind = ObjectiveChoice::Quadratic;
  int d = 2;
  std::uint64_t seed = 0;
  // quadratic
  double eig_min = 1.0;
  double eig_max = 4.0;
  // quadratic and logistic: spread of the client centers
  double spread = 2.0;
  bool homogeneous = false;
  // logistic
  int n = 50;
  double lambda = 0.1;
  std::string data;  ///< optional CSV of client samples
  // two-point: m = 2, d = 1, f_k = a/2 (theta -+ delta)^2
  double a = 1.0;
  double delta = 1.0;

  bool operator==(const ObjectiveSection&) const = default;
};

struct NoiseSection {
  NoiseChoice kind = NoiseChoice::Gaussian;
  double sigma2 = 1.0;
  int batch = 1;

  bool operator==(const NoiseSection&) const = default;
};

struct RunSection {
  Algorithm algorithm = Algorithm::DSGD;
  std::vector<double> gamma{1e-3};
  std::optional<long> T = 10000;  ///< unset: smallest T with (1 - gamma mu)^T <= 1e-3
  int replicates = 1;
  std::optional<long> burn_in;    ///< unset: automatic
  long record_every = 1;
  Coupling coupling = Coupling::SharedNoise;
  std::uint64_t seed = 0;
  double theta0 = 0.0;            ///< every coordinate of the initial point

  bool operator==(const RunSection&) const = default;
};

struct OutputSection {
  std::string dir = ".";
  std::string prefix;

  bool operator==(const OutputSection&) const = default;
};

struct ExperimentConfig {
  TopologySection topology;
  ObjectiveSection objective;
  NoiseSection noise;
  RunSection run;
  OutputSection output;

  bool operator==(const ExperimentConfig&) const = default;

  /// Overwrites the fields named in kv. Unknown keys and malformed values
  /// throw ConfigError.
  void apply(const KeyValues& kv);
  KeyValues to_key_values() const;
  /// Range checks that need no objective or graph.
  void validate() const;
};

ExperimentConfig parse_config(std::istream& in);
std::string serialize_config(const ExperimentConfig& config);

std::vector<std::string> preset_names();
/// Preset settings as key-value overrides of the defaults.
KeyValues preset(const std::string& name);

}  // namespace dsgd
