#include "dsgd/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <istream>
#include <sstream>

namespace dsgd {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* what) {
  throw Error(ErrorCode::ConfigError, key + " = '" + value + "': expected " + what);
}

double to_double(const std::string& key, const std::string& value) {
  double out = 0.0;
  const auto* end = value.data() + value.size();
  const auto res = std::from_chars(value.data(), end, out);
  if (res.ec != std::errc() || res.ptr != end) bad_value(key, value, "a number");
  return out;
}

template <typename Int>
Int to_int(const std::string& key, const std::string& value) {
  Int out = 0;
  const auto* end = value.data() + value.size();
  const auto res = std::from_chars(value.data(), end, out);
  if (res.ec != std::errc() || res.ptr != end) bad_value(key, value, "an integer");
  return out;
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true") return true;
  if (value == "false") return false;
  bad_value(key, value, "true or false");
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(value);
  while (std::getline(in, item, ',')) out.push_back(trim(item));
  if (!value.empty() && value.back() == ',') out.push_back("");
  return out;
}

// Shortest representation that parses back to the same double.
std::string fmt(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

template <typename T, typename F>
std::string join(const std::vector<T>& xs, F f) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    out += f(xs[i]);
  }
  return out;
}

template <typename Enum>
Enum to_enum(const std::string& key, const std::string& value,
             std::initializer_list<std::pair<const char*, Enum>> names) {
  for (const auto& [name, e] : names) {
    if (value == name) return e;
  }
  std::string allowed;
  for (const auto& [name, e] : names) allowed += (allowed.empty() ? "" : "|") + std::string(name);
  bad_value(key, value, allowed.c_str());
}

TopologyKind to_topology(const std::string& key, const std::string& v) {
  return to_enum<TopologyKind>(key, v,
                               {{"full", TopologyKind::Full},
                                {"ring", TopologyKind::Ring},
                                {"path", TopologyKind::Path},
                                {"clusters", TopologyKind::Clusters},
                                {"edges", TopologyKind::Edges}});
}

std::optional<long> to_auto_long(const std::string& key, const std::string& v) {
  if (v == "auto") return std::nullopt;
  return to_int<long>(key, v);
}

}  // namespace

std::string to_string(TopologyKind k) {
  switch (k) {
    case TopologyKind::Full: return "full";
    case TopologyKind::Ring: return "ring";
    case TopologyKind::Path: return "path";
    case TopologyKind::Clusters: return "clusters";
    case TopologyKind::Edges: return "edges";
  }
  return "?";
}

std::string to_string(ObjectiveChoice k) {
  switch (k) {
    case ObjectiveChoice::Quadratic: return "quadratic";
    case ObjectiveChoice::Logistic: return "logistic";
    case ObjectiveChoice::TwoPoint: return "two-point";
  }
  return "?";
}

std::string to_string(NoiseChoice k) {
  switch (k) {
    case NoiseChoice::None: return "none";
    case NoiseChoice::Gaussian: return "gaussian";
    case NoiseChoice::Minibatch: return "minibatch";
  }
  return "?";
}

std::pair<std::string, std::string> parse_assignment(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) {
    throw Error(ErrorCode::ConfigError, "expected `section.key = value`, got '" + text + "'");
  }
  std::string key = trim(text.substr(0, eq));
  std::string value = trim(text.substr(eq + 1));
  if (key.find('.') == std::string::npos || key.front() == '.' || key.back() == '.') {
    throw Error(ErrorCode::ConfigError, "key '" + key + "' is not of the form section.key");
  }
  return {std::move(key), std::move(value)};
}

KeyValues parse_key_values(std::istream& in) {
  KeyValues kv;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      auto [key, value] = parse_assignment(line);
      kv[key] = value;
    } catch (const Error& e) {
      throw Error(ErrorCode::ConfigError,
                  "line " + std::to_string(line_no) + ": " + std::string(e.what()));
    }
  }
  return kv;
}

KeyValues read_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open config " + path);
  return parse_key_values(in);
}

std::string serialize_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [key, value] : kv) out += key + " = " + value + "\n";
  return out;
}

void ExperimentConfig::apply(const KeyValues& kv) {
  using Setter = std::function<void(const std::string&, const std::string&)>;
  const std::map<std::string, Setter> setters{
      {"topology.kind",
       [&](const auto& k, const auto& v) {
         topology.kinds.clear();
         for (const auto& item : split_list(v)) topology.kinds.push_back(to_topology(k, item));
       }},
      {"topology.m",
       [&](const auto& k, const auto& v) {
         topology.m.clear();
         for (const auto& item : split_list(v)) topology.m.push_back(to_int<int>(k, item));
       }},
      {"topology.t",
       [&](const auto& k, const auto& v) {
         topology.t = v == "auto" ? std::nullopt : std::optional<double>(to_double(k, v));
       }},
      {"topology.clusters", [&](const auto& k, const auto& v) { topology.clusters = to_int<int>(k, v); }},
      {"topology.bridge_weight",
       [&](const auto& k, const auto& v) { topology.bridge_weight = to_double(k, v); }},
      {"topology.edges", [&](const auto&, const auto& v) { topology.edges = v; }},

      {"objective.kind",
       [&](const auto& k, const auto& v) {
         objective.kind = to_enum<ObjectiveChoice>(k, v,
                                                   {{"quadratic", ObjectiveChoice::Quadratic},
                                                    {"logistic", ObjectiveChoice::Logistic},
                                                    {"two-point", ObjectiveChoice::TwoPoint}});
       }},
      {"objective.d", [&](const auto& k, const auto& v) { objective.d = to_int<int>(k, v); }},
      {"objective.seed",
       [&](const auto& k, const auto& v) { objective.seed = to_int<std::uint64_t>(k, v); }},
      {"objective.eig_min", [&](const auto& k, const auto& v) { objective.eig_min = to_double(k, v); }},
      {"objective.eig_max", [&](const auto& k, const auto& v) { objective.eig_max = to_double(k, v); }},
      {"objective.spread", [&](const auto& k, const auto& v) { objective.spread = to_double(k, v); }},
      {"objective.homogeneous",
       [&](const auto& k, const auto& v) { objective.homogeneous = to_bool(k, v); }},
      {"objective.n", [&](const auto& k, const auto& v) { objective.n = to_int<int>(k, v); }},
      {"objective.lambda", [&](const auto& k, const auto& v) { objective.lambda = to_double(k, v); }},
      {"objective.data", [&](const auto&, const auto& v) { objective.data = v; }},
      {"objective.a", [&](const auto& k, const auto& v) { objective.a = to_double(k, v); }},
      {"objective.delta", [&](const auto& k, const auto& v) { objective.delta = to_double(k, v); }},

      {"noise.kind",
       [&](const auto& k, const auto& v) {
         noise.kind = to_enum<NoiseChoice>(k, v,
                                           {{"none", NoiseChoice::None},
                                            {"gaussian", NoiseChoice::Gaussian},
                                            {"minibatch", NoiseChoice::Minibatch}});
       }},
      {"noise.sigma2", [&](const auto& k, const auto& v) { noise.sigma2 = to_double(k, v); }},
      {"noise.batch", [&](const auto& k, const auto& v) { noise.batch = to_int<int>(k, v); }},

      {"run.algorithm",
       [&](const auto& k, const auto& v) {
         run.algorithm = to_enum<Algorithm>(k, v,
                                            {{"dgd", Algorithm::DGD},
                                             {"dsgd", Algorithm::DSGD},
                                             {"rr-dgd", Algorithm::RR_DGD},
                                             {"rr-dsgd", Algorithm::RR_DSGD}});
       }},
      {"run.gamma",
       [&](const auto& k, const auto& v) {
         run.gamma.clear();
         if (v.empty()) return;  // rejected by validate()
         for (const auto& item : split_list(v)) run.gamma.push_back(to_double(k, item));
       }},
      {"run.T", [&](const auto& k, const auto& v) { run.T = to_auto_long(k, v); }},
      {"run.replicates", [&](const auto& k, const auto& v) { run.replicates = to_int<int>(k, v); }},
      {"run.burn_in", [&](const auto& k, const auto& v) { run.burn_in = to_auto_long(k, v); }},
      {"run.record_every",
       [&](const auto& k, const auto& v) { run.record_every = to_int<long>(k, v); }},
      {"run.coupling",
       [&](const auto& k, const auto& v) {
         run.coupling = to_enum<Coupling>(
             k, v, {{"shared", Coupling::SharedNoise}, {"independent", Coupling::Independent}});
       }},
      {"run.seed", [&](const auto& k, const auto& v) { run.seed = to_int<std::uint64_t>(k, v); }},
      {"run.theta0", [&](const auto& k, const auto& v) { run.theta0 = to_double(k, v); }},

      {"output.dir", [&](const auto&, const auto& v) { output.dir = v; }},
      {"output.prefix", [&](const auto&, const auto& v) { output.prefix = v; }},
  };
  for (const auto& [key, value] : kv) {
    const auto it = setters.find(key);
    if (it == setters.end()) throw Error(ErrorCode::ConfigError, "unknown key '" + key + "'");
    it->second(key, value);
  }
}

KeyValues ExperimentConfig::to_key_values() const {
  auto opt_long = [](const std::optional<long>& v) { return v ? std::to_string(*v) : "auto"; };
  return {
      {"topology.kind", join(topology.kinds, [](TopologyKind k) { return to_string(k); })},
      {"topology.m", join(topology.m, [](int m) { return std::to_string(m); })},
      {"topology.t", topology.t ? fmt(*topology.t) : "auto"},
      {"topology.clusters", std::to_string(topology.clusters)},
      {"topology.bridge_weight", fmt(topology.bridge_weight)},
      {"topology.edges", topology.edges},
      {"objective.kind", to_string(objective.kind)},
      {"objective.d", std::to_string(objective.d)},
      {"objective.seed", std::to_string(objective.seed)},
      {"objective.eig_min", fmt(objective.eig_min)},
      {"objective.eig_max", fmt(objective.eig_max)},
      {"objective.spread", fmt(objective.spread)},
      {"objective.homogeneous", objective.homogeneous ? "true" : "false"},
      {"objective.n", std::to_string(objective.n)},
      {"objective.lambda", fmt(objective.lambda)},
      {"objective.data", objective.data},
      {"objective.a", fmt(objective.a)},
      {"objective.delta", fmt(objective.delta)},
      {"noise.kind", to_string(noise.kind)},
      {"noise.sigma2", fmt(noise.sigma2)},
      {"noise.batch", std::to_string(noise.batch)},
      {"run.algorithm", to_string(run.algorithm)},
      {"run.gamma", join(run.gamma, [](double g) { return fmt(g); })},
      {"run.T", opt_long(run.T)},
      {"run.replicates", std::to_string(run.replicates)},
      {"run.burn_in", opt_long(run.burn_in)},
      {"run.record_every", std::to_string(run.record_every)},
      {"run.coupling", run.coupling == Coupling::SharedNoise ? "shared" : "independent"},
      {"run.seed", std::to_string(run.seed)},
      {"run.theta0", fmt(run.theta0)},
      {"output.dir", output.dir},
      {"output.prefix", output.prefix},
  };
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::ConfigError, msg); };
  if (topology.kinds.empty()) fail("topology.kind: empty list");
  if (topology.m.empty()) fail("topology.m: empty list");
  for (int m : topology.m) {
    if (m < 1) fail("topology.m: every entry must be >= 1");
  }
  if (topology.t && !(*topology.t > 0.0)) fail("topology.t must be positive");
  if (topology.clusters < 1) fail("topology.clusters must be >= 1");
  for (auto k : topology.kinds) {
    if (k == TopologyKind::Edges && topology.edges.empty()) fail("topology.edges: path required");
  }
  if (objective.d < 1) fail("objective.d must be >= 1");
  if (!(objective.eig_min > 0.0) || objective.eig_max < objective.eig_min) {
    fail("objective: need 0 < eig_min <= eig_max");
  }
  if (objective.spread < 0.0) fail("objective.spread must be >= 0");
  if (objective.n < 1) fail("objective.n must be >= 1");
  if (!(objective.lambda > 0.0)) fail("objective.lambda must be positive");
  if (!(objective.a > 0.0)) fail("objective.a must be positive");
  if (!(noise.sigma2 >= 0.0)) fail("noise.sigma2 must be >= 0");
  if (noise.batch < 1) fail("noise.batch must be >= 1");
  if (run.gamma.empty()) fail("run.gamma: empty list");
  for (double g : run.gamma) {
    if (!(g > 0.0)) fail("run.gamma: every entry must be positive");
  }
  if (run.T && *run.T < 0) fail("run.T must be >= 0");
  if (run.replicates < 1) fail("run.replicates must be >= 1");
  if (run.burn_in && *run.burn_in < 0) fail("run.burn_in must be >= 0");
  if (run.record_every < 1) fail("run.record_every must be >= 1");
}

ExperimentConfig parse_config(std::istream& in) {
  ExperimentConfig cfg;
  cfg.apply(parse_key_values(in));
  return cfg;
}

std::string serialize_config(const ExperimentConfig& config) {
  return serialize_key_values(config.to_key_values());
}

std::vector<std::string> preset_names() {
  return {"fig1-rr-det", "fig1-rr-sto", "fig2-heterogeneous", "fig2-homogeneous", "two-point"};
}

KeyValues preset(const std::string& name) {
  // Logistic clients in d = 2, gamma = 1e-3; T is sized from mu at run time
  // so that the transient (1 - gamma mu)^T drops below 1e-3, from theta0 = 0.
  const KeyValues logistic{
      {"objective.kind", "logistic"}, {"objective.d", "2"},   {"objective.n", "50"},
      {"objective.lambda", "0.1"},    {"objective.spread", "2"}, {"run.gamma", "0.001"},
      {"run.T", "auto"},              {"run.theta0", "0"},    {"run.record_every", "100"},
      {"noise.kind", "minibatch"},    {"noise.batch", "1"},
  };
  auto with = [&](KeyValues extra) {
    KeyValues out = logistic;
    for (auto& [k, v] : extra) out[k] = v;
    return out;
  };
  if (name == "fig1-rr-det") {
    return with({{"topology.kind", "clusters"}, {"topology.m", "12"}, {"topology.clusters", "4"},
                 {"noise.kind", "none"}, {"run.algorithm", "rr-dgd"}, {"run.replicates", "1"}});
  }
  if (name == "fig1-rr-sto") {
    return with({{"topology.kind", "clusters"}, {"topology.m", "12"}, {"topology.clusters", "4"},
                 {"run.algorithm", "rr-dsgd"}, {"run.replicates", "20"}});
  }
  if (name == "fig2-heterogeneous") {
    return with({{"topology.kind", "clusters"}, {"topology.m", "12"}, {"topology.clusters", "4"},
                 {"run.algorithm", "dsgd"}, {"run.replicates", "20"}});
  }
  if (name == "fig2-homogeneous") {
    return with({{"topology.kind", "clusters"}, {"topology.m", "12"}, {"topology.clusters", "4"},
                 {"objective.spread", "0"}, {"run.algorithm", "dsgd"}, {"run.replicates", "20"}});
  }
  if (name == "two-point") {
    return {{"topology.kind", "path"}, {"topology.m", "2"},        {"topology.t", "0.25"},
            {"objective.kind", "two-point"}, {"objective.d", "1"}, {"objective.a", "1"},
            {"objective.delta", "1"}, {"noise.kind", "none"},      {"run.algorithm", "dgd"},
            {"run.gamma", "0.1"},     {"run.T", "200"}};
  }
  std::string names;
  for (const auto& n : preset_names()) names += " " + n;
  throw Error(ErrorCode::ConfigError, "unknown preset '" + name + "' (known:" + names + ")");
}

}  // namespace dsgd
