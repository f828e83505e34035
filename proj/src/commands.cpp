#include "dsgd/commands.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include "dsgd/theory.hpp"

namespace dsgd {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
// Fixed points are computed to about 1e-12; closed-form comparisons and
// bound checks get this much slack for round-off.
constexpr double kFixedPointSlack = 1e-10;
constexpr double kZScore = 4.0;

double max_weighted_degree(const Matrix& laplacian) { return laplacian.diagonal().maxCoeff(); }

std::filesystem::path output_path(const ExperimentConfig& config, const std::string& name) {
  std::filesystem::path dir(config.output.dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create output directory " + dir.string());
  return dir / (config.output.prefix + name);
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  return out;
}

// Writes `text` to the output file and echoes it to the main stream.
void emit(const ExperimentConfig& config, const CommandOptions& options, const std::string& name,
          const std::string& text) {
  const auto path = output_path(config, name);
  auto file = open_output(path);
  file << text;
  if (!file) throw Error(ErrorCode::IoError, "write failed for " + path.string());
  if (options.out) *options.out << text;
}

std::ostream& errs(const CommandOptions& options) {
  static std::ostringstream sink;
  return options.err ? *options.err : sink;
}

void require_single(const ExperimentConfig& config, const char* command) {
  if (config.topology.kinds.size() != 1 || config.topology.m.size() != 1) {
    throw Error(ErrorCode::ConfigError, std::string(command) +
                                            ": topology.kind and topology.m take one value here "
                                            "(lists belong to `sweep`)");
  }
}

bool in_bound_range(const Problem& p, double gamma) {
  return gamma <= bound_step_limit(p.obj, p.w) * (1.0 + 1e-12);
}

bool is_stochastic(const Problem& p) { return !p.noise.is_degenerate(); }

std::string fmt17(double x) {
  std::ostringstream s;
  s << std::setprecision(17) << x;
  return s.str();
}

// Everything one (graph, m, gamma) cell contributes to compare and sweep.
struct Cell {
  double gamma = 0.0;
  Stacked theta_det;
  double bias_norm = 0.0;
  double lemma3 = kNaN;
  double bias_pred = kNaN;      ///< ||gamma-linear prediction - Theta*||
  double expansion_residual = kNaN;
  double expansion_bound = kNaN;
  bool stochastic = false;
  std::optional<StationaryMoments> moments;
  Estimate trace{kNaN, kNaN};
  double trace_pred = kNaN;
};

Cell analyze_cell(const ExperimentConfig& config, const Problem& p, double gamma, int threads) {
  Cell c;
  c.gamma = gamma;
  c.theta_det = det_limit(p, gamma);
  const Stacked star = p.obj.theta_star_stacked();
  c.bias_norm = (c.theta_det - star).norm();
  if (in_bound_range(p, gamma)) {
    c.lemma3 = lemma3_bound(p.obj, p.w, gamma);
    const auto exp = det_bias_expansion(p.w, p.obj, gamma);
    c.bias_pred = (exp.prediction - star).norm();
    c.expansion_residual = (c.theta_det - exp.prediction).norm();
    c.expansion_bound = exp.residual_bound;
  }
  c.stochastic = is_stochastic(p);
  if (!c.stochastic) return c;

  const Matrix v = variance_first_order(p.obj, p.noise, gamma);
  c.trace_pred = v.trace();
  RunConfig rc;
  rc.algorithm = Algorithm::DSGD;
  rc.gamma = gamma;
  rc.T = resolve_horizon(config.run, p.obj, gamma);
  rc.seed = config.run.seed;
  rc.replicates = config.run.replicates;
  rc.burn_in = config.run.burn_in;
  rc.record_every = std::max<long>(1, rc.T);
  rc.coupling = config.run.coupling;
  rc.threads = threads;
  if (rc.T == 0) return c;
  // Chains start at Theta_det: no transient beyond the noise itself.
  const auto record = run(p.w, p.obj, p.noise, rc, c.theta_det, c.theta_det);
  c.moments = stationary_moments(record, c.theta_det);
  c.trace = mean_diagonal_trace(*c.moments);
  return c;
}

Claim bound_claim(std::string id, double bound, double observed) {
  Claim c{std::move(id), bound, observed, kFixedPointSlack, "", true};
  if (std::isnan(bound)) {
    c.status = "skipped";
  } else {
    c.status = observed <= bound + kFixedPointSlack ? "pass" : "fail";
  }
  return c;
}

Claim slope_claim(std::string id, double expected, double tol, const std::vector<double>& gammas,
                  const std::vector<double>& errors) {
  Claim c{std::move(id), expected, kNaN, tol, "skipped", true};
  try {
    c.observed = order_fit(gammas, errors).slope;
    c.status = std::abs(c.observed - expected) <= tol ? "pass" : "fail";
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NonPositive && e.code() != ErrorCode::TooFewPoints) throw;
  }
  return c;
}

// Largest |observed - predicted| / stderr over the entries; NaN when some
// standard error is unavailable.
double max_z(const Matrix& observed, const Matrix& predicted, const Matrix& se) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < observed.size(); ++i) {
    const double diff = std::abs(observed.data()[i] - predicted.data()[i]);
    const double s = se.data()[i];
    if (std::isnan(s)) return kNaN;
    if (diff == 0.0) continue;
    if (s == 0.0) return std::numeric_limits<double>::infinity();
    worst = std::max(worst, diff / s);
  }
  return worst;
}

Claim z_claim(std::string id, double z, bool hard) {
  Claim c{std::move(id), 0.0, z, kZScore, "skipped", hard};
  if (std::isnan(z)) return c;
  if (!hard) {
    c.status = "info";
  } else {
    c.status = z <= kZScore ? "pass" : "fail";
  }
  return c;
}

std::vector<Claim> claims_for_cell(const ExperimentConfig& config, const Problem& p,
                                   const Cell& cell) {
  std::vector<Claim> out;
  const Stacked star = p.obj.theta_star_stacked();
  const double gamma = cell.gamma;

  out.push_back(bound_claim("LEMMA3", cell.lemma3, cell.bias_norm));
  out.push_back(bound_claim("PROP2_RESIDUAL", cell.expansion_bound, cell.expansion_residual));

  if (p.obj.kind() == ObjectiveKind::Quadratic) {
    Claim c{"PROP1_TWO_PATH", 0.0, kNaN, 1e-9, "skipped", true};
    try {
      const auto exact = quad_exact_fixed_point(p.w, p.obj, gamma);
      const auto iterated = fixed_point(p.w, p.obj, gamma);
      c.observed = (exact.theta_det - iterated.theta).norm();
      c.status = c.observed <= c.tolerance ? "pass" : "fail";
    } catch (const Error& e) {
      if (e.code() != ErrorCode::StepTooLarge) throw;
    }
    out.push_back(c);
  }

  {
    const Stacked half = det_limit(p, 0.5 * gamma);
    const double rr_err = (2.0 * half - cell.theta_det - star).norm();
    const double bound = in_bound_range(p, gamma) ? rr_bias_bound(p.obj, p.w, gamma) : kNaN;
    out.push_back(bound_claim("PROP7_RR", bound, rr_err));
  }

  const auto& grid = config.run.gamma;
  if (grid.size() >= 3) {
    std::vector<double> dgd, rr;
    for (double g : grid) {
      const Stacked full = det_limit(p, g);
      const Stacked half = det_limit(p, 0.5 * g);
      dgd.push_back((full - star).norm());
      rr.push_back((2.0 * half - full - star).norm());
    }
    out.push_back(slope_claim("BIAS_ORDER1", 1.0, 0.05, grid, dgd));
    out.push_back(slope_claim("RR_ORDER2", 2.0, 0.2, grid, rr));
  }

  if (cell.moments) {
    const auto& mo = *cell.moments;
    const int m = p.obj.clients();
    const int d = p.obj.dim();
    const bool quadratic = p.obj.kind() == ObjectiveKind::Quadratic;
    if (quadratic) {
      const Matrix zero = Matrix::Zero(m * d, 1);
      const Matrix diff = mo.mean.values() - cell.theta_det.values();
      out.push_back(z_claim("PROP3_MEAN", max_z(diff, zero, mo.mean_std_error.values()), true));
    }
    // First-order block prediction; a hard claim only where the first-order
    // term dominates (gamma <= 1e-2 / L).
    const Matrix v = variance_first_order(p.obj, p.noise, gamma);
    double worst = 0.0;
    for (int k = 0; k < m && !std::isnan(worst); ++k) {
      for (int l = 0; l < m; ++l) {
        const double z = max_z(mo.block(k, l), v, mo.block_std_error(k, l));
        worst = std::isnan(z) ? kNaN : std::max(worst, z);
        if (std::isnan(worst)) break;
      }
    }
    out.push_back(z_claim("PROP4_BLOCK", worst, gamma * p.obj.L() <= 1e-2 * (1.0 + 1e-12)));

    Claim tr{"STATIONARY_TRACE", cell.trace_pred, cell.trace.value, cell.trace.std_error, "info",
             false};
    out.push_back(tr);

    const Vector bias = stochastic_bias_first_order(p.obj, p.noise, gamma);
    Claim sb{"PROP6", std::sqrt(double(m)) * bias.norm(),
             (mo.mean.values() - cell.theta_det.values()).norm(), kNaN, "info", false};
    out.push_back(sb);
  }
  return out;
}

std::vector<double> sweep_gammas(const ExperimentConfig& config) {
  if (config.run.gamma.empty()) throw Error(ErrorCode::ConfigError, "run.gamma: empty list");
  return config.run.gamma;
}

}  // namespace

CommMatrix build_graph(const TopologySection& topology, TopologyKind kind, int m) {
  switch (kind) {
    case TopologyKind::Full:
      return build_fully_connected(m);
    case TopologyKind::Ring: {
      const double t = topology.t.value_or(1.0 / 3.0);
      // Two nodes on a ring share a single edge.
      if (m == 2) return from_laplacian(laplacian_from_edges(2, {{0, 1, 1.0}}), t);
      return build_ring(m, t);
    }
    case TopologyKind::Path: {
      if (m < 2) throw Error(ErrorCode::InvalidSize, "path graph needs m >= 2");
      std::vector<Edge> edges;
      for (int i = 0; i + 1 < m; ++i) edges.push_back({i, i + 1, 1.0});
      const Matrix lap = laplacian_from_edges(m, edges);
      return from_laplacian(lap, topology.t.value_or(1.0 / (1.0 + max_weighted_degree(lap))));
    }
    case TopologyKind::Clusters: {
      // Each node has its cluster-mates plus at most one bridge.
      const int k = std::max(1, topology.clusters);
      const double degree = (m / k - 1) + (k > 1 ? topology.bridge_weight : 0.0);
      const double t = topology.t.value_or(1.0 / (1.0 + degree));
      return build_clusters(m, topology.clusters, t, topology.bridge_weight);
    }
    case TopologyKind::Edges: {
      const auto edges = read_edge_list(topology.edges);
      if (node_count(edges) > m) {
        throw Error(ErrorCode::ConfigError, "edge list mentions " +
                                                std::to_string(node_count(edges)) +
                                                " nodes but topology.m = " + std::to_string(m));
      }
      const Matrix lap = laplacian_from_edges(m, edges);
      return from_laplacian(lap, topology.t.value_or(1.0 / (1.0 + max_weighted_degree(lap))));
    }
  }
  throw Error(ErrorCode::ConfigError, "unknown topology");
}

ObjectiveSet build_objective(const ObjectiveSection& o, int m) {
  switch (o.kind) {
    case ObjectiveChoice::Quadratic:
      return generate_quadratic_problem(m, o.d, o.eig_min, o.eig_max, o.spread, o.seed,
                                        o.homogeneous);
    case ObjectiveChoice::Logistic: {
      if (!o.data.empty()) {
        std::ifstream in(o.data);
        if (!in) throw Error(ErrorCode::IoError, "cannot open logistic data " + o.data);
        auto spec = read_logistic_csv(in, o.lambda);
        if (int(spec.data.size()) != m) {
          throw Error(ErrorCode::ConfigError, "logistic data has " +
                                                  std::to_string(spec.data.size()) +
                                                  " clients but topology.m = " + std::to_string(m));
        }
        return ObjectiveSet::logistic(std::move(spec));
      }
      if (o.homogeneous) {
        auto base = generate_logistic_problem(1, o.n, o.d, o.spread, o.lambda, o.seed);
        LogisticSpec spec = *base.logistic_spec();
        spec.data.assign(std::size_t(m), spec.data.front());
        return ObjectiveSet::logistic(std::move(spec));
      }
      return generate_logistic_problem(m, o.n, o.d, o.spread, o.lambda, o.seed);
    }
    case ObjectiveChoice::TwoPoint: {
      if (m != 2 || o.d != 1) {
        throw Error(ErrorCode::ConfigError, "objective.kind = two-point needs m = 2 and d = 1");
      }
      const Matrix a = Matrix::Constant(1, 1, o.a);
      return ObjectiveSet::quadratic(
          {{a, a}, {Vector::Constant(1, o.delta), Vector::Constant(1, -o.delta)}});
    }
  }
  throw Error(ErrorCode::ConfigError, "unknown objective");
}

NoiseModel build_noise(const NoiseSection& noise, int m, int d) {
  switch (noise.kind) {
    case NoiseChoice::None:
      return NoiseModel::none();
    case NoiseChoice::Gaussian:
      return NoiseModel::isotropic(m, d, noise.sigma2);
    case NoiseChoice::Minibatch:
      return NoiseModel::minibatch(noise.batch);
  }
  throw Error(ErrorCode::ConfigError, "unknown noise kind");
}

Problem build_problem(const ExperimentConfig& config, TopologyKind kind, int m) {
  config.validate();
  auto w = build_graph(config.topology, kind, m);
  auto obj = build_objective(config.objective, m);
  auto noise = build_noise(config.noise, m, obj.dim());
  noise.validate(obj);
  Stacked theta0(m, obj.dim(), Vector::Constant(Eigen::Index(m) * obj.dim(), config.run.theta0));
  return {std::move(w), std::move(obj), std::move(noise), std::move(theta0)};
}

long resolve_horizon(const RunSection& run, const ObjectiveSet& obj, double gamma) {
  if (run.T) return *run.T;
  const double rate = gamma * obj.mu();
  if (rate >= 1.0) return 1;
  return long(std::ceil(std::log(1e-3) / std::log1p(-rate)));
}

Stacked det_limit(const Problem& p, double gamma) {
  std::optional<Stacked> start;
  if (p.obj.kind() == ObjectiveKind::Quadratic) {
    try {
      start = quad_exact_fixed_point(p.w, p.obj, gamma).theta_det;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::StepTooLarge && e.code() != ErrorCode::SingularMatrix) throw;
    }
  }
  return fixed_point(p.w, p.obj, gamma, 1e-12, 50'000'000, start).theta;
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::Disconnected:
    case ErrorCode::StepTooLarge:
    case ErrorCode::NoConvergence:
      return 2;
    default:
      return 1;
  }
}

int cmd_graph_info(const ExperimentConfig& config, const CommandOptions& options) {
  require_single(config, "graph-info");
  config.validate();
  const int m = config.topology.m.front();
  const auto w = build_graph(config.topology, config.topology.kinds.front(), m);
  const auto& s = w.spectral();
  std::ostringstream csv;
  csv << std::setprecision(17) << "m,lambda2,lambda_min,rho,Lambda,gap\n"
      << m << ',' << s.lambda2 << ',' << s.lambda_min << ',' << s.rho << ',' << s.Lambda << ','
      << s.gap << '\n';
  emit(config, options, "graph_info.csv", csv.str());
  return 0;
}

int cmd_simulate(const ExperimentConfig& config, const CommandOptions& options) {
  require_single(config, "simulate");
  if (config.run.gamma.size() != 1) {
    throw Error(ErrorCode::ConfigError, "simulate: run.gamma takes one value");
  }
  const auto p = build_problem(config, config.topology.kinds.front(), config.topology.m.front());
  const double gamma = config.run.gamma.front();

  RunConfig rc;
  rc.algorithm = config.run.algorithm;
  rc.gamma = gamma;
  rc.T = resolve_horizon(config.run, p.obj, gamma);
  rc.seed = config.run.seed;
  rc.replicates = config.run.replicates;
  rc.burn_in = config.run.burn_in;
  rc.record_every = config.run.record_every;
  rc.coupling = config.run.coupling;
  rc.threads = options.threads;
  rc.validate();
  if (const auto warn = step_size_warning(p.obj, gamma)) errs(options) << "warning: " << *warn << '\n';

  RunRecord record;
  record.m = p.obj.clients();
  record.d = p.obj.dim();
  if (rc.T > 0) {
    const bool rr = rc.algorithm == Algorithm::RR_DGD || rc.algorithm == Algorithm::RR_DSGD;
    // Reference limit: Theta_det, or its extrapolation for RR runs.
    Stacked reference = det_limit(p, gamma);
    if (rr) reference = 2.0 * det_limit(p, 0.5 * gamma) - reference;
    record = run(p.w, p.obj, p.noise, rc, p.theta0, reference);
  }

  int files = 0;
  for (int r = 0; r < rc.replicates; ++r) {
    RunRecord one;
    one.m = record.m;
    one.d = record.d;
    for (const auto& s : record.steps) {
      if (s.replicate == r) one.steps.push_back(s);
    }
    std::ostringstream csv;
    write_run_csv(one, csv);
    auto file = open_output(output_path(config, "replicate_" + std::to_string(r) + ".csv"));
    file << csv.str();
    ++files;
  }
  std::ostringstream agg;
  write_aggregate_csv(record, agg);
  const auto agg_path = output_path(config, "aggregate.csv");
  open_output(agg_path) << agg.str();
  for (const auto& w : record.warnings) errs(options) << "warning: " << w << '\n';
  if (options.out) {
    *options.out << "wrote " << files << " replicate trajectories and " << agg_path.string()
                 << '\n';
  }
  return 0;
}

int cmd_predict(const ExperimentConfig& config, const CommandOptions& options) {
  require_single(config, "predict");
  const auto p = build_problem(config, config.topology.kinds.front(), config.topology.m.front());
  std::ostringstream csv;
  for (std::size_t i = 0; i < config.run.gamma.size(); ++i) {
    const auto report = predict(p.w, p.obj, p.noise, config.run.gamma[i], p.theta0);
    for (const auto& note : report.notes) errs(options) << "note: " << note << '\n';
    std::ostringstream one;
    write_theory_csv(report, one);
    std::string text = one.str();
    // A gamma grid stacks one report per step size under a single header.
    if (i > 0) text.erase(0, text.find('\n') + 1);
    csv << text;
  }
  emit(config, options, "theory.csv", csv.str());
  return 0;
}

std::vector<Claim> compare_claims(const ExperimentConfig& config, TopologyKind kind, int m,
                                  int threads) {
  const auto p = build_problem(config, kind, m);
  const Cell cell = analyze_cell(config, p, config.run.gamma.front(), threads);
  return claims_for_cell(config, p, cell);
}

void write_claims_csv(const std::vector<Claim>& claims, std::ostream& out) {
  out << "claim,predicted,observed,tolerance,status\n" << std::setprecision(17);
  for (const auto& c : claims) {
    out << c.id << ',' << c.predicted << ',' << c.observed << ',' << c.tolerance << ','
        << c.status << '\n';
  }
}

int cmd_compare(const ExperimentConfig& config, const CommandOptions& options) {
  require_single(config, "compare");
  config.validate();
  const auto claims =
      compare_claims(config, config.topology.kinds.front(), config.topology.m.front(), options.threads);
  std::ostringstream csv;
  write_claims_csv(claims, csv);
  emit(config, options, "verdicts.csv", csv.str());
  for (const auto& c : claims) {
    if (c.hard && c.status == "fail") return 2;
  }
  return 0;
}

int cmd_sweep(const ExperimentConfig& config, const CommandOptions& options) {
  config.validate();
  const auto gammas = sweep_gammas(config);
  const auto& kinds = config.topology.kinds;
  const auto& ms = config.topology.m;
  const std::size_t cells = ms.size() * kinds.size() * gammas.size();
  if (cells > std::size_t(kMaxSweepCells)) {
    throw Error(ErrorCode::BudgetExceeded, "sweep: " + std::to_string(cells) + " cells exceed " +
                                               std::to_string(kMaxSweepCells));
  }

  std::ostringstream csv;
  csv << "m,topology,gamma,metric,value\n";
  auto row = [&](const std::string& m, TopologyKind kind, double gamma, const char* metric,
                 double value) {
    csv << m << ',' << to_string(kind) << ',' << fmt17(gamma) << ',' << metric << ','
        << fmt17(value) << '\n';
  };

  for (auto kind : kinds) {
    for (double gamma : gammas) {
      std::vector<double> m_fit, trace_fit;
      for (int m : ms) {
        const auto p = build_problem(config, kind, m);
        const Cell c = analyze_cell(config, p, gamma, options.threads);
        const std::string mm = std::to_string(m);
        row(mm, kind, gamma, "bias_norm", c.bias_norm);
        row(mm, kind, gamma, "bias_norm_pred", c.bias_pred);
        row(mm, kind, gamma, "lemma3_bound", c.lemma3);
        if (c.stochastic) {
          row(mm, kind, gamma, "stationary_trace", c.trace.value);
          row(mm, kind, gamma, "stationary_trace_se", c.trace.std_error);
          row(mm, kind, gamma, "stationary_trace_pred", c.trace_pred);
          if (c.trace.value > 0.0) {
            m_fit.push_back(m);
            trace_fit.push_back(c.trace.value);
          }
        }
      }
      if (m_fit.size() >= 3) {
        try {
          row("all", kind, gamma, "speedup_slope", order_fit(m_fit, trace_fit).slope);
        } catch (const Error& e) {
          errs(options) << "speedup fit skipped: " << e.what() << '\n';
        }
      }
    }
  }
  emit(config, options, "sweep.csv", csv.str());
  return 0;
}

std::vector<std::string> command_names() {
  return {"graph-info", "simulate", "predict", "compare", "sweep"};
}

int run_command(const std::string& name, const ExperimentConfig& config,
                const CommandOptions& options) {
  try {
    if (name == "graph-info") return cmd_graph_info(config, options);
    if (name == "simulate") return cmd_simulate(config, options);
    if (name == "predict") return cmd_predict(config, options);
    if (name == "compare") return cmd_compare(config, options);
    if (name == "sweep") return cmd_sweep(config, options);
    errs(options) << "error: unknown command '" << name << "'\n";
    return 1;
  } catch (const Error& e) {
    errs(options) << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    errs(options) << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace dsgd
