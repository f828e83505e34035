#include "dsgd/dynamics.hpp"

#include <cmath>
#include <exception>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

namespace dsgd {

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::DGD: return "dgd";
    case Algorithm::DSGD: return "dsgd";
    case Algorithm::RR_DGD: return "rr-dgd";
    case Algorithm::RR_DSGD: return "rr-dsgd";
  }
  return "?";
}

std::string to_string(Coupling c) {
  return c == Coupling::SharedNoise ? "shared" : "independent";
}

void RunConfig::validate() const {
  if (!(gamma > 0.0) || !std::isfinite(gamma)) {
    throw Error(ErrorCode::InvalidStep, "run: gamma must be positive");
  }
  if (T < 0) throw Error(ErrorCode::InvalidParam, "run: T must be >= 0");
  if (replicates < 1) throw Error(ErrorCode::InvalidParam, "run: replicates must be >= 1");
  if (record_every < 1) throw Error(ErrorCode::InvalidParam, "run: record_every must be >= 1");
  if (burn_in && (*burn_in < 0 || (T > 0 && *burn_in >= T))) {
    throw Error(ErrorCode::InvalidParam, "run: burn_in must satisfy 0 <= burn_in < T");
  }
  if (threads < 1) throw Error(ErrorCode::InvalidParam, "run: threads must be >= 1");
}

long resolved_burn_in(const RunConfig& config, const ObjectiveSet& obj) {
  if (config.burn_in) return std::min(*config.burn_in, config.T);
  const bool rr = config.algorithm == Algorithm::RR_DGD || config.algorithm == Algorithm::RR_DSGD;
  const double rate = (rr ? 0.5 : 1.0) * config.gamma * obj.mu();
  if (rate >= 1.0) return std::min(1L, config.T);
  const double steps = std::ceil(std::log(1e-6) / std::log1p(-rate));
  if (!std::isfinite(steps) || steps >= double(config.T)) return config.T;
  return long(steps);
}

std::optional<std::string> step_size_warning(const ObjectiveSet& obj, double gamma) {
  if (gamma * obj.L() > 1.0) {
    std::ostringstream msg;
    msg << "warning: gamma = " << gamma << " exceeds 1/L = " << 1.0 / obj.L()
        << "; contraction to the DGD fixed point is only guaranteed for gamma <= 1/L";
    return msg.str();
  }
  return std::nullopt;
}

namespace {

void check_shape(const ObjectiveSet& obj, const Stacked& theta, const char* who) {
  if (theta.clients() != obj.clients() || theta.dim() != obj.dim()) {
    throw Error(ErrorCode::ShapeMismatch, std::string(who) + ": point is (" +
                                              std::to_string(theta.clients()) + "," +
                                              std::to_string(theta.dim()) + "), objective is (" +
                                              std::to_string(obj.clients()) + "," +
                                              std::to_string(obj.dim()) + ")");
  }
}

void check_mixing(const CommMatrix& w, const ObjectiveSet& obj) {
  if (w.clients() != obj.clients()) {
    throw Error(ErrorCode::ShapeMismatch, "W has " + std::to_string(w.clients()) +
                                              " clients, objective has " +
                                              std::to_string(obj.clients()));
  }
}

// One in-place Adapt-then-Combine update. `local` is scratch space.
void step_in_place(const CommMatrix& w, const ObjectiveSet& obj, const NoiseModel* noise,
                   double gamma, Stacked& theta, Stacked& local, const NoiseStream* stream,
                   std::uint64_t t) {
  local = theta;
  for (int k = 0; k < obj.clients(); ++k) {
    local.block(k) -= gamma * obj.grad_local(k, theta.block(k));
  }
  if (noise && noise->kind() != NoiseKind::None) {
    local.values() -= gamma * sample_noise(*noise, obj, theta, *stream, t).values();
  }
  theta.blocks().noalias() = local.blocks() * w.matrix().transpose();
}

}  // namespace

Stacked dgd_step(const CommMatrix& w, const ObjectiveSet& obj, double gamma, const Stacked& theta) {
  check_mixing(w, obj);
  check_shape(obj, theta, "dgd_step");
  Stacked next = theta;
  Stacked scratch(theta.clients(), theta.dim());
  step_in_place(w, obj, nullptr, gamma, next, scratch, nullptr, 0);
  return next;
}

Stacked dsgd_step(const CommMatrix& w, const ObjectiveSet& obj, const NoiseModel& noise,
                  double gamma, const Stacked& theta, const NoiseStream& stream, std::uint64_t t) {
  check_mixing(w, obj);
  check_shape(obj, theta, "dsgd_step");
  Stacked next = theta;
  Stacked scratch(theta.clients(), theta.dim());
  step_in_place(w, obj, &noise, gamma, next, scratch, &stream, t);
  return next;
}

double fixed_point_residual(const CommMatrix& w, const ObjectiveSet& obj, double gamma,
                            const Stacked& theta) {
  const Stacked disagreement = theta - mix(w, theta);
  const Stacked pushed = mix(w, grad_stacked(obj, theta));
  return (disagreement.values() + gamma * pushed.values()).norm();
}

FixedPointResult fixed_point(const CommMatrix& w, const ObjectiveSet& obj, double gamma,
                             double tol, long max_iter, const std::optional<Stacked>& start) {
  check_mixing(w, obj);
  if (!(gamma > 0.0)) throw Error(ErrorCode::InvalidStep, "fixed_point: gamma must be positive");
  Stacked theta = start ? *start : obj.theta_star_stacked();
  check_shape(obj, theta, "fixed_point");
  Stacked next = theta;
  Stacked scratch(theta.clients(), theta.dim());
  const double target = tol * gamma * obj.mu();
  constexpr double kEps = std::numeric_limits<double>::epsilon();
  for (long iter = 1; iter <= max_iter; ++iter) {
    step_in_place(w, obj, nullptr, gamma, next, scratch, nullptr, 0);
    const double delta = (next.values() - theta.values()).norm();
    theta.values() = next.values();
    if (!theta.all_finite()) {
      throw Error(ErrorCode::NoConvergence, "fixed_point: iterates diverged");
    }
    const double floor = 64.0 * kEps * std::max(1.0, theta.norm());
    if (delta <= std::max(target, floor)) {
      FixedPointResult out{theta, 0.0, iter};
      out.residual = fixed_point_residual(w, obj, gamma, theta);
      return out;
    }
  }
  throw Error(ErrorCode::NoConvergence,
              "fixed_point: no convergence after " + std::to_string(max_iter) + " iterations");
}

void parallel_for(int count, int threads, const std::function<void(int)>& job) {
  const int workers = std::max(1, std::min(threads, count));
  if (workers == 1) {
    for (int i = 0; i < count; ++i) job(i);
    return;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(count));
  std::vector<std::thread> pool;
  for (int tid = 0; tid < workers; ++tid) {
    pool.emplace_back([&, tid] {
      for (int i = tid; i < count; i += workers) {
        try {
          job(i);
        } catch (...) {
          errors[std::size_t(i)] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

namespace {

struct ReplicateOutput {
  std::vector<RecordedStep> steps;
  Stacked final_iterate;
  MomentSums moments;
};

ReplicateOutput run_replicate(const CommMatrix& w, const ObjectiveSet& obj,
                              const NoiseModel& noise, const RunConfig& config,
                              const Stacked& theta0, const std::optional<Stacked>& theta_det,
                              const Stacked& reference, long burn_in, int replicate) {
  const bool rr = config.algorithm == Algorithm::RR_DGD || config.algorithm == Algorithm::RR_DSGD;
  const bool stochastic =
      config.algorithm == Algorithm::DSGD || config.algorithm == Algorithm::RR_DSGD;
  const NoiseModel* noise_ptr = stochastic ? &noise : nullptr;
  const auto r = std::uint64_t(replicate);
  const bool shared = config.coupling == Coupling::SharedNoise;
  const NoiseStream stream_full(config.seed, rr && !shared ? 2 * r : r);
  const NoiseStream stream_half(config.seed, rr && !shared ? 2 * r + 1 : r);

  const int m = obj.clients();
  const Vector& theta_star = obj.theta_star();
  Stacked full = theta0;
  Stacked half = theta0;
  Stacked scratch(m, obj.dim());
  Stacked current = theta0;

  ReplicateOutput out;
  const Eigen::Index n = theta0.size();
  out.moments.reference = reference.values();
  out.moments.sum = Vector::Zero(n);
  out.moments.outer = Matrix::Zero(n, n);
  Vector centered(n);

  auto record = [&](long t) {
    RecordedStep s;
    s.t = t;
    s.replicate = replicate;
    const auto blocks = current.blocks();
    const Vector mean = blocks.rowwise().mean();
    double client_sum = 0.0;
    double opt_sq = 0.0;
    double dis_sq = 0.0;
    for (int k = 0; k < m; ++k) {
      const double e = (blocks.col(k) - theta_star).squaredNorm();
      opt_sq += e;
      client_sum += std::sqrt(e);
      dis_sq += (blocks.col(k) - mean).squaredNorm();
    }
    s.dist_opt = std::sqrt(opt_sq);
    s.client_err = client_sum / m;
    s.consensus_err = std::sqrt(double(m)) * (mean - theta_star).norm();
    s.disagreement_norm = std::sqrt(dis_sq);
    s.dist_det = theta_det ? (current.values() - theta_det->values()).norm()
                           : std::numeric_limits<double>::quiet_NaN();
    out.steps.push_back(s);
  };

  record(0);
  for (long t = 0; t < config.T; ++t) {
    step_in_place(w, obj, noise_ptr, config.gamma, full, scratch, &stream_full, std::uint64_t(t));
    if (rr) {
      step_in_place(w, obj, noise_ptr, 0.5 * config.gamma, half, scratch, &stream_half,
                    std::uint64_t(t));
      current.values() = 2.0 * half.values() - full.values();
    } else {
      current.values() = full.values();
    }
    const long step = t + 1;
    if (step > burn_in) {
      centered = current.values() - reference.values();
      out.moments.sum += centered;
      out.moments.outer.selfadjointView<Eigen::Lower>().rankUpdate(centered);
      ++out.moments.count;
    }
    if (step % config.record_every == 0 || step == config.T) record(step);
  }
  out.moments.outer = out.moments.outer.selfadjointView<Eigen::Lower>();
  out.final_iterate = current;
  return out;
}

}  // namespace

RunRecord run(const CommMatrix& w, const ObjectiveSet& obj, const NoiseModel& noise,
              const RunConfig& config, const Stacked& theta0,
              const std::optional<Stacked>& theta_det) {
  config.validate();
  check_mixing(w, obj);
  check_shape(obj, theta0, "run");
  if (theta_det) check_shape(obj, *theta_det, "run");
  const bool stochastic =
      config.algorithm == Algorithm::DSGD || config.algorithm == Algorithm::RR_DSGD;
  if (stochastic) noise.validate(obj);

  RunRecord record;
  record.m = obj.clients();
  record.d = obj.dim();
  record.T = config.T;
  record.burn_in = resolved_burn_in(config, obj);
  record.has_det = theta_det.has_value();
  if (auto warn = step_size_warning(obj, config.gamma)) record.warnings.push_back(*warn);

  const Stacked reference = theta_det ? *theta_det : obj.theta_star_stacked();
  std::vector<ReplicateOutput> outputs(std::size_t(config.replicates));
  parallel_for(config.replicates, config.threads, [&](int r) {
    outputs[std::size_t(r)] =
        run_replicate(w, obj, noise, config, theta0, theta_det, reference, record.burn_in, r);
  });
  for (auto& o : outputs) {
    record.steps.insert(record.steps.end(), o.steps.begin(), o.steps.end());
    record.finals.push_back(std::move(o.final_iterate));
    record.moments.push_back(std::move(o.moments));
  }
  return record;
}

RunRecord rr_run(const CommMatrix& w, const ObjectiveSet& obj, const NoiseModel& noise,
                 RunConfig config, const Stacked& theta0, const std::optional<Stacked>& theta_det) {
  if (config.algorithm == Algorithm::DGD) config.algorithm = Algorithm::RR_DGD;
  if (config.algorithm == Algorithm::DSGD) config.algorithm = Algorithm::RR_DSGD;
  return run(w, obj, noise, config, theta0, theta_det);
}

CoupledTrace coupled_run(const CommMatrix& w, const ObjectiveSet& obj, const NoiseModel& noise,
                         double gamma, long T, const Stacked& theta_a, const Stacked& theta_b,
                         std::uint64_t seed, int replicates, int threads) {
  check_mixing(w, obj);
  check_shape(obj, theta_a, "coupled_run");
  check_shape(obj, theta_b, "coupled_run");
  noise.validate(obj);
  const double L = noise.cocoercivity_constant(obj);
  if (!(gamma > 0.0) || gamma * L >= 2.0) {
    std::ostringstream msg;
    msg << "coupled_run: need 0 < gamma < 2/L = " << 2.0 / L << ", got " << gamma;
    throw Error(ErrorCode::InvalidStep, msg.str());
  }
  if (replicates < 1 || T < 0) throw Error(ErrorCode::InvalidParam, "coupled_run: bad sizes");

  std::vector<std::vector<double>> traces(static_cast<std::size_t>(replicates));
  parallel_for(replicates, threads, [&](int r) {
    const NoiseStream stream(seed, std::uint64_t(r));
    Stacked a = theta_a;
    Stacked b = theta_b;
    Stacked scratch(a.clients(), a.dim());
    auto& trace = traces[std::size_t(r)];
    trace.reserve(std::size_t(T) + 1);
    trace.push_back((a.values() - b.values()).squaredNorm());
    for (long t = 0; t < T; ++t) {
      step_in_place(w, obj, &noise, gamma, a, scratch, &stream, std::uint64_t(t));
      step_in_place(w, obj, &noise, gamma, b, scratch, &stream, std::uint64_t(t));
      trace.push_back((a.values() - b.values()).squaredNorm());
    }
  });

  CoupledTrace out;
  out.replicates = replicates;
  out.mean_sq_dist.assign(std::size_t(T) + 1, 0.0);
  out.std_error.assign(std::size_t(T) + 1, 0.0);
  for (std::size_t t = 0; t <= std::size_t(T); ++t) {
    double sum = 0.0;
    double sum_sq = 0.0;
    for (const auto& tr : traces) {
      sum += tr[t];
      sum_sq += tr[t] * tr[t];
    }
    const double mean = sum / replicates;
    out.mean_sq_dist[t] = mean;
    if (replicates > 1) {
      const double var = std::max(0.0, (sum_sq - replicates * mean * mean) / (replicates - 1));
      out.std_error[t] = std::sqrt(var / replicates);
    }
  }
  return out;
}

void write_run_csv(const RunRecord& record, std::ostream& out) {
  out << "t,replicate,dist_opt,dist_det,consensus_err,disagreement_norm\n";
  out << std::setprecision(17);
  for (const auto& s : record.steps) {
    out << s.t << ',' << s.replicate << ',' << s.dist_opt << ',' << s.dist_det << ','
        << s.consensus_err << ',' << s.disagreement_norm << '\n';
  }
}

void write_aggregate_csv(const RunRecord& record, std::ostream& out) {
  out << "t,replicates,mean,std\n";
  out << std::setprecision(17);
  std::map<long, std::vector<double>> by_t;
  for (const auto& s : record.steps) by_t[s.t].push_back(s.client_err);
  for (const auto& [t, values] : by_t) {
    const double n = double(values.size());
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    const double sd = values.size() > 1 ? std::sqrt(var / (n - 1)) : 0.0;
    out << t << ',' << values.size() << ',' << mean << ',' << sd << '\n';
  }
}

}  // namespace dsgd
