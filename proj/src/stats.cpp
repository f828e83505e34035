#include "dsgd/stats.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <set>

#include "dsgd/theory.hpp"

namespace dsgd {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

template <typename T>
void mean_and_se(const std::vector<T>& xs, T& mean, T& se) {
  const double r = double(xs.size());
  mean = xs.front();
  for (std::size_t i = 1; i < xs.size(); ++i) mean += xs[i];
  mean /= r;
  if (xs.size() < 2) {
    se = mean;
    se.setConstant(kNaN);
    return;
  }
  T var = (xs.front() - mean).cwiseAbs2();
  for (std::size_t i = 1; i < xs.size(); ++i) var += (xs[i] - mean).cwiseAbs2();
  se = (var / (r - 1.0) / r).cwiseSqrt();
}

}  // namespace

Matrix StationaryMoments::block(int k, int l) const {
  return cov.block(Eigen::Index(k) * d, Eigen::Index(l) * d, d, d);
}

Matrix StationaryMoments::block_std_error(int k, int l) const {
  return cov_std_error.block(Eigen::Index(k) * d, Eigen::Index(l) * d, d, d);
}

StationaryMoments stationary_moments(const std::vector<const RunRecord*>& records,
                                     const Stacked& theta_det) {
  StationaryMoments out;
  out.m = theta_det.clients();
  out.d = theta_det.dim();
  const Vector& c = theta_det.values();
  for (const RunRecord* rec : records) {
    if (rec->m != out.m || rec->d != out.d) {
      throw Error(ErrorCode::ShapeMismatch, "stationary_moments: record shape differs from theta_det");
    }
    for (const auto& s : rec->moments) {
      if (s.count == 0) continue;
      const double n = double(s.count);
      const Vector delta = s.reference - c;
      out.replicate_means.push_back(s.reference + s.sum / n);
      Matrix second = s.outer + s.sum * delta.transpose() + delta * s.sum.transpose() +
                      n * delta * delta.transpose();
      second /= n;
      out.replicate_covs.push_back((second + second.transpose()) / 2.0);
      out.n_effective += s.count;
    }
  }
  if (out.n_effective < 100) {
    throw Error(ErrorCode::InsufficientSamples,
                "stationary_moments: " + std::to_string(out.n_effective) +
                    " post-burn-in samples, need at least 100 (raise run.T or lower run.burn_in)");
  }
  out.replicates = int(out.replicate_means.size());
  Vector mean, mean_se;
  mean_and_se(out.replicate_means, mean, mean_se);
  out.mean = Stacked(out.m, out.d, mean);
  out.mean_std_error = Stacked(out.m, out.d, mean_se);
  mean_and_se(out.replicate_covs, out.cov, out.cov_std_error);
  return out;
}

StationaryMoments stationary_moments(const RunRecord& record, const Stacked& theta_det) {
  return stationary_moments(std::vector<const RunRecord*>{&record}, theta_det);
}

Estimate replicate_statistic(const StationaryMoments& moments,
                             const std::function<double(const Vector&, const Matrix&)>& f) {
  std::vector<Vector> values;
  for (std::size_t r = 0; r < moments.replicate_means.size(); ++r) {
    values.push_back(Vector::Constant(1, f(moments.replicate_means[r], moments.replicate_covs[r])));
  }
  Vector mean, se;
  mean_and_se(values, mean, se);
  return {mean(0), se(0)};
}

Estimate mean_diagonal_trace(const StationaryMoments& moments) {
  const int m = moments.m;
  const int d = moments.d;
  return replicate_statistic(moments, [m, d](const Vector&, const Matrix& cov) {
    double total = 0.0;
    for (int k = 0; k < m; ++k) {
      total += cov.block(Eigen::Index(k) * d, Eigen::Index(k) * d, d, d).trace();
    }
    return total / m;
  });
}

OrderFit order_fit(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size()) {
    throw Error(ErrorCode::ShapeMismatch, "order_fit: xs and ys differ in length");
  }
  if (xs.size() < 3) throw Error(ErrorCode::TooFewPoints, "order_fit: need at least 3 points");
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!(xs[i] > 0.0) || !(ys[i] > 0.0)) {
      throw Error(ErrorCode::NonPositive, "order_fit: log-log fit needs positive values");
    }
  }
  if (std::set<double>(xs.begin(), xs.end()).size() != xs.size()) {
    throw Error(ErrorCode::InvalidParam, "order_fit: x values must be distinct");
  }
  const Eigen::Index n = Eigen::Index(xs.size());
  Matrix design(n, 2);
  Vector y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    design(i, 0) = std::log(xs[std::size_t(i)]);
    design(i, 1) = 1.0;
    y(i) = std::log(ys[std::size_t(i)]);
  }
  const Vector coef = design.colPivHouseholderQr().solve(y);
  const Vector resid = y - design * coef;
  const double ss_tot = (y.array() - y.mean()).square().sum();
  OrderFit out;
  out.slope = coef(0);
  out.intercept = coef(1);
  out.r2 = ss_tot > 0.0 ? 1.0 - resid.squaredNorm() / ss_tot : 1.0;
  return out;
}

SpeedupResult speedup_check(const std::function<ObjectiveSet(int)>& objective_for,
                            const std::function<CommMatrix(int)>& graph_for,
                            const std::function<NoiseModel(int)>& noise_for, double gamma,
                            const std::vector<int>& m_list, const SpeedupOptions& options) {
  SpeedupResult out;
  std::vector<double> ms, traces;
  for (int m : m_list) {
    const ObjectiveSet obj = objective_for(m);
    const CommMatrix w = graph_for(m);
    const NoiseModel noise = noise_for(m);
    SpeedupRow row;
    row.m = m;
    if (noise.is_degenerate()) {
      row.trace = {0.0, 0.0};
      out.rows.push_back(row);
      out.skipped = true;
      continue;
    }
    row.predicted = variance_first_order(obj, noise, gamma).trace();
    const Stacked det = fixed_point(w, obj, gamma).theta;
    RunConfig cfg;
    cfg.algorithm = Algorithm::DSGD;
    cfg.gamma = gamma;
    cfg.T = options.T;
    cfg.seed = options.seed;
    cfg.replicates = options.replicates;
    cfg.record_every = options.T > 0 ? options.T : 1;
    cfg.threads = options.threads;
    const RunRecord rec = run(w, obj, noise, cfg, det, det);
    row.trace = mean_diagonal_trace(stationary_moments(rec, det));
    out.rows.push_back(row);
    ms.push_back(m);
    traces.push_back(row.trace.value);
  }
  if (out.skipped) {
    out.status = "skipped: zero noise";
    return out;
  }
  out.fit = order_fit(ms, traces);
  out.status = "ok";
  return out;
}

ContractionEstimate contraction_estimate(const std::vector<double>& sq_dist, double factor,
                                         double slack, double floor) {
  ContractionEstimate out;
  for (std::size_t t = 0; t + 1 < sq_dist.size(); ++t) {
    if (!(sq_dist[t] > floor)) {
      out.collapsed_at = long(t);
      break;
    }
    const double r = sq_dist[t + 1] / sq_dist[t];
    out.ratios.push_back(r);
    out.max_ratio = std::max(out.max_ratio, r);
  }
  if (out.ratios.empty() && !sq_dist.empty() && !(sq_dist.front() > floor)) {
    out.collapsed_at = 0;
    out.verdict = "collapsed at t=0";
    return out;
  }
  out.within = out.max_ratio <= factor + slack;
  out.verdict = out.within ? "pass" : "fail";
  return out;
}

double envelope_excess(const CoupledTrace& trace, double factor, double n_sigma) {
  if (trace.mean_sq_dist.empty()) return 0.0;
  const double d0 = trace.mean_sq_dist.front();
  double worst = -std::numeric_limits<double>::infinity();
  double env = d0;
  for (std::size_t t = 0; t < trace.mean_sq_dist.size(); ++t) {
    const double allowed = env + n_sigma * trace.std_error[t];
    worst = std::max(worst, trace.mean_sq_dist[t] - allowed);
    env *= factor;
  }
  return worst;
}

void write_moments_csv(const StationaryMoments& mo, std::ostream& out) {
  out << "k,l,i,j,value,stderr\n" << std::setprecision(17);
  for (int k = 0; k < mo.m; ++k) {
    for (int l = 0; l < mo.m; ++l) {
      for (int i = 0; i < mo.d; ++i) {
        for (int j = 0; j < mo.d; ++j) {
          const Eigen::Index r = Eigen::Index(k) * mo.d + i;
          const Eigen::Index c = Eigen::Index(l) * mo.d + j;
          out << k << ',' << l << ',' << i << ',' << j << ',' << mo.cov(r, c) << ','
              << mo.cov_std_error(r, c) << '\n';
        }
      }
    }
  }
}

}  // namespace dsgd
