#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "dsgd/dynamics.hpp"

namespace dsgd {

struct Estimate {
  double value = 0.0;
  double std_error = 0.0;  ///< NaN with fewer than two replicates
};

/// Stationary mean and Theta_det-centered second moment of a DSGD chain,
/// averaged over time (past burn-in) and replicates.
struct StationaryMoments {
  int m = 0;
  int d = 0;
  long n_effective = 0;  ///< post-burn-in samples summed over replicates
  int replicates = 0;
  Stacked mean;
  Stacked mean_std_error;
  Matrix cov;            ///< md x md; block (k, l) is [Sigma]_{k,l}
  Matrix cov_std_error;
  std::vector<Vector> replicate_means;
  std::vector<Matrix> replicate_covs;

  Matrix block(int k, int l) const;
  Matrix block_std_error(int k, int l) const;
};

/// Pools the moment sums of every replicate of every record and recenters
/// them at theta_det. Throws InsufficientSamples below 100 samples.
StationaryMoments stationary_moments(const std::vector<const RunRecord*>& records,
                                     const Stacked& theta_det);
StationaryMoments stationary_moments(const RunRecord& record, const Stacked& theta_det);

/// (1/m) sum_k tr [Sigma]_{k,k} with its across-replicate standard error.
Estimate mean_diagonal_trace(const StationaryMoments& moments);

/// Mean over replicates of f(replicate mean, replicate covariance).
Estimate replicate_statistic(const StationaryMoments& moments,
                             const std::function<double(const Vector&, const Matrix&)>& f);

struct OrderFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

/// Least-squares fit of log y on log x. Needs at least three points with
/// positive coordinates and distinct x.
OrderFit order_fit(const std::vector<double>& xs, const std::vector<double>& ys);

struct SpeedupRow {
  int m = 0;
  Estimate trace;      ///< measured (1/m) sum_k tr [Sigma]_{k,k}
  double predicted = 0.0;  ///< d-trace of (gamma/m) J C
};

struct SpeedupResult {
  std::vector<SpeedupRow> rows;
  bool skipped = false;  ///< zero noise: nothing to fit
  std::string status;
  OrderFit fit;
};

struct SpeedupOptions {
  long T = 200000;
  int replicates = 8;
  std::uint64_t seed = 0;
  int threads = 1;
};

/// Measures the stationary variance for each m in m_list, with the problem,
/// graph and noise built by the factories, and fits log trace on log m.
SpeedupResult speedup_check(const std::function<ObjectiveSet(int)>& objective_for,
                            const std::function<CommMatrix(int)>& graph_for,
                            const std::function<NoiseModel(int)>& noise_for, double gamma,
                            const std::vector<int>& m_list, const SpeedupOptions& options = {});

struct ContractionEstimate {
  std::vector<double> ratios;  ///< D_{t+1} / D_t while D_t is above the floor
  double max_ratio = 0.0;
  long collapsed_at = -1;      ///< first t with D_t <= floor, or -1
  bool within = true;          ///< max_ratio <= factor + slack
  std::string verdict;
};

/// Per-step ratios of squared coupled distances against a contraction factor.
ContractionEstimate contraction_estimate(const std::vector<double>& sq_dist, double factor,
                                         double slack = 1e-12, double floor = 0.0);

/// Checks mean_t <= factor^t D_0 + n_sigma se_t for every t; returns the
/// largest excess (<= 0 when the envelope holds).
double envelope_excess(const CoupledTrace& trace, double factor, double n_sigma);

/// CSV `k,l,i,j,value,stderr` over all covariance blocks.
void write_moments_csv(const StationaryMoments& moments, std::ostream& out);

}  // namespace dsgd
