#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dsgd/noise.hpp"
#include "dsgd/objectives.hpp"
#include "dsgd/stacked.hpp"
#include "dsgd/topology.hpp"

namespace dsgd {

enum class Algorithm { DGD, DSGD, RR_DGD, RR_DSGD };
enum class Coupling { Independent, SharedNoise };

std::string to_string(Algorithm a);
std::string to_string(Coupling c);

struct RunConfig {
  Algorithm algorithm = Algorithm::DSGD;
  double gamma = 1e-3;
  long T = 1000;
  std::uint64_t seed = 0;
  int replicates = 1;
  /// Steps discarded before accumulating stationary statistics; nullopt picks
  /// ceil(ln(1e-6) / ln(1 - gamma mu)) (using gamma/2 for RR).
  std::optional<long> burn_in;
  long record_every = 1;
  Coupling coupling = Coupling::SharedNoise;
  int threads = 1;

  void validate() const;
};

/// Burn-in actually used by a run (never above T).
long resolved_burn_in(const RunConfig& config, const ObjectiveSet& obj);

struct RecordedStep {
  long t = 0;
  int replicate = 0;
  double dist_opt = 0.0;           ///< ||Theta_t - Theta*||
  double dist_det = 0.0;           ///< ||Theta_t - Theta_det||, NaN without Theta_det
  double consensus_err = 0.0;      ///< ||P Theta_t - Theta*||
  double disagreement_norm = 0.0;  ///< ||Q Theta_t||
  double client_err = 0.0;         ///< (1/m) sum_k ||theta_k - theta*||
};

/// Running sums of (Theta_t - reference) and its outer products over the
/// post-burn-in steps of one chain.
struct MomentSums {
  long count = 0;
  Vector reference;
  Vector sum;
  Matrix outer;
};

struct RunRecord {
  int m = 0;
  int d = 0;
  long T = 0;
  long burn_in = 0;
  bool has_det = false;
  std::vector<RecordedStep> steps;  ///< replicate-major, t increasing
  std::vector<Stacked> finals;      ///< final iterate per replicate
  std::vector<MomentSums> moments;  ///< one per replicate
  std::vector<std::string> warnings;
};

/// Returns a warning when gamma exceeds 1/L (the 1 - gamma mu contraction no
/// longer guaranteed) but is still below 2/L.
std::optional<std::string> step_size_warning(const ObjectiveSet& obj, double gamma);

/// Theta <- W (Theta - gamma grad F(Theta)).
Stacked dgd_step(const CommMatrix& w, const ObjectiveSet& obj, double gamma, const Stacked& theta);

/// Theta <- W (Theta - gamma (grad F(Theta) + E_{t+1}(Theta))): local step
/// first, then one gossip round.
Stacked dsgd_step(const CommMatrix& w, const ObjectiveSet& obj, const NoiseModel& noise,
                  double gamma, const Stacked& theta, const NoiseStream& stream, std::uint64_t t);

struct FixedPointResult {
  Stacked theta;
  double residual = 0.0;  ///< ||(I - W) Theta + gamma W grad F(Theta)||
  long iterations = 0;
};

/// Iterates dgd_step until ||Theta_{t+1} - Theta_t|| <= tol gamma mu, so that
/// the distance to the fixed point is about tol. The threshold is floored at
/// 64 eps max(1, ||Theta||): below that the update is round-off.
FixedPointResult fixed_point(const CommMatrix& w, const ObjectiveSet& obj, double gamma,
                             double tol = 1e-12, long max_iter = 50'000'000,
                             const std::optional<Stacked>& start = std::nullopt);

/// ||(I - W) Theta + gamma W grad F(Theta)||.
double fixed_point_residual(const CommMatrix& w, const ObjectiveSet& obj, double gamma,
                            const Stacked& theta);

/// Runs the configured algorithm from theta0 for every replicate. Replicate r
/// draws from stream (seed, r); RR runs keep a gamma and a gamma/2 chain and
/// record 2 Theta^{gamma/2} - Theta^gamma. Moment sums are centered at
/// theta_det when given, else at Theta*.
RunRecord run(const CommMatrix& w, const ObjectiveSet& obj, const NoiseModel& noise,
              const RunConfig& config, const Stacked& theta0,
              const std::optional<Stacked>& theta_det = std::nullopt);

/// run() with the algorithm switched to its Richardson-Romberg variant.
RunRecord rr_run(const CommMatrix& w, const ObjectiveSet& obj, const NoiseModel& noise,
                 RunConfig config, const Stacked& theta0,
                 const std::optional<Stacked>& theta_det = std::nullopt);

struct CoupledTrace {
  std::vector<double> mean_sq_dist;  ///< E-hat ||Theta^a_t - Theta^b_t||^2, t = 0..T
  std::vector<double> std_error;     ///< across replicates
  int replicates = 0;
};

/// Two DSGD chains driven by the same noise draws (synchronous coupling).
/// Requires gamma < 2/L with L the co-coercivity constant of the noisy maps.
CoupledTrace coupled_run(const CommMatrix& w, const ObjectiveSet& obj, const NoiseModel& noise,
                         double gamma, long T, const Stacked& theta_a, const Stacked& theta_b,
                         std::uint64_t seed, int replicates = 1, int threads = 1);

/// CSV `t,replicate,dist_opt,dist_det,consensus_err,disagreement_norm`.
void write_run_csv(const RunRecord& record, std::ostream& out);
/// CSV `t,replicates,mean,std` of (1/m) sum_k ||theta_k - theta*|| across replicates.
void write_aggregate_csv(const RunRecord& record, std::ostream& out);

/// Runs `count` jobs on up to `threads` workers; job i writes only its own slot.
void parallel_for(int count, int threads, const std::function<void(int)>& job);

}  // namespace dsgd
