#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "dsgd/objectives.hpp"
#include "dsgd/rng.hpp"
#include "dsgd/stacked.hpp"

namespace dsgd {

enum class NoiseKind { None, AdditiveGaussian, Minibatch };

/// Stochastic-gradient noise. Draws are zero-mean, i.i.d. in time and
/// independent across clients.
///  - AdditiveGaussian: eps_k ~ N(0, C_k), independent of the iterate.
///  - Minibatch (logistic only): gradient of a size-b subsample drawn without
///    replacement minus the full local gradient.
class NoiseModel {
 public:
  static NoiseModel none() { return NoiseModel(); }
  static NoiseModel gaussian(std::vector<Matrix> client_covariances);
  static NoiseModel isotropic(int m, int d, double sigma2);
  static NoiseModel minibatch(int batch_size);

  NoiseKind kind() const { return kind_; }
  int batch_size() const { return batch_; }
  const std::vector<Matrix>& covariances() const { return cov_; }
  bool is_degenerate() const;

  /// Co-coercivity constant of every realized stochastic gradient map. For
  /// minibatches this can exceed obj.L(), since a subsample may be more
  /// curved than the full local objective.
  double cocoercivity_constant(const ObjectiveSet& obj) const;

  void validate(const ObjectiveSet& obj) const;

  /// Per-client Gaussian factor F_k with F_k F_k^T = C_k.
  const std::vector<Matrix>& factors() const { return factor_; }

 private:
  NoiseKind kind_ = NoiseKind::None;
  int batch_ = 0;
  std::vector<Matrix> cov_;
  std::vector<Matrix> factor_;
};

/// The random stream one chain consumes: a pure function of (seed, run_id).
/// Step t, client k always gets the same draw.
class NoiseStream {
 public:
  NoiseStream(std::uint64_t seed, std::uint64_t run_id)
      : gaussian_(seed, run_id, Purpose::Noise), batch_(seed, run_id, Purpose::Minibatch) {}

  const CounterRng& gaussian() const { return gaussian_; }
  const CounterRng& minibatch() const { return batch_; }

 private:
  CounterRng gaussian_;
  CounterRng batch_;
};

/// One draw of the stacked noise E_{t+1}(Theta).
Stacked sample_noise(const NoiseModel& model, const ObjectiveSet& obj, const Stacked& theta,
                     const NoiseStream& stream, std::uint64_t t);

/// C(theta) = (1/m) sum_k E[eps_k(theta) eps_k(theta)^T], exact.
Matrix covariance_at(const NoiseModel& model, const ObjectiveSet& obj, const Vector& theta);

struct TauEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
  std::optional<double> exact;  ///< closed form, AdditiveGaussian only
};

/// Monte-Carlo estimate of E[||E(Theta*)||^p]^{1/p} for p in {2, 4}.
TauEstimate estimate_tau(const NoiseModel& model, const ObjectiveSet& obj,
                         const Stacked& theta_star, int p, int n_draws,
                         std::uint64_t seed = 0x7A0ull);

}  // namespace dsgd
