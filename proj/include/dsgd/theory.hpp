#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dsgd/noise.hpp"
#include "dsgd/objectives.hpp"
#include "dsgd/stacked.hpp"
#include "dsgd/topology.hpp"

// Closed-form predictions and explicit bounds for DGD / DSGD / RR iterates.
// Notation: A = diag of client Hessians at theta*, Abar their mean,
// H X = 1 (x) Abar^{-1} (1/m) sum_l A_l X_l, G = (I - W)^+ W lifted block-wise.

namespace dsgd {

struct QuadFixedPoint {
  Stacked theta_det;
  Stacked consensus;     ///< P Theta_det
  Stacked disagreement;  ///< Q Theta_det
};

/// Exact DGD fixed point of a quadratic problem. Requires
/// gamma < 2/((1 + L/mu) L Lambda); Lambda = 0 returns Theta*.
QuadFixedPoint quad_exact_fixed_point(const CommMatrix& w, const ObjectiveSet& obj, double gamma);
QuadFixedPoint quad_exact_fixed_point(const CommMatrix& w, const QuadraticSpec& spec,
                                      double gamma);

/// Largest gamma accepted by the first-order bounds: min(1/(Lambda L), 1/L).
double bound_step_limit(const ObjectiveSet& obj, const CommMatrix& w);

struct DetBiasExpansion {
  Stacked prediction;        ///< Theta* - gamma (I - H) G grad F(Theta*)
  Stacked first_order_term;  ///< -(I - H) G grad F(Theta*), the gamma-linear coefficient
  double residual_bound = 0.0;
};

DetBiasExpansion det_bias_expansion(const CommMatrix& w, const ObjectiveSet& obj, double gamma);

/// gamma L Lambda zeta* / mu.
double lemma3_bound(const ObjectiveSet& obj, const CommMatrix& w, double gamma);

/// gamma^2 (L/mu)^2 Lambda^2 (K3 zeta*^2 / (mu sqrt m) + L zeta*).
double rr_bias_bound(const ObjectiveSet& obj, const CommMatrix& w, double gamma);

/// (gamma/m) J C(theta*): the common first-order block of the stationary
/// covariance, J solving Abar X + X Abar = C.
Matrix variance_first_order(const ObjectiveSet& obj, const NoiseModel& noise, double gamma);

enum class ThirdDerivative { Analytic, FiniteDifference };

/// sum_{b,c} (mean_k grad^3 f_k(theta))_{abc} M_bc for symmetric M.
Vector mean_third_contract(const ObjectiveSet& obj, const Vector& theta, const Matrix& m,
                           ThirdDerivative method = ThirdDerivative::Analytic);

/// -(gamma/2m) Abar^{-1} grad^3 f(theta*)[J C(theta*)], the same for every client.
Vector stochastic_bias_first_order(const ObjectiveSet& obj, const NoiseModel& noise, double gamma,
                                   ThirdDerivative method = ThirdDerivative::Analytic);

/// tau_p = E[||E(Theta*)||^p]^{1/p} for p = 2, 4; exact for Gaussian noise.
struct NoiseLevels {
  double tau2 = 0.0;
  double tau4 = 0.0;
};
NoiseLevels noise_levels(const NoiseModel& noise, const ObjectiveSet& obj, int n_draws = 20000,
                         std::uint64_t seed = 0x7A0ull);

/// Individual terms of the stationary-variance bound and the non-asymptotic
/// error bound, all with absolute constants set to 1.
struct BoundDiagnostics {
  double gamma = 0.0;
  double tau2 = 0.0;
  double tau4 = 0.0;
  double B = 0.0;
  double C = 0.0;
  double psi0 = 0.0;
  double rho_factor = 0.0;  ///< rho^2 / (1 - rho^2)

  double var_leading = 0.0;       ///< gamma tau2^2 / (mu m)
  double var_three_halves = 0.0;  ///< gamma^{3/2} K3 B^{3/2} / (mu m)
  double var_topology = 0.0;      ///< gamma^2 rho^2/(1-rho^2) tau2^2 C

  double contraction = 0.0;          ///< 1 - gamma mu
  double thm_leading = 0.0;          ///< gamma tau2^2 / (mu m)
  double thm_three_halves = 0.0;     ///< gamma^{3/2} K3 B^{3/2} / (mu m)
  double thm_heterogeneity = 0.0;    ///< gamma^2 L^2 Lambda^2 zeta^2 / mu^2
  double thm_disagreement_B = 0.0;   ///< gamma^2 L B rho^2/(1-rho^2)
  double thm_disagreement_noise = 0.0;  ///< gamma^2 rho^2 tau2^2/(1-rho^2)
  double thm_five_halves = 0.0;  ///< gamma^{5/2} rho^2/(1-rho^2)(K3 B^{3/2} + gamma^{3/2} K3^2 B^2)

  double transient(long t) const;  ///< (1 - gamma mu)^t psi0
  double variance_total() const;
  double error_total(long t) const;
};

BoundDiagnostics bound_diagnostics(const ObjectiveSet& obj, const CommMatrix& w,
                                   const NoiseLevels& levels, double gamma, const Stacked& theta0);

enum class ScheduleVariant { DSGD, RR };

struct ScheduleTerm {
  std::string name;
  double value = 0.0;  ///< +inf for dropped step-size terms, 0 for dropped horizon terms
};

/// Step size and horizon from the sample-complexity bounds, constants
/// set to 1. B is evaluated at the smallest B-free step-size term, and the
/// log factor log(psi0/epsilon) is floored at 1.
struct Schedule {
  double gamma = 0.0;
  double T = 0.0;
  double horizon_factor = 0.0;
  double log_factor = 0.0;
  std::vector<ScheduleTerm> gamma_terms;
  std::vector<ScheduleTerm> horizon_terms;
};

Schedule recommend_schedule(const ObjectiveSet& obj, const CommMatrix& w,
                            const NoiseLevels& levels, double epsilon, ScheduleVariant variant,
                            const std::optional<Stacked>& theta0 = std::nullopt);

struct TheoryReport {
  double gamma = 0.0;
  int m = 0;
  int d = 0;
  SpectralProfile profile;
  double mu = 0.0;
  double L = 0.0;
  double K3 = 0.0;
  double zeta = 0.0;

  Stacked theta_star;
  Stacked theta_det_pred;
  bool theta_det_exact = false;  ///< closed form (quadratic) rather than first-order
  Stacked bias_first_order;      ///< gamma-linear term -gamma (I - H) G grad F(Theta*)
  double det_residual_bound = 0.0;
  double lemma3_bound = 0.0;
  double rr_bias_bound = 0.0;
  Matrix variance_first_order;
  Vector stochastic_bias_first_order;
  std::optional<BoundDiagnostics> diagnostics;
  std::vector<std::string> notes;  ///< quantities skipped because gamma is out of range
};

/// Everything above for one (W, objective, noise, gamma). The theta_det
/// prediction is mandatory (StepTooLarge propagates); bounds whose step-size
/// range excludes gamma are reported as NaN with a note.
TheoryReport predict(const CommMatrix& w, const ObjectiveSet& obj, const NoiseModel& noise,
                     double gamma, const Stacked& theta0);

/// `quantity,value` rows at 17 significant digits.
void write_theory_csv(const TheoryReport& report, std::ostream& out);
/// Row-major matrix CSV, one line per row, no header.
void write_matrix_csv(const Matrix& m, std::ostream& out);

}  // namespace dsgd
