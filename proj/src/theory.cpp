#include "dsgd/theory.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

namespace dsgd {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string num(double v) {
  std::ostringstream s;
  s << std::setprecision(6) << v;
  return s.str();
}

void require_positive_step(double gamma, const char* who) {
  if (!(gamma > 0.0) || !std::isfinite(gamma)) {
    throw Error(ErrorCode::InvalidStep, std::string(who) + ": gamma must be positive");
  }
}

void require_within(double gamma, double limit, const char* who, const char* condition) {
  require_positive_step(gamma, who);
  if (gamma > limit * (1.0 + 1e-12)) {
    throw Error(ErrorCode::StepTooLarge, std::string(who) + ": need " + condition + " = " +
                                             num(limit) + ", got gamma = " + num(gamma));
  }
}

void require_clients(const CommMatrix& w, const ObjectiveSet& obj) {
  if (w.clients() != obj.clients()) {
    throw Error(ErrorCode::ShapeMismatch, "W and the objective disagree on m");
  }
}

// kron(M, I_d).
Matrix lift(const Matrix& mm, int d) {
  const Eigen::Index m = mm.rows();
  Matrix out = Matrix::Zero(m * d, m * d);
  for (Eigen::Index k = 0; k < m; ++k) {
    for (Eigen::Index l = 0; l < m; ++l) {
      out.block(k * d, l * d, d, d).diagonal().setConstant(mm(k, l));
    }
  }
  return out;
}

Matrix inverse_or_throw(const Matrix& a, const char* what) {
  Eigen::FullPivLU<Matrix> lu(a);
  if (!lu.isInvertible() || lu.rcond() < 1e3 * std::numeric_limits<double>::epsilon()) {
    throw Error(ErrorCode::SingularMatrix, std::string("quad_exact_fixed_point: ") + what +
                                               " is numerically singular");
  }
  return lu.inverse();
}

// (I - H) Y, with abar the factorized mean of the client Hessians a_k.
Stacked apply_one_minus_h(const std::vector<Matrix>& a, const Eigen::LLT<Matrix>& abar,
                          const Stacked& y) {
  const int m = y.clients();
  Vector weighted = Vector::Zero(y.dim());
  for (int k = 0; k < m; ++k) weighted += a[std::size_t(k)] * y.block(k);
  const Vector hy = abar.solve(weighted / double(m));
  Stacked out = y;
  out.blocks().colwise() -= hy;
  return out;
}

std::vector<Matrix> hessians_at_optimum(const ObjectiveSet& obj) {
  std::vector<Matrix> a;
  for (int k = 0; k < obj.clients(); ++k) a.push_back(obj.hess_local(k, obj.theta_star()));
  return a;
}

Stacked first_order_coefficient(const CommMatrix& w, const ObjectiveSet& obj) {
  const auto a = hessians_at_optimum(obj);
  const Eigen::LLT<Matrix> abar(obj.mean_hess(obj.theta_star()));
  if (abar.info() != Eigen::Success) {
    throw Error(ErrorCode::NotPositiveDefinite, "mean Hessian at theta* is not PD");
  }
  const Stacked grads = grad_stacked(obj, obj.theta_star_stacked());
  const Stacked g_grads = apply_blockwise(gossip_operator(w), grads);
  return -1.0 * apply_one_minus_h(a, abar, g_grads);
}

double residual_scale(const ObjectiveSet& obj, const CommMatrix& w) {
  const double mu = obj.mu();
  const double L = obj.L();
  const double lam = w.spectral().Lambda;
  const double zeta = obj.zeta_star();
  const double m = obj.clients();
  return (L * L / (mu * mu)) * lam * lam *
         (obj.K3() * zeta * zeta / (mu * std::sqrt(m)) + L * zeta);
}

}  // namespace

double bound_step_limit(const ObjectiveSet& obj, const CommMatrix& w) {
  const double lam = w.spectral().Lambda;
  const double L = obj.L();
  return lam > 0.0 ? std::min(1.0 / (lam * L), 1.0 / L) : 1.0 / L;
}

QuadFixedPoint quad_exact_fixed_point(const CommMatrix& w, const ObjectiveSet& obj, double gamma) {
  require_clients(w, obj);
  const auto* spec = obj.quadratic_spec();
  if (!spec) {
    throw Error(ErrorCode::UnsupportedCombination, "quad_exact_fixed_point needs a quadratic");
  }
  require_positive_step(gamma, "quad_exact_fixed_point");
  const int m = obj.clients();
  const int d = obj.dim();
  const double lam = w.spectral().Lambda;
  const double mu = obj.mu();
  const double L = obj.L();
  const Stacked star = obj.theta_star_stacked();

  QuadFixedPoint out{star, star, Stacked(m, d)};
  if (lam == 0.0) return out;

  const double limit = 2.0 / ((1.0 + L / mu) * L * lam);
  if (gamma >= limit) {
    throw Error(ErrorCode::StepTooLarge, "quad_exact_fixed_point: need γ < 2/((1+L/μ)LΛ) = " +
                                             num(limit) + ", got gamma = " + num(gamma));
  }

  const Eigen::Index n = Eigen::Index(m) * d;
  Matrix a = Matrix::Zero(n, n);
  Matrix abar = Matrix::Zero(d, d);
  for (int k = 0; k < m; ++k) {
    a.block(Eigen::Index(k) * d, Eigen::Index(k) * d, d, d) = spec->A[std::size_t(k)];
    abar += spec->A[std::size_t(k)];
  }
  abar /= double(m);
  const Matrix abar_inv = inverse_or_throw(abar, "mean Hessian");
  Matrix h(n, n);
  for (int k = 0; k < m; ++k) {
    for (int l = 0; l < m; ++l) {
      h.block(Eigen::Index(k) * d, Eigen::Index(l) * d, d, d) =
          abar_inv * spec->A[std::size_t(l)] / double(m);
    }
  }
  const Matrix g = lift(gossip_operator(w), d);
  const Matrix ga = g * a;
  const Matrix id = Matrix::Identity(n, n);
  const Matrix b = inverse_or_throw(id + gamma * ga, "I + γGA") * ga;
  const Matrix inner = inverse_or_throw(id - gamma * b * h, "I - γBH");

  const Vector delta = obj.theta_loc_stacked().values() - star.values();
  const Vector v = inner * (b * delta);
  out.disagreement = Stacked(m, d, gamma * v);
  out.consensus = Stacked(m, d, star.values() - gamma * (h * v));
  out.theta_det = Stacked(m, d, out.consensus.values() + out.disagreement.values());
  return out;
}

QuadFixedPoint quad_exact_fixed_point(const CommMatrix& w, const QuadraticSpec& spec,
                                      double gamma) {
  return quad_exact_fixed_point(w, ObjectiveSet::quadratic(spec), gamma);
}

DetBiasExpansion det_bias_expansion(const CommMatrix& w, const ObjectiveSet& obj, double gamma) {
  require_clients(w, obj);
  require_within(gamma, bound_step_limit(obj, w), "det_bias_expansion", "γ ≤ min(1/(ΛL), 1/L)");
  DetBiasExpansion out;
  out.first_order_term = first_order_coefficient(w, obj);
  out.prediction = obj.theta_star_stacked() + gamma * out.first_order_term;
  out.residual_bound = 0.5 * gamma * gamma * residual_scale(obj, w);
  return out;
}

double lemma3_bound(const ObjectiveSet& obj, const CommMatrix& w, double gamma) {
  require_clients(w, obj);
  require_within(gamma, bound_step_limit(obj, w), "lemma3_bound", "γ ≤ min(1/(ΛL), 1/L)");
  return gamma * obj.L() * w.spectral().Lambda * obj.zeta_star() / obj.mu();
}

double rr_bias_bound(const ObjectiveSet& obj, const CommMatrix& w, double gamma) {
  require_clients(w, obj);
  require_within(gamma, bound_step_limit(obj, w), "rr_bias_bound", "γ ≤ min(1/(ΛL), 1/L)");
  return gamma * gamma * residual_scale(obj, w);
}

Matrix variance_first_order(const ObjectiveSet& obj, const NoiseModel& noise, double gamma) {
  require_positive_step(gamma, "variance_first_order");
  const Vector& star = obj.theta_star();
  const Matrix c = covariance_at(noise, obj, star);
  const Matrix jc = sylvester_solve(obj.mean_hess(star), c);
  const Matrix out = (gamma / obj.clients()) * jc;
  return (out + out.transpose()) / 2.0;
}

Vector mean_third_contract(const ObjectiveSet& obj, const Vector& theta, const Matrix& m,
                           ThirdDerivative method) {
  const int d = obj.dim();
  if (m.rows() != d || m.cols() != d) {
    throw Error(ErrorCode::ShapeMismatch, "mean_third_contract: M must be d x d");
  }
  Vector total = Vector::Zero(d);
  if (method == ThirdDerivative::Analytic) {
    for (int k = 0; k < obj.clients(); ++k) total += obj.third_contract_matrix(k, theta, m);
    return total / double(obj.clients());
  }
  // Central differences of the Hessian along the eigenvectors of M:
  // T = sum_i lambda_i d/ds [Hess(theta + s u_i)] u_i.
  const auto spec = sym_eig(m);
  const double h = std::cbrt(std::numeric_limits<double>::epsilon()) * std::max(1.0, theta.norm());
  for (Eigen::Index i = 0; i < spec.eigenvalues.size(); ++i) {
    const double li = spec.eigenvalues(i);
    if (li == 0.0) continue;
    const Vector u = spec.eigenvectors.col(i);
    const Matrix diff = obj.mean_hess(theta + h * u) - obj.mean_hess(theta - h * u);
    total += li * (diff * u) / (2.0 * h);
  }
  return total;
}

Vector stochastic_bias_first_order(const ObjectiveSet& obj, const NoiseModel& noise, double gamma,
                                   ThirdDerivative method) {
  require_positive_step(gamma, "stochastic_bias_first_order");
  const Vector& star = obj.theta_star();
  const int d = obj.dim();
  if (obj.kind() == ObjectiveKind::Quadratic || noise.is_degenerate()) return Vector::Zero(d);
  const Matrix abar = obj.mean_hess(star);
  const Matrix jc = sylvester_solve(abar, covariance_at(noise, obj, star));
  const Vector t = mean_third_contract(obj, star, jc, method);
  return -(gamma / (2.0 * obj.clients())) * abar.llt().solve(t);
}

NoiseLevels noise_levels(const NoiseModel& noise, const ObjectiveSet& obj, int n_draws,
                         std::uint64_t seed) {
  NoiseLevels out;
  if (noise.is_degenerate()) return out;
  const Stacked star = obj.theta_star_stacked();
  const auto t2 = estimate_tau(noise, obj, star, 2, n_draws, seed);
  const auto t4 = estimate_tau(noise, obj, star, 4, n_draws, seed);
  out.tau2 = t2.exact.value_or(t2.estimate);
  out.tau4 = t4.exact.value_or(t4.estimate);
  return out;
}

namespace {

double b_constant(const ObjectiveSet& obj, const CommMatrix& w, const NoiseLevels& lv,
                  double gamma) {
  const double mu = obj.mu();
  const double L = obj.L();
  const double lam = w.spectral().Lambda;
  const double z2 = obj.zeta_star_sq();
  return (lv.tau4 * lv.tau4 + gamma * gamma * std::pow(L, 4) / (mu * mu) * lam * lam * z2) / mu;
}

double rho_factor(const CommMatrix& w) {
  const double r2 = w.spectral().rho * w.spectral().rho;
  return r2 / (1.0 - r2);
}

double psi0_value(const ObjectiveSet& obj, const CommMatrix& w, const NoiseLevels& lv,
                  double gamma, const Stacked& theta0) {
  const double mu = obj.mu();
  const double L = obj.L();
  const double lam = w.spectral().Lambda;
  const double z2 = obj.zeta_star_sq();
  const double dist2 = (theta0.values() - obj.theta_star_stacked().values()).squaredNorm();
  const double het = gamma * gamma * L * L * lam * lam * z2 / (mu * mu);
  return dist2 + het +
         (gamma / mu) * (lv.tau2 * lv.tau2 + 4.0 * gamma * gamma * std::pow(L, 4) * lam * lam *
                                                 z2 / (mu * mu));
}

}  // namespace

double BoundDiagnostics::transient(long t) const { return std::pow(contraction, double(t)) * psi0; }

double BoundDiagnostics::variance_total() const {
  return var_leading + var_three_halves + var_topology;
}

double BoundDiagnostics::error_total(long t) const {
  return transient(t) + thm_leading + thm_three_halves + thm_heterogeneity + thm_disagreement_B +
         thm_disagreement_noise + thm_five_halves;
}

BoundDiagnostics bound_diagnostics(const ObjectiveSet& obj, const CommMatrix& w,
                                   const NoiseLevels& levels, double gamma,
                                   const Stacked& theta0) {
  require_clients(w, obj);
  const double lam = w.spectral().Lambda;
  const double L = obj.L();
  const double limit = lam > 0.0 ? std::min(1.0 / (lam * L), 1.0 / (10.0 * L)) : 1.0 / (10.0 * L);
  require_within(gamma, limit, "bound_diagnostics", "γ ≤ min(1/(ΛL), 1/(10L))");
  if (theta0.clients() != obj.clients() || theta0.dim() != obj.dim()) {
    throw Error(ErrorCode::ShapeMismatch, "bound_diagnostics: theta0 shape");
  }

  const double mu = obj.mu();
  const double K3 = obj.K3();
  const double m = obj.clients();
  const double t2 = levels.tau2 * levels.tau2;

  BoundDiagnostics out;
  out.gamma = gamma;
  out.tau2 = levels.tau2;
  out.tau4 = levels.tau4;
  out.B = b_constant(obj, w, levels, gamma);
  const double b32 = std::pow(out.B, 1.5);
  const double c_num =
      L * out.B + K3 * b32 * std::sqrt(gamma) + 0.5 * gamma * gamma * K3 * K3 * out.B * out.B + t2;
  out.C = t2 > 0.0 ? c_num / t2 : kInf;
  out.psi0 = psi0_value(obj, w, levels, gamma, theta0);
  out.rho_factor = rho_factor(w);

  out.var_leading = gamma * t2 / (mu * m);
  out.var_three_halves = std::pow(gamma, 1.5) * K3 * b32 / (mu * m);
  // tau2^2 C = c_num, which stays finite when tau2 = 0.
  out.var_topology = gamma * gamma * out.rho_factor * c_num;

  out.contraction = 1.0 - gamma * mu;
  out.thm_leading = out.var_leading;
  out.thm_three_halves = out.var_three_halves;
  out.thm_heterogeneity = gamma * gamma * L * L * lam * lam * obj.zeta_star_sq() / (mu * mu);
  out.thm_disagreement_B = gamma * gamma * L * out.B * out.rho_factor;
  out.thm_disagreement_noise = gamma * gamma * out.rho_factor * t2;
  out.thm_five_halves = std::pow(gamma, 2.5) * out.rho_factor *
                        (K3 * b32 + std::pow(gamma, 1.5) * K3 * K3 * out.B * out.B);
  return out;
}

Schedule recommend_schedule(const ObjectiveSet& obj, const CommMatrix& w,
                            const NoiseLevels& levels, double epsilon, ScheduleVariant variant,
                            const std::optional<Stacked>& theta0) {
  require_clients(w, obj);
  if (!(epsilon > 0.0)) throw Error(ErrorCode::InvalidParam, "recommend_schedule: epsilon > 0");
  const double mu = obj.mu();
  const double L = obj.L();
  const double lam = w.spectral().Lambda;
  const double zeta = obj.zeta_star();
  const double m = obj.clients();
  const double t2 = levels.tau2 * levels.tau2;
  const double rf = rho_factor(w);
  const double het = L * lam * zeta;  // L Lambda zeta
  const double eps_het = variant == ScheduleVariant::RR ? std::sqrt(epsilon) : epsilon;

  // A term whose denominator vanishes does not constrain the step size.
  auto ratio = [](double num, double den) { return den > 0.0 ? num / den : kInf; };

  Schedule out;
  out.gamma_terms = {
      {"1/L", 1.0 / L},
      {"mu/(L^2 Lambda zeta)", ratio(mu, L * het)},
      {"mu m eps^2/tau2^2", ratio(mu * m * epsilon * epsilon, t2)},
      {"mu eps/(L Lambda zeta)", ratio(mu * eps_het, het)},
  };
  double gamma0 = kInf;
  for (const auto& t : out.gamma_terms) gamma0 = std::min(gamma0, t.value);
  const double B = b_constant(obj, w, levels, gamma0);
  out.gamma_terms.push_back(
      {"eps ((1-rho^2)/(L B rho^2))^{1/2}", rf > 0.0 ? epsilon / std::sqrt(L * B * rf) : kInf});
  out.gamma_terms.push_back(
      {"eps ((1-rho^2)/(tau2^2 rho^2))^{1/2}", rf * t2 > 0.0 ? epsilon / std::sqrt(t2 * rf) : kInf});
  out.gamma = kInf;
  for (const auto& t : out.gamma_terms) out.gamma = std::min(out.gamma, t.value);

  auto finite_or_zero = [](double v) { return std::isfinite(v) ? v : 0.0; };
  out.horizon_terms = {
      {"L/mu", L / mu},
      {"L^2 Lambda zeta/mu^2", L * het / (mu * mu)},
      {"tau2^2/(mu^2 m eps^2)", t2 / (mu * mu * m * epsilon * epsilon)},
      {"L Lambda zeta/(mu^2 eps)", het / (mu * mu * eps_het)},
      {"(tau2/(mu eps)) (rho^2/(1-rho^2))^{1/2}", levels.tau2 / (mu * epsilon) * std::sqrt(rf)},
  };
  out.horizon_factor = 0.0;
  for (auto& t : out.horizon_terms) {
    t.value = finite_or_zero(t.value);
    out.horizon_factor = std::max(out.horizon_factor, t.value);
  }
  const Stacked start = theta0 ? *theta0 : Stacked(obj.clients(), obj.dim());
  const double psi0 = psi0_value(obj, w, levels, out.gamma, start);
  out.log_factor = std::max(1.0, std::log(psi0 / epsilon));
  out.T = out.horizon_factor * out.log_factor;
  return out;
}

TheoryReport predict(const CommMatrix& w, const ObjectiveSet& obj, const NoiseModel& noise,
                     double gamma, const Stacked& theta0) {
  require_clients(w, obj);
  require_positive_step(gamma, "predict");
  TheoryReport r;
  r.gamma = gamma;
  r.m = obj.clients();
  r.d = obj.dim();
  r.profile = w.spectral();
  r.mu = obj.mu();
  r.L = obj.L();
  r.K3 = obj.K3();
  r.zeta = obj.zeta_star();
  r.theta_star = obj.theta_star_stacked();

  const double limit = bound_step_limit(obj, w);
  const bool in_range = gamma <= limit * (1.0 + 1e-12);
  r.bias_first_order = gamma * first_order_coefficient(w, obj);
  if (obj.kind() == ObjectiveKind::Quadratic) {
    r.theta_det_pred = quad_exact_fixed_point(w, obj, gamma).theta_det;
    r.theta_det_exact = true;
  } else {
    r.theta_det_pred = det_bias_expansion(w, obj, gamma).prediction;
  }
  if (in_range) {
    r.det_residual_bound = det_bias_expansion(w, obj, gamma).residual_bound;
    r.lemma3_bound = lemma3_bound(obj, w, gamma);
    r.rr_bias_bound = rr_bias_bound(obj, w, gamma);
  } else {
    r.det_residual_bound = r.lemma3_bound = r.rr_bias_bound = kNaN;
    r.notes.push_back("first-order bounds skipped: need γ ≤ min(1/(ΛL), 1/L) = " + num(limit));
  }
  r.variance_first_order = variance_first_order(obj, noise, gamma);
  r.stochastic_bias_first_order = stochastic_bias_first_order(obj, noise, gamma);
  try {
    r.diagnostics = bound_diagnostics(obj, w, noise_levels(noise, obj), gamma, theta0);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::StepTooLarge) throw;
    r.notes.push_back(std::string("bound diagnostics skipped: ") + e.what());
  }
  return r;
}

void write_theory_csv(const TheoryReport& r, std::ostream& out) {
  out << "quantity,value\n" << std::setprecision(17);
  auto row = [&](const std::string& name, double v) { out << name << ',' << v << '\n'; };
  auto stacked = [&](const std::string& name, const Stacked& s) {
    for (int k = 0; k < s.clients(); ++k) {
      for (int i = 0; i < s.dim(); ++i) {
        row(name + '.' + std::to_string(k) + '.' + std::to_string(i), s.block(k)(i));
      }
    }
  };
  row("gamma", r.gamma);
  row("m", r.m);
  row("d", r.d);
  row("lambda2", r.profile.lambda2);
  row("lambda_min", r.profile.lambda_min);
  row("rho", r.profile.rho);
  row("Lambda", r.profile.Lambda);
  row("gap", r.profile.gap);
  row("mu", r.mu);
  row("L", r.L);
  row("K3", r.K3);
  row("zeta", r.zeta);
  row("theta_det_exact", r.theta_det_exact ? 1.0 : 0.0);
  stacked("theta_star", r.theta_star);
  stacked("theta_det_pred", r.theta_det_pred);
  stacked("bias_first_order", r.bias_first_order);
  row("det_residual_bound", r.det_residual_bound);
  row("lemma3_bound", r.lemma3_bound);
  row("rr_bias_bound", r.rr_bias_bound);
  for (Eigen::Index i = 0; i < r.variance_first_order.rows(); ++i) {
    for (Eigen::Index j = 0; j < r.variance_first_order.cols(); ++j) {
      row("variance_first_order." + std::to_string(i) + '.' + std::to_string(j),
          r.variance_first_order(i, j));
    }
  }
  for (Eigen::Index i = 0; i < r.stochastic_bias_first_order.size(); ++i) {
    row("stochastic_bias_first_order." + std::to_string(i), r.stochastic_bias_first_order(i));
  }
  if (r.diagnostics) {
    const auto& g = *r.diagnostics;
    row("tau2", g.tau2);
    row("tau4", g.tau4);
    row("B", g.B);
    row("C", g.C);
    row("psi0", g.psi0);
    row("variance.leading", g.var_leading);
    row("variance.three_halves", g.var_three_halves);
    row("variance.topology", g.var_topology);
    row("error.contraction", g.contraction);
    row("error.leading", g.thm_leading);
    row("error.three_halves", g.thm_three_halves);
    row("error.heterogeneity", g.thm_heterogeneity);
    row("error.disagreement_B", g.thm_disagreement_B);
    row("error.disagreement_noise", g.thm_disagreement_noise);
    row("error.five_halves", g.thm_five_halves);
  }
}

void write_matrix_csv(const Matrix& m, std::ostream& out) {
  out << std::setprecision(17);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) out << (j ? "," : "") << m(i, j);
    out << '\n';
  }
}

}  // namespace dsgd
