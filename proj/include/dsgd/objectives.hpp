#pragma once

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <variant>
#include <vector>

#include "dsgd/matops.hpp"
#include "dsgd/stacked.hpp"

namespace dsgd {

enum class ObjectiveKind { Quadratic, Logistic };

/// f_k(theta) = 1/2 (theta - c_k)^T A_k (theta - c_k) with A_k SPD.
struct QuadraticSpec {
  std::vector<Matrix> A;        ///< curvature per client
  std::vector<Vector> centers;  ///< local minimizers theta*_k
};

/// f_k(theta) = (1/n) sum_i log(1 + exp(<theta, x_ki>)) + (lambda/2) ||theta||^2.
/// Implemented exactly in this unlabeled form.
struct LogisticSpec {
  std::vector<Matrix> data;  ///< per client, one sample per row (n_k x d)
  double lambda_reg = 0.1;
};

/// The m local objectives plus the quantities every downstream formula
/// consumes: the global optimum theta*, mu, L, K3 and the heterogeneity zeta*.
/// Immutable once constructed.
class ObjectiveSet {
 public:
  static ObjectiveSet quadratic(QuadraticSpec spec);
  static ObjectiveSet logistic(LogisticSpec spec, double optimum_tol = 1e-12);

  ObjectiveKind kind() const { return kind_; }
  int clients() const { return m_; }
  int dim() const { return d_; }

  const QuadraticSpec* quadratic_spec() const { return std::get_if<QuadraticSpec>(&spec_); }
  const LogisticSpec* logistic_spec() const { return std::get_if<LogisticSpec>(&spec_); }

  double value_local(int k, const Vector& theta) const;
  Vector grad_local(int k, const Vector& theta) const;
  Matrix hess_local(int k, const Vector& theta) const;
  /// grad^3 f_k(theta)[u, u].
  Vector third_contract_local(int k, const Vector& theta, const Vector& u) const;
  /// a -> sum_{b,c} grad^3 f_k(theta)_{abc} M_bc.
  Vector third_contract_matrix(int k, const Vector& theta, const Matrix& m) const;

  double value(const Vector& theta) const;  ///< f = (1/m) sum_k f_k
  Vector mean_grad(const Vector& theta) const;
  Matrix mean_hess(const Vector& theta) const;

  const Vector& theta_star() const { return theta_star_; }
  Stacked theta_star_stacked() const { return Stacked::replicate(m_, theta_star_); }
  double mu() const { return mu_; }
  double L() const { return L_; }
  double K3() const { return K3_; }
  double zeta_star_sq() const { return zeta_sq_; }
  double zeta_star() const { return std::sqrt(zeta_sq_); }
  /// Stacked local minimizers (quadratic only).
  Stacked theta_loc_stacked() const;

 private:
  ObjectiveSet() = default;
  void check_client(int k) const;
  void finalize(double optimum_tol);

  ObjectiveKind kind_ = ObjectiveKind::Quadratic;
  std::variant<QuadraticSpec, LogisticSpec> spec_;
  int m_ = 0;
  int d_ = 0;
  Vector theta_star_;
  double mu_ = 0.0;
  double L_ = 0.0;
  double K3_ = 0.0;
  double zeta_sq_ = 0.0;
};

/// Block k equals grad f_k(theta_k).
Stacked grad_stacked(const ObjectiveSet& obj, const Stacked& theta);

/// theta* with ||mean gradient|| <= tol: exact linear solve for quadratics,
/// damped Newton (backtracking on f, at most 200 iterations) for logistic.
Vector solve_global_optimum(const ObjectiveSet& obj, double tol = 1e-12);

/// zeta*^2 = sum_k ||grad f_k(theta*)||^2.
double heterogeneity(const ObjectiveSet& obj);

/// Logistic data with client means on a circle of radius `spread` in the
/// first two coordinates and identity covariance; deterministic in `seed`.
ObjectiveSet generate_logistic_problem(int m, int n, int d, double spread, double lambda_reg,
                                       std::uint64_t seed);

/// Random quadratic clients: A_k = Q_k diag(eigs) Q_k^T with eigenvalues
/// uniform in [eig_min, eig_max], minimizers N(0, spread^2 I). With
/// `homogeneous` every client copies client 0.
ObjectiveSet generate_quadratic_problem(int m, int d, double eig_min, double eig_max,
                                        double spread, std::uint64_t seed,
                                        bool homogeneous = false);

/// CSV `client,index,x_0,...,x_{d-1}` at 17 significant digits.
void write_logistic_csv(const LogisticSpec& spec, std::ostream& out);
LogisticSpec read_logistic_csv(std::istream& in, double lambda_reg);

}  // namespace dsgd
