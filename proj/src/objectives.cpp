#include "dsgd/objectives.hpp"

#include <iomanip>
#include <istream>
#include <map>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>

#include "dsgd/rng.hpp"

namespace dsgd {

namespace {

// sup_z |sigma''(z)| = sup |sigma'(z)(1 - 2 sigma(z))| = 1/(6 sqrt 3).
const double kLogisticThirdConst = 1.0 / (6.0 * std::sqrt(3.0));

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

void check_theta(const Vector& theta, int d, const char* who) {
  if (theta.size() != d) {
    throw Error(ErrorCode::ShapeMismatch, std::string(who) + ": expected dimension " +
                                              std::to_string(d) + ", got " +
                                              std::to_string(theta.size()));
  }
}

}  // namespace

ObjectiveSet ObjectiveSet::quadratic(QuadraticSpec spec) {
  if (spec.A.empty() || spec.A.size() != spec.centers.size()) {
    throw Error(ErrorCode::InvalidParam, "quadratic: need one (A_k, theta*_k) pair per client");
  }
  const int d = int(spec.centers.front().size());
  if (d < 1) throw Error(ErrorCode::InvalidSize, "quadratic: dimension must be >= 1");
  double mu = std::numeric_limits<double>::infinity();
  double L = 0.0;
  for (std::size_t k = 0; k < spec.A.size(); ++k) {
    if (spec.A[k].rows() != d || spec.A[k].cols() != d || spec.centers[k].size() != d) {
      throw Error(ErrorCode::ShapeMismatch, "quadratic: client " + std::to_string(k) +
                                                " has inconsistent dimensions");
    }
    const auto eig = sym_eig(spec.A[k]);
    if (eig.eigenvalues.minCoeff() <= 0.0) {
      throw Error(ErrorCode::NotPositiveDefinite,
                  "quadratic: A_" + std::to_string(k) + " is not positive definite");
    }
    spec.A[k] = (0.5 * (spec.A[k] + spec.A[k].transpose())).eval();
    mu = std::min(mu, eig.eigenvalues.minCoeff());
    L = std::max(L, eig.eigenvalues.maxCoeff());
  }
  ObjectiveSet obj;
  obj.kind_ = ObjectiveKind::Quadratic;
  obj.m_ = int(spec.A.size());
  obj.d_ = d;
  obj.spec_ = std::move(spec);
  obj.mu_ = mu;
  obj.L_ = L;
  obj.K3_ = 0.0;
  obj.finalize(1e-12);
  return obj;
}

ObjectiveSet ObjectiveSet::logistic(LogisticSpec spec, double optimum_tol) {
  if (spec.data.empty()) throw Error(ErrorCode::InvalidParam, "logistic: no clients");
  if (!(spec.lambda_reg > 0.0)) {
    throw Error(ErrorCode::InvalidParam, "logistic: lambda must be positive");
  }
  const int d = int(spec.data.front().cols());
  if (d < 1) throw Error(ErrorCode::InvalidSize, "logistic: dimension must be >= 1");
  double max_second_moment = 0.0;
  double max_norm = 0.0;
  for (std::size_t k = 0; k < spec.data.size(); ++k) {
    const Matrix& x = spec.data[k];
    if (x.cols() != d || x.rows() < 1) {
      throw Error(ErrorCode::ShapeMismatch,
                  "logistic: client " + std::to_string(k) + " data has wrong shape");
    }
    if (!x.allFinite()) throw Error(ErrorCode::InvalidParam, "logistic: non-finite data");
    const Matrix second = x.transpose() * x / double(x.rows());
    max_second_moment = std::max(max_second_moment, sym_eig(second).eigenvalues(0));
    max_norm = std::max(max_norm, x.rowwise().norm().maxCoeff());
  }
  ObjectiveSet obj;
  obj.kind_ = ObjectiveKind::Logistic;
  obj.m_ = int(spec.data.size());
  obj.d_ = d;
  obj.mu_ = spec.lambda_reg;
  obj.L_ = spec.lambda_reg + 0.25 * max_second_moment;
  obj.K3_ = kLogisticThirdConst * max_norm * max_norm * max_norm;
  obj.spec_ = std::move(spec);
  obj.finalize(optimum_tol);
  return obj;
}

void ObjectiveSet::finalize(double optimum_tol) {
  theta_star_ = solve_global_optimum(*this, optimum_tol);
  zeta_sq_ = heterogeneity(*this);
}

void ObjectiveSet::check_client(int k) const {
  if (k < 0 || k >= m_) {
    throw Error(ErrorCode::IndexOutOfRange,
                "client " + std::to_string(k) + " outside 0.." + std::to_string(m_ - 1));
  }
}

double ObjectiveSet::value_local(int k, const Vector& theta) const {
  check_client(k);
  check_theta(theta, d_, "value_local");
  if (const auto* q = quadratic_spec()) {
    const Vector diff = theta - q->centers[k];
    return 0.5 * diff.dot(q->A[k] * diff);
  }
  const auto& s = *logistic_spec();
  const Vector z = s.data[k] * theta;
  double total = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) total += softplus(z(i));
  return total / double(z.size()) + 0.5 * s.lambda_reg * theta.squaredNorm();
}

Vector ObjectiveSet::grad_local(int k, const Vector& theta) const {
  check_client(k);
  check_theta(theta, d_, "grad_local");
  if (const auto* q = quadratic_spec()) return q->A[k] * (theta - q->centers[k]);
  const auto& s = *logistic_spec();
  const Matrix& x = s.data[k];
  const Vector z = x * theta;
  const Vector sig = z.unaryExpr(&sigmoid);
  return x.transpose() * sig / double(x.rows()) + s.lambda_reg * theta;
}

Matrix ObjectiveSet::hess_local(int k, const Vector& theta) const {
  check_client(k);
  check_theta(theta, d_, "hess_local");
  if (const auto* q = quadratic_spec()) return q->A[k];
  const auto& s = *logistic_spec();
  const Matrix& x = s.data[k];
  const Vector z = x * theta;
  const Vector w = z.unaryExpr([](double v) {
    const double sg = sigmoid(v);
    return sg * (1.0 - sg);
  });
  Matrix h = x.transpose() * w.asDiagonal() * x / double(x.rows());
  h.diagonal().array() += s.lambda_reg;
  return h;
}

Vector ObjectiveSet::third_contract_local(int k, const Vector& theta, const Vector& u) const {
  check_client(k);
  check_theta(theta, d_, "third_contract_local");
  check_theta(u, d_, "third_contract_local");
  if (quadratic_spec()) return Vector::Zero(d_);
  const Matrix& x = logistic_spec()->data[k];
  const Vector z = x * theta;
  const Vector xu = x * u;
  Vector coeff(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const double sg = sigmoid(z(i));
    coeff(i) = sg * (1.0 - sg) * (1.0 - 2.0 * sg) * xu(i) * xu(i);
  }
  return x.transpose() * coeff / double(x.rows());
}

Vector ObjectiveSet::third_contract_matrix(int k, const Vector& theta, const Matrix& m) const {
  check_client(k);
  check_theta(theta, d_, "third_contract_matrix");
  if (m.rows() != d_ || m.cols() != d_) {
    throw Error(ErrorCode::ShapeMismatch, "third_contract_matrix: M must be d x d");
  }
  if (quadratic_spec()) return Vector::Zero(d_);
  const Matrix& x = logistic_spec()->data[k];
  const Vector z = x * theta;
  Vector coeff(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const double sg = sigmoid(z(i));
    coeff(i) = sg * (1.0 - sg) * (1.0 - 2.0 * sg) * x.row(i).dot(m * x.row(i).transpose());
  }
  return x.transpose() * coeff / double(x.rows());
}

double ObjectiveSet::value(const Vector& theta) const {
  double total = 0.0;
  for (int k = 0; k < m_; ++k) total += value_local(k, theta);
  return total / m_;
}

Vector ObjectiveSet::mean_grad(const Vector& theta) const {
  Vector g = Vector::Zero(d_);
  for (int k = 0; k < m_; ++k) g += grad_local(k, theta);
  return g / double(m_);
}

Matrix ObjectiveSet::mean_hess(const Vector& theta) const {
  Matrix h = Matrix::Zero(d_, d_);
  for (int k = 0; k < m_; ++k) h += hess_local(k, theta);
  return h / double(m_);
}

Stacked ObjectiveSet::theta_loc_stacked() const {
  const auto* q = quadratic_spec();
  if (!q) {
    throw Error(ErrorCode::UnsupportedCombination, "local minimizers are stored for quadratics only");
  }
  Stacked out(m_, d_);
  for (int k = 0; k < m_; ++k) out.block(k) = q->centers[k];
  return out;
}

Stacked grad_stacked(const ObjectiveSet& obj, const Stacked& theta) {
  if (theta.clients() != obj.clients() || theta.dim() != obj.dim()) {
    throw Error(ErrorCode::ShapeMismatch, "grad_stacked: point shape does not match objective");
  }
  Stacked out(obj.clients(), obj.dim());
  for (int k = 0; k < obj.clients(); ++k) out.block(k) = obj.grad_local(k, theta.block(k));
  return out;
}

Vector solve_global_optimum(const ObjectiveSet& obj, double tol) {
  const int d = obj.dim();
  const int m = obj.clients();
  if (const auto* q = obj.quadratic_spec()) {
    Matrix abar = Matrix::Zero(d, d);
    Vector rhs = Vector::Zero(d);
    for (int k = 0; k < m; ++k) {
      abar += q->A[k];
      rhs += q->A[k] * q->centers[k];
    }
    return abar.llt().solve(rhs);
  }

  constexpr int kMaxIter = 200;
  Vector theta = Vector::Zero(d);
  double f = obj.value(theta);
  for (int iter = 0; iter < kMaxIter; ++iter) {
    const Vector g = obj.mean_grad(theta);
    if (g.norm() <= tol) return theta;
    const Vector step = obj.mean_hess(theta).llt().solve(g);
    double scale = 1.0;
    const double slope = g.dot(step);
    Vector trial = theta - step;
    double f_trial = obj.value(trial);
    // Armijo backtracking; near the optimum round-off makes f flat, so accept
    // the full Newton step once the decrease is below resolution.
    while (f_trial > f - 1e-4 * scale * slope && scale > 1e-10 &&
           std::abs(f_trial - f) > 1e-15 * std::max(1.0, std::abs(f))) {
      scale *= 0.5;
      trial = theta - scale * step;
      f_trial = obj.value(trial);
    }
    theta = trial;
    f = f_trial;
  }
  if (obj.mean_grad(theta).norm() <= tol) return theta;
  throw Error(ErrorCode::NoConvergence, "solve_global_optimum: Newton exceeded 200 iterations");
}

double heterogeneity(const ObjectiveSet& obj) {
  double total = 0.0;
  for (int k = 0; k < obj.clients(); ++k) {
    total += obj.grad_local(k, obj.theta_star()).squaredNorm();
  }
  return total;
}

ObjectiveSet generate_logistic_problem(int m, int n, int d, double spread, double lambda_reg,
                                       std::uint64_t seed) {
  if (m < 1 || n < 1 || d < 1) {
    throw Error(ErrorCode::InvalidParam, "generate_logistic_problem: m, n, d must be >= 1");
  }
  if (!(lambda_reg > 0.0)) {
    throw Error(ErrorCode::InvalidParam, "generate_logistic_problem: lambda must be > 0");
  }
  if (!(spread >= 0.0)) {
    throw Error(ErrorCode::InvalidParam, "generate_logistic_problem: spread must be >= 0");
  }
  const CounterRng rng(seed, 0, Purpose::Data);
  LogisticSpec spec;
  spec.lambda_reg = lambda_reg;
  std::vector<double> z(d);
  for (int k = 0; k < m; ++k) {
    Vector center = Vector::Zero(d);
    const double angle = 2.0 * std::numbers::pi * k / m;
    center(0) = spread * std::cos(angle);
    if (d > 1) center(1) = spread * std::sin(angle);
    Matrix x(n, d);
    for (int i = 0; i < n; ++i) {
      rng.normals(std::uint64_t(i), std::uint32_t(k), z);
      for (int j = 0; j < d; ++j) x(i, j) = center(j) + z[j];
    }
    spec.data.push_back(std::move(x));
  }
  return ObjectiveSet::logistic(std::move(spec));
}

ObjectiveSet generate_quadratic_problem(int m, int d, double eig_min, double eig_max,
                                        double spread, std::uint64_t seed, bool homogeneous) {
  if (m < 1 || d < 1) {
    throw Error(ErrorCode::InvalidParam, "generate_quadratic_problem: m, d must be >= 1");
  }
  if (!(eig_min > 0.0) || eig_max < eig_min) {
    throw Error(ErrorCode::InvalidParam,
                "generate_quadratic_problem: need 0 < eig_min <= eig_max");
  }
  const CounterRng rng(seed, 1, Purpose::Data);
  QuadraticSpec spec;
  std::vector<double> buf(std::size_t(d) * d + 2 * d);
  for (int k = 0; k < m; ++k) {
    const int src = homogeneous ? 0 : k;
    rng.normals(0, std::uint32_t(src), buf);
    const Matrix gauss = Eigen::Map<const Matrix>(buf.data(), d, d);
    const Matrix q = Eigen::HouseholderQR<Matrix>(gauss).householderQ();
    Vector eig(d);
    rng.uniforms(1, std::uint32_t(src), std::span<double>(buf.data(), d));
    for (int j = 0; j < d; ++j) eig(j) = eig_min + (eig_max - eig_min) * buf[j];
    rng.normals(2, std::uint32_t(src), std::span<double>(buf.data(), d));
    Vector center = spread * Eigen::Map<const Vector>(buf.data(), d);
    Matrix a = q * eig.asDiagonal() * q.transpose();
    spec.A.push_back(0.5 * (a + a.transpose()));
    spec.centers.push_back(std::move(center));
  }
  return ObjectiveSet::quadratic(std::move(spec));
}

void write_logistic_csv(const LogisticSpec& spec, std::ostream& out) {
  const int d = spec.data.empty() ? 0 : int(spec.data.front().cols());
  out << "client,index";
  for (int j = 0; j < d; ++j) out << ",x_" << j;
  out << '\n';
  out << std::setprecision(17);
  for (std::size_t k = 0; k < spec.data.size(); ++k) {
    for (Eigen::Index i = 0; i < spec.data[k].rows(); ++i) {
      out << k << ',' << i;
      for (int j = 0; j < d; ++j) out << ',' << spec.data[k](i, j);
      out << '\n';
    }
  }
}

LogisticSpec read_logistic_csv(std::istream& in, double lambda_reg) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::IoError, "dataset CSV: empty input");
  int d = 0;
  {
    std::istringstream header(line);
    std::string field;
    int col = 0;
    while (std::getline(header, field, ',')) {
      if (col >= 2) {
        if (field != "x_" + std::to_string(col - 2)) {
          throw Error(ErrorCode::IoError, "dataset CSV: unexpected header column " + field);
        }
        ++d;
      }
      ++col;
    }
  }
  if (d < 1) throw Error(ErrorCode::IoError, "dataset CSV: no feature columns");
  std::map<int, std::vector<std::vector<double>>> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string field;
    std::vector<double> values;
    while (std::getline(fields, field, ',')) values.push_back(std::stod(field));
    if (int(values.size()) != d + 2) {
      throw Error(ErrorCode::IoError, "dataset CSV line " + std::to_string(line_no) +
                                          ": expected " + std::to_string(d + 2) + " fields");
    }
    rows[int(values[0])].emplace_back(values.begin() + 2, values.end());
  }
  LogisticSpec spec;
  spec.lambda_reg = lambda_reg;
  int expected = 0;
  for (auto& [client, samples] : rows) {
    if (client != expected++) throw Error(ErrorCode::IoError, "dataset CSV: client ids not contiguous");
    Matrix x(Eigen::Index(samples.size()), d);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      for (int j = 0; j < d; ++j) x(Eigen::Index(i), j) = samples[i][j];
    }
    spec.data.push_back(std::move(x));
  }
  return spec;
}

}  // namespace dsgd
