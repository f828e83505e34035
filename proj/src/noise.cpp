#include "dsgd/noise.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace dsgd {

namespace {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void require_logistic(const NoiseModel& model, const ObjectiveSet& obj) {
  if (model.kind() == NoiseKind::Minibatch && obj.kind() != ObjectiveKind::Logistic) {
    throw Error(ErrorCode::UnsupportedCombination,
                "minibatch noise needs a finite-sum (logistic) objective");
  }
}

// Per-sample logistic gradients (ridge term excluded: it cancels in the noise).
Matrix sample_gradients(const Matrix& x, const Vector& theta) {
  const Vector z = x * theta;
  Matrix g = x;
  for (Eigen::Index i = 0; i < x.rows(); ++i) g.row(i) *= sigmoid(z(i));
  return g;
}

}  // namespace

NoiseModel NoiseModel::gaussian(std::vector<Matrix> client_covariances) {
  if (client_covariances.empty()) {
    throw Error(ErrorCode::InvalidParam, "gaussian noise: no client covariances");
  }
  NoiseModel model;
  model.kind_ = NoiseKind::AdditiveGaussian;
  const Eigen::Index d = client_covariances.front().rows();
  for (auto& c : client_covariances) {
    if (c.rows() != d || c.cols() != d) {
      throw Error(ErrorCode::ShapeMismatch, "gaussian noise: covariances must all be d x d");
    }
    const auto spec = sym_eig(c);
    const double scale = std::max(1.0, spec.max_abs());
    if (spec.eigenvalues.minCoeff() < -1e-12 * scale) {
      throw Error(ErrorCode::NotPSD, "gaussian noise: covariance is not PSD");
    }
    const Vector root = spec.eigenvalues.cwiseMax(0.0).cwiseSqrt();
    model.factor_.push_back(spec.eigenvectors * root.asDiagonal());
    model.cov_.push_back(0.5 * (c + c.transpose()));
  }
  return model;
}

NoiseModel NoiseModel::isotropic(int m, int d, double sigma2) {
  if (!(sigma2 >= 0.0)) throw Error(ErrorCode::InvalidParam, "gaussian noise: sigma2 < 0");
  return gaussian(std::vector<Matrix>(std::size_t(m), sigma2 * Matrix::Identity(d, d)));
}

NoiseModel NoiseModel::minibatch(int batch_size) {
  if (batch_size < 1) throw Error(ErrorCode::InvalidParam, "minibatch: batch size must be >= 1");
  NoiseModel model;
  model.kind_ = NoiseKind::Minibatch;
  model.batch_ = batch_size;
  return model;
}

bool NoiseModel::is_degenerate() const {
  if (kind_ == NoiseKind::None) return true;
  if (kind_ == NoiseKind::AdditiveGaussian) {
    for (const auto& c : cov_) {
      if (c.cwiseAbs().maxCoeff() > 0.0) return false;
    }
    return true;
  }
  return false;
}

void NoiseModel::validate(const ObjectiveSet& obj) const {
  require_logistic(*this, obj);
  if (kind_ == NoiseKind::AdditiveGaussian) {
    if (int(cov_.size()) != obj.clients() || cov_.front().rows() != obj.dim()) {
      throw Error(ErrorCode::ShapeMismatch, "gaussian noise: covariances do not match (m, d)");
    }
  }
  if (kind_ == NoiseKind::Minibatch) {
    for (const auto& x : obj.logistic_spec()->data) {
      if (batch_ > x.rows()) {
        throw Error(ErrorCode::InvalidParam, "minibatch: batch size " + std::to_string(batch_) +
                                                 " exceeds client sample count " +
                                                 std::to_string(x.rows()));
      }
    }
  }
}

double NoiseModel::cocoercivity_constant(const ObjectiveSet& obj) const {
  if (kind_ != NoiseKind::Minibatch || obj.kind() != ObjectiveKind::Logistic) return obj.L();
  const auto& spec = *obj.logistic_spec();
  double worst = 0.0;
  for (const auto& x : spec.data) {
    std::vector<double> sq(std::size_t(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) sq[std::size_t(i)] = x.row(i).squaredNorm();
    const int b = std::min<int>(batch_, int(x.rows()));
    std::partial_sort(sq.begin(), sq.begin() + b, sq.end(), std::greater<>());
    worst = std::max(worst, std::accumulate(sq.begin(), sq.begin() + b, 0.0) / b);
  }
  return std::max(obj.L(), spec.lambda_reg + 0.25 * worst);
}

Stacked sample_noise(const NoiseModel& model, const ObjectiveSet& obj, const Stacked& theta,
                     const NoiseStream& stream, std::uint64_t t) {
  if (theta.clients() != obj.clients() || theta.dim() != obj.dim()) {
    throw Error(ErrorCode::ShapeMismatch, "sample_noise: point shape does not match objective");
  }
  require_logistic(model, obj);
  const int m = obj.clients();
  const int d = obj.dim();
  Stacked out(m, d);
  switch (model.kind()) {
    case NoiseKind::None:
      return out;
    case NoiseKind::AdditiveGaussian: {
      Vector z(d);
      for (int k = 0; k < m; ++k) {
        stream.gaussian().normals(t, std::uint32_t(k), std::span<double>(z.data(), d));
        out.block(k).noalias() = model.factors()[std::size_t(k)] * z;
      }
      return out;
    }
    case NoiseKind::Minibatch: {
      const auto& spec = *obj.logistic_spec();
      const int b = model.batch_size();
      std::vector<double> u(static_cast<std::size_t>(b));
      std::vector<int> perm;
      for (int k = 0; k < m; ++k) {
        const Matrix& x = spec.data[std::size_t(k)];
        const int n = int(x.rows());
        if (b > n) throw Error(ErrorCode::InvalidParam, "minibatch: batch exceeds sample count");
        if (b == n) continue;  // full batch: no sampling noise
        const Matrix g = sample_gradients(x, theta.block(k));
        perm.resize(std::size_t(n));
        std::iota(perm.begin(), perm.end(), 0);
        stream.minibatch().uniforms(t, std::uint32_t(k), u);
        Vector sub = Vector::Zero(d);
        for (int j = 0; j < b; ++j) {
          const int r = j + int(u[std::size_t(j)] * (n - j));
          std::swap(perm[std::size_t(j)], perm[std::size_t(r)]);
          sub += g.row(perm[std::size_t(j)]).transpose();
        }
        out.block(k) = sub / double(b) - g.colwise().mean().transpose();
      }
      return out;
    }
  }
  return out;
}

Matrix covariance_at(const NoiseModel& model, const ObjectiveSet& obj, const Vector& theta) {
  require_logistic(model, obj);
  const int m = obj.clients();
  const int d = obj.dim();
  Matrix total = Matrix::Zero(d, d);
  switch (model.kind()) {
    case NoiseKind::None:
      return total;
    case NoiseKind::AdditiveGaussian:
      for (const auto& c : model.covariances()) total += c;
      return total / double(m);
    case NoiseKind::Minibatch: {
      const int b = model.batch_size();
      for (const auto& x : obj.logistic_spec()->data) {
        const int n = int(x.rows());
        if (n <= 1 || b >= n) continue;
        const Matrix g = sample_gradients(x, theta);
        const Matrix centered = g.rowwise() - g.colwise().mean();
        const Matrix pop_cov = centered.transpose() * centered / double(n);
        // Variance of a without-replacement sample mean: (S / b)(n - b)/(n - 1).
        total += pop_cov * (double(n - b) / (double(b) * double(n - 1)));
      }
      return total / double(m);
    }
  }
  return total;
}

TauEstimate estimate_tau(const NoiseModel& model, const ObjectiveSet& obj,
                         const Stacked& theta_star, int p, int n_draws, std::uint64_t seed) {
  if (p != 2 && p != 4) throw Error(ErrorCode::InvalidParam, "estimate_tau: p must be 2 or 4");
  if (n_draws < 2) throw Error(ErrorCode::InvalidParam, "estimate_tau: need >= 2 draws");
  TauEstimate out;
  if (model.kind() == NoiseKind::AdditiveGaussian) {
    double trace = 0.0;
    double trace_sq = 0.0;
    for (const auto& c : model.covariances()) {
      trace += c.trace();
      trace_sq += (c * c).trace();
    }
    // E||eps||^2 = tr S, E||eps||^4 = (tr S)^2 + 2 tr(S^2) for block-diagonal S.
    out.exact = p == 2 ? std::sqrt(trace) : std::pow(trace * trace + 2.0 * trace_sq, 0.25);
  }
  if (model.is_degenerate()) {
    out.exact = out.exact.value_or(0.0);
    return out;
  }
  const NoiseStream stream(seed, 0xE57ull);
  double sum = 0.0;
  double sum_sq = 0.0;
  for (int i = 0; i < n_draws; ++i) {
    const double sq = sample_noise(model, obj, theta_star, stream, std::uint64_t(i)).values().squaredNorm();
    const double v = p == 2 ? sq : sq * sq;
    sum += v;
    sum_sq += v * v;
  }
  const double mean = sum / n_draws;
  const double var = std::max(0.0, (sum_sq - n_draws * mean * mean) / (n_draws - 1));
  const double se_mean = std::sqrt(var / n_draws);
  out.estimate = std::pow(mean, 1.0 / p);
  out.std_error = mean > 0.0 ? (1.0 / p) * std::pow(mean, 1.0 / p - 1.0) * se_mean : 0.0;
  return out;
}

}  // namespace dsgd
