#include "dsgd/topology.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <sstream>

namespace dsgd {

namespace {

constexpr double kEntryTol = 1e-12;
constexpr double kConnectivityTol = 1e-12;
constexpr double kZeroEig = 1e-14;

void check_size(int m, int min_m, const char* who) {
  if (m < min_m) {
    throw Error(ErrorCode::InvalidSize,
                std::string(who) + ": m = " + std::to_string(m) + " < " + std::to_string(min_m));
  }
}

}  // namespace

CommMatrix::CommMatrix(Matrix entries) : entries_(std::move(entries)) {
  detail::require_square(entries_, "CommMatrix");
  const Eigen::Index m = entries_.rows();
  if (m == 0) throw Error(ErrorCode::InvalidSize, "CommMatrix: empty matrix");
  if ((entries_ - entries_.transpose()).cwiseAbs().maxCoeff() > kEntryTol) {
    throw Error(ErrorCode::NotSymmetric, "CommMatrix: W is not symmetric");
  }
  // Exact symmetry from here on.
  entries_ = (0.5 * (entries_ + entries_.transpose())).eval();
  const double row_err = (entries_.rowwise().sum().array() - 1.0).abs().maxCoeff();
  if (row_err > kEntryTol) {
    throw Error(ErrorCode::InvalidParam,
                "CommMatrix: rows must sum to 1 (error " + std::to_string(row_err) + ")");
  }
  if (entries_.minCoeff() < -kEntryTol) {
    throw Error(ErrorCode::InvalidStep,
                "CommMatrix: negative entry " + std::to_string(entries_.minCoeff()));
  }

  eigenvalues_ = sym_eig(entries_).eigenvalues;
  if (m == 1) return;
  // Eigenvalues at round-off level are exact zeros (e.g. every non-unit
  // eigenvalue of the fully connected W), so Lambda and rho come out as 0.
  for (Eigen::Index i = 1; i < m; ++i) {
    if (std::abs(eigenvalues_(i)) <= kZeroEig * double(m)) eigenvalues_(i) = 0.0;
  }

  profile_.lambda2 = eigenvalues_(1);
  profile_.lambda_min = eigenvalues_(m - 1);
  if (profile_.lambda2 >= 1.0 - kConnectivityTol) {
    std::ostringstream msg;
    msg << "Assumption 2 violated: λ₂ = " << profile_.lambda2;
    throw Error(ErrorCode::Disconnected, msg.str());
  }
  profile_.rho = std::max(std::abs(profile_.lambda2), std::abs(profile_.lambda_min));
  profile_.gap = 1.0 - profile_.lambda2;
  double worst = 0.0;
  for (Eigen::Index i = 1; i < m; ++i) {
    const double l = eigenvalues_(i);
    worst = std::max(worst, std::abs(l / (1.0 - l)));
  }
  profile_.Lambda = 2.0 * worst;
}

CommMatrix build_fully_connected(int m) {
  check_size(m, 1, "build_fully_connected");
  return CommMatrix(Matrix::Constant(m, m, 1.0 / m));
}

Matrix ring_laplacian(int m) {
  Matrix lap = Matrix::Zero(m, m);
  for (int i = 0; i < m; ++i) {
    const int j = (i + 1) % m;
    lap(i, j) -= 1.0;
    lap(j, i) -= 1.0;
    lap(i, i) += 1.0;
    lap(j, j) += 1.0;
  }
  return lap;
}

CommMatrix build_ring(int m, double t) {
  check_size(m, 3, "build_ring");
  if (!(t > 0.0) || t > 0.5) {
    throw Error(ErrorCode::InvalidStep,
                "build_ring: t = " + std::to_string(t) + " must lie in (0, 1/2]");
  }
  return from_laplacian(ring_laplacian(m), t);
}

CommMatrix build_clusters(int m, int k, double t_intra, double bridge_weight) {
  if (k < 1 || m < 1 || m % k != 0 || m / k < 2) {
    throw Error(ErrorCode::InvalidPartition,
                "build_clusters: need k | m with cluster size >= 2 (m = " + std::to_string(m) +
                    ", k = " + std::to_string(k) + ")");
  }
  if (!(bridge_weight >= 0.0)) {
    throw Error(ErrorCode::InvalidParam, "build_clusters: bridge weight must be >= 0");
  }
  const int size = m / k;
  std::vector<Edge> edges;
  for (int c = 0; c < k; ++c) {
    for (int a = 0; a < size; ++a) {
      for (int b = a + 1; b < size; ++b) edges.push_back({c * size + a, c * size + b, 1.0});
    }
  }
  const int bridges = k == 1 ? 0 : (k == 2 ? 1 : k);
  for (int c = 0; c < bridges; ++c) {
    const int next = (c + 1) % k;
    edges.push_back({c * size + size - 1, next * size, bridge_weight});
  }
  return from_laplacian(laplacian_from_edges(m, edges), t_intra);
}

CommMatrix from_laplacian(const Matrix& laplacian, double t) {
  detail::require_square(laplacian, "from_laplacian");
  const Eigen::Index m = laplacian.rows();
  if (m == 0) throw Error(ErrorCode::InvalidSize, "from_laplacian: empty Laplacian");
  const double scale = std::max(1.0, laplacian.cwiseAbs().maxCoeff());
  if ((laplacian - laplacian.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    throw Error(ErrorCode::NotLaplacian, "from_laplacian: L is not symmetric");
  }
  if (laplacian.rowwise().sum().cwiseAbs().maxCoeff() > 1e-12 * scale) {
    throw Error(ErrorCode::NotLaplacian, "from_laplacian: rows of L must sum to 0");
  }
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      if (i != j && laplacian(i, j) > 0.0) {
        throw Error(ErrorCode::NotLaplacian, "from_laplacian: positive off-diagonal entry");
      }
    }
  }
  if (!(t > 0.0)) throw Error(ErrorCode::InvalidStep, "from_laplacian: t must be positive");
  Matrix w = Matrix::Identity(m, m) - t * laplacian;
  if (w.minCoeff() < -kEntryTol) {
    throw Error(ErrorCode::InvalidStep, "from_laplacian: t = " + std::to_string(t) +
                                            " makes W negative (min entry " +
                                            std::to_string(w.minCoeff()) + ")");
  }
  return CommMatrix(std::move(w));
}

Matrix laplacian_from_edges(int m, const std::vector<Edge>& edges) {
  Matrix lap = Matrix::Zero(m, m);
  for (const auto& e : edges) {
    if (e.i < 0 || e.j < 0 || e.i >= m || e.j >= m) {
      throw Error(ErrorCode::IndexOutOfRange, "edge (" + std::to_string(e.i) + ", " +
                                                  std::to_string(e.j) + ") outside 0.." +
                                                  std::to_string(m - 1));
    }
    if (e.i == e.j) throw Error(ErrorCode::InvalidParam, "self-loop in edge list");
    if (e.weight < 0.0) throw Error(ErrorCode::InvalidParam, "negative edge weight");
    lap(e.i, e.j) -= e.weight;
    lap(e.j, e.i) -= e.weight;
    lap(e.i, e.i) += e.weight;
    lap(e.j, e.j) += e.weight;
  }
  return lap;
}

std::vector<Edge> parse_edge_list(std::istream& in) {
  std::vector<Edge> edges;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    Edge e;
    if (!(fields >> e.i)) continue;  // blank or comment-only
    if (!(fields >> e.j)) {
      throw Error(ErrorCode::ConfigError, "edge list line " + std::to_string(line_no) +
                                              ": expected `i j [weight]`");
    }
    if (!(fields >> e.weight)) e.weight = 1.0;
    edges.push_back(e);
  }
  return edges;
}

std::vector<Edge> read_edge_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open edge list " + path);
  return parse_edge_list(in);
}

int node_count(const std::vector<Edge>& edges) {
  int n = 0;
  for (const auto& e : edges) n = std::max({n, e.i + 1, e.j + 1});
  return n;
}

SpectralProfile spectral_profile(const Matrix& w) { return CommMatrix(w).spectral(); }

Matrix gossip_operator(const CommMatrix& w) {
  // Spectral form: W's eigenvalue l maps to l / (1 - l), the unit eigenvalue
  // (consensus direction) to 0.
  const int m = w.clients();
  const auto spec = sym_eig(w.matrix());
  Vector mapped = Vector::Zero(m);
  for (Eigen::Index i = 1; i < m; ++i) {
    const double l = std::abs(spec.eigenvalues(i)) <= kZeroEig * m ? 0.0 : spec.eigenvalues(i);
    mapped(i) = l / (1.0 - l);
  }
  Matrix g = spec.eigenvectors * mapped.asDiagonal() * spec.eigenvectors.transpose();
  return 0.5 * (g + g.transpose());
}

}  // namespace dsgd
