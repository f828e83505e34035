#include <gtest/gtest.h>

#include <sstream>

#include "dsgd/topology.hpp"
#include "oracles.hpp"

using namespace dsgd;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::ConfigError;
}

void expect_valid_gossip(const Matrix& w) {
  EXPECT_LE((w - w.transpose()).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_LE((w.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-12);
  EXPECT_GE(w.minCoeff(), -1e-12);
  EXPECT_LT(oracle::jacobi_eigenvalues(w)(1), 1.0 - 1e-12);
}

// Lambda from eigenvalues: 2 max |l/(1-l)| over the non-unit eigenvalues.
double lambda_oracle(const Matrix& w) {
  const Vector ev = oracle::jacobi_eigenvalues(w);
  double best = 0.0;
  for (Eigen::Index i = 1; i < ev.size(); ++i) best = std::max(best, std::abs(ev(i) / (1 - ev(i))));
  return 2.0 * best;
}

}  // namespace

TEST(FullyConnected, Entries) {
  const auto w = build_fully_connected(2);
  EXPECT_TRUE(w.matrix().isApprox(Matrix::Constant(2, 2, 0.5)));
  const SpectralProfile p = build_fully_connected(3).spectral();
  EXPECT_NEAR(p.lambda2, 0.0, 1e-14);
  EXPECT_NEAR(p.Lambda, 0.0, 1e-14);
  EXPECT_EQ(code_of([] { build_fully_connected(0); }), ErrorCode::InvalidSize);
}

TEST(FullyConnected, SingleClient) {
  const auto w = build_fully_connected(1);
  EXPECT_EQ(w.matrix()(0, 0), 1.0);
  const auto& p = w.spectral();
  EXPECT_EQ(p.lambda2, 0.0);
  EXPECT_EQ(p.lambda_min, 0.0);
  EXPECT_EQ(p.rho, 0.0);
  EXPECT_EQ(p.Lambda, 0.0);
  EXPECT_EQ(p.gap, 1.0);
  EXPECT_EQ(gossip_operator(w).norm(), 0.0);
}

TEST(Ring, FourNodes) {
  const auto w = build_ring(4, 0.25);
  EXPECT_EQ(w.matrix()(0, 0), 0.5);
  EXPECT_EQ(w.matrix()(0, 1), 0.25);
  EXPECT_EQ(w.matrix()(0, 3), 0.25);
  EXPECT_EQ(w.matrix()(0, 2), 0.0);
  const Vector ev = oracle::jacobi_eigenvalues(w.matrix());
  EXPECT_NEAR(ev(0), 1.0, 1e-12);
  EXPECT_NEAR(ev(1), 0.5, 1e-12);
  EXPECT_NEAR(ev(2), 0.5, 1e-12);
  EXPECT_NEAR(ev(3), 0.0, 1e-12);
  const auto& p = w.spectral();
  EXPECT_NEAR(p.lambda2, 0.5, 1e-12);
  EXPECT_NEAR(p.lambda_min, 0.0, 1e-12);
  EXPECT_NEAR(p.rho, 0.5, 1e-12);
  EXPECT_NEAR(p.Lambda, 2.0, 1e-12);
  EXPECT_NEAR(p.gap, 0.5, 1e-12);
}

TEST(Ring, ThreeNodesIsComplete) {
  const auto w = build_ring(3, 1.0 / 3.0);
  EXPECT_TRUE(w.matrix().isApprox(Matrix::Constant(3, 3, 1.0 / 3.0), 1e-14));
  EXPECT_NEAR(w.spectral().lambda2, 0.0, 1e-12);
  EXPECT_NEAR(w.spectral().Lambda, 0.0, 1e-12);
}

TEST(Ring, Errors) {
  EXPECT_EQ(code_of([] { build_ring(4, 0.6); }), ErrorCode::InvalidStep);
  EXPECT_EQ(code_of([] { build_ring(2, 0.25); }), ErrorCode::InvalidSize);
}

TEST(Ring, EigenvaluesFollowCosineFormula) {
  for (int m : {5, 8, 12}) {
    const double t = 0.3;
    const CommMatrix w = build_ring(m, t);
    const Vector& ev = w.eigenvalues();
    std::vector<double> expected;
    for (int k = 0; k < m; ++k) expected.push_back(1.0 - t * (2.0 - 2.0 * std::cos(2.0 * M_PI * k / m)));
    std::sort(expected.rbegin(), expected.rend());
    for (int k = 0; k < m; ++k) EXPECT_NEAR(ev(k), expected[std::size_t(k)], 1e-12);
  }
}

TEST(Clusters, Examples) {
  const auto w = build_clusters(4, 2, 0.2, 1.0);
  expect_valid_gossip(w.matrix());
  const auto w12 = build_clusters(12, 4, 0.1, 0.5);
  expect_valid_gossip(w12.matrix());
  EXPECT_GT(w12.spectral().rho, build_fully_connected(12).spectral().rho);
  EXPECT_EQ(code_of([] { build_clusters(5, 2, 0.1, 1.0); }), ErrorCode::InvalidPartition);
  EXPECT_EQ(code_of([] { build_clusters(4, 4, 0.1, 1.0); }), ErrorCode::InvalidPartition);
}

TEST(Clusters, BridgeStructure) {
  const Matrix w = build_clusters(12, 4, 0.1, 0.5).matrix();
  // Clusters {0,1,2}, {3,4,5}, ...: last of one cluster bridges to first of the next.
  EXPECT_NEAR(w(2, 3), 0.05, 1e-15);
  EXPECT_NEAR(w(11, 0), 0.05, 1e-15);
  EXPECT_NEAR(w(0, 1), 0.1, 1e-15);
  EXPECT_EQ(w(0, 4), 0.0);
}

TEST(FromLaplacian, TwoNodePath) {
  Matrix l(2, 2);
  l << 1, -1, -1, 1;
  EXPECT_TRUE(from_laplacian(l, 0.5).matrix().isApprox(Matrix::Constant(2, 2, 0.5)));
}

TEST(FromLaplacian, DisconnectedReportsLambda2) {
  const Matrix l = laplacian_from_edges(4, {{0, 1, 1.0}, {2, 3, 1.0}});
  try {
    from_laplacian(l, 0.25);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Disconnected);
    EXPECT_NE(std::string(e.what()).find("Assumption 2 violated: λ₂ = 1"), std::string::npos);
  }
}

TEST(FromLaplacian, RingEquivalence) {
  EXPECT_TRUE(from_laplacian(ring_laplacian(4), 0.25).matrix().isApprox(build_ring(4, 0.25).matrix()));
}

TEST(FromLaplacian, Errors) {
  Matrix bad(2, 2);
  bad << 1, 1, 1, 1;
  EXPECT_EQ(code_of([&] { from_laplacian(bad, 0.5); }), ErrorCode::NotLaplacian);
  EXPECT_EQ(code_of([] { from_laplacian(ring_laplacian(4), 0.8); }), ErrorCode::InvalidStep);
  EXPECT_EQ(code_of([] { from_laplacian(ring_laplacian(4), 0.0); }), ErrorCode::InvalidStep);
}

TEST(CommMatrix, Validation) {
  EXPECT_EQ(code_of([] { CommMatrix(Matrix::Identity(3, 3)); }), ErrorCode::Disconnected);
  Matrix asym(2, 2);
  asym << 0.5, 0.5, 0.4, 0.6;
  EXPECT_EQ(code_of([&] { CommMatrix{asym}; }), ErrorCode::NotSymmetric);
  Matrix rows(2, 2);
  rows << 0.5, 0.4, 0.4, 0.5;
  EXPECT_EQ(code_of([&] { CommMatrix{rows}; }), ErrorCode::InvalidParam);
  EXPECT_EQ(code_of([] { spectral_profile(Matrix(Matrix::Identity(3, 3))); }),
            ErrorCode::Disconnected);
}

TEST(SpectralProfile, FullyConnectedFour) {
  const SpectralProfile p = build_fully_connected(4).spectral();
  EXPECT_NEAR(p.lambda2, 0.0, 1e-12);
  EXPECT_NEAR(p.lambda_min, 0.0, 1e-12);
  EXPECT_NEAR(p.rho, 0.0, 1e-12);
  EXPECT_NEAR(p.Lambda, 0.0, 1e-12);
  EXPECT_NEAR(p.gap, 1.0, 1e-12);
}

TEST(GossipOperator, Examples) {
  EXPECT_LE(gossip_operator(build_fully_connected(5)).cwiseAbs().maxCoeff(), 1e-12);
  const Matrix g = gossip_operator(build_ring(4, 0.25));
  const Vector ev = oracle::jacobi_eigenvalues(g);
  EXPECT_NEAR(ev(0), 1.0, 1e-12);
  EXPECT_NEAR(ev(1), 1.0, 1e-12);
  EXPECT_NEAR(ev(2), 0.0, 1e-12);
  EXPECT_NEAR(ev(3), 0.0, 1e-12);
  EXPECT_LE((g * Vector::Ones(4)).norm(), 1e-12);
}

TEST(GossipOperator, RandomGraphsAgreeWithProfile) {
  std::mt19937_64 gen(41);
  std::uniform_real_distribution<double> u(0.1, 1.0);
  std::bernoulli_distribution coin(0.5);
  int checked = 0;
  for (int trial = 0; trial < 40; ++trial) {
    const int m = 3 + trial % 6;
    std::vector<Edge> edges;
    for (int i = 0; i < m; ++i) edges.push_back({i, (i + 1) % m, u(gen)});
    for (int i = 0; i < m; ++i)
      for (int j = i + 2; j < m; ++j)
        if (coin(gen) && !(i == 0 && j == m - 1)) edges.push_back({i, j, u(gen)});
    const Matrix l = laplacian_from_edges(m, edges);
    const double t = 0.9 / l.diagonal().maxCoeff();
    const CommMatrix w = from_laplacian(l, t);
    expect_valid_gossip(w.matrix());
    EXPECT_NEAR(w.spectral().Lambda, lambda_oracle(w.matrix()), 1e-9);
    EXPECT_NEAR(w.spectral().Lambda, 2.0 * spectral_norm(gossip_operator(w)), 1e-9);
    ++checked;
  }
  EXPECT_EQ(checked, 40);
}

TEST(EdgeList, ParsesCommentsAndDefaultWeight) {
  std::istringstream in("# ring\n0 1 0.5\n1 2\n\n2 0 2 # trailing\n");
  const auto edges = parse_edge_list(in);
  ASSERT_EQ(edges.size(), 3u);
  EXPECT_EQ(edges[1].weight, 1.0);
  EXPECT_EQ(edges[2].weight, 2.0);
  EXPECT_EQ(node_count(edges), 3);
  std::istringstream bad("0 x\n");
  EXPECT_EQ(code_of([&] { parse_edge_list(bad); }), ErrorCode::ConfigError);
  EXPECT_EQ(code_of([] { read_edge_list("/nonexistent/graph.txt"); }), ErrorCode::IoError);
}

TEST(Projections, Examples) {
  auto make = [](double a, double b) { return Stacked(2, 1, Vector(Eigen::Vector2d(a, b))); };
  EXPECT_EQ(project_consensus(make(1, 1)).values(), make(1, 1).values());
  EXPECT_EQ(project_disagreement(make(1, 1)).values(), make(0, 0).values());
  EXPECT_EQ(project_consensus(make(1, -1)).values(), make(0, 0).values());
  EXPECT_EQ(project_consensus(make(3, 1)).values(), make(2, 2).values());
  EXPECT_EQ(project_disagreement(make(3, 1)).values(), make(1, -1).values());
}

TEST(Projections, Properties) {
  std::mt19937_64 gen(9);
  std::normal_distribution<double> z;
  const CommMatrix w = build_clusters(6, 2, 0.2, 0.7);
  for (int trial = 0; trial < 20; ++trial) {
    Stacked x(6, 3);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.values()(i) = z(gen);
    const Stacked p = project_consensus(x);
    const Stacked q = project_disagreement(x);
    EXPECT_LE((project_consensus(p).values() - p.values()).norm(), 1e-12);
    EXPECT_LE((project_disagreement(q).values() - q.values()).norm(), 1e-12);
    EXPECT_LE(project_consensus(q).norm(), 1e-12);
    EXPECT_LE(std::abs(p.norm() * p.norm() + q.norm() * q.norm() - x.norm() * x.norm()), 1e-12 * x.norm() * x.norm());
    EXPECT_LE((project_consensus(mix(w, x)).values() - p.values()).norm(), 1e-12);
  }
}
