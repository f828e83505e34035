#include <gtest/gtest.h>

#include <sstream>

#include "dsgd/dynamics.hpp"
#include "oracles.hpp"

using namespace dsgd;

namespace {

Vector v1(double a) { return Vector::Constant(1, a); }
Matrix m1(double a) { return Matrix::Constant(1, 1, a); }

// Two scalar clients (1/2)(x - 1)^2 and (1/2)(x + 1)^2.
ObjectiveSet two_node_problem() { return ObjectiveSet::quadratic({{m1(1), m1(1)}, {v1(1), v1(-1)}}); }

CommMatrix two_node_graph() {
  Matrix w(2, 2);
  w << 0.75, 0.25, 0.25, 0.75;
  return CommMatrix(w);
}

ObjectiveSet scalar_quadratic(double a) { return ObjectiveSet::quadratic({{m1(a)}, {v1(0.0)}}); }

}  // namespace

TEST(DgdStep, FixedPointIsStationary) {
  const auto obj = generate_quadratic_problem(4, 2, 1.0, 3.0, 1.0, 3);
  const auto w = build_ring(4);
  const double gamma = 0.1;
  const auto fp = fixed_point(w, obj, gamma);
  EXPECT_LE((dgd_step(w, obj, gamma, fp.theta).values() - fp.theta.values()).norm(), 1e-10);
}

TEST(DgdStep, HomogeneousOptimumIsStationary) {
  const auto obj = generate_quadratic_problem(4, 2, 1.0, 3.0, 1.0, 3, true);
  const auto w = build_ring(4);
  const Stacked star = obj.theta_star_stacked();
  EXPECT_LE((dgd_step(w, obj, 0.1, star).values() - star.values()).norm(), 1e-14);
}

TEST(DgdStep, SingleClientIsGradientStep) {
  const auto obj = ObjectiveSet::quadratic({{m1(2.0)}, {v1(1.0)}});
  const auto w = build_fully_connected(1);
  const Stacked x(1, 1, v1(3.0));
  EXPECT_DOUBLE_EQ(dgd_step(w, obj, 0.1, x).values()(0), 3.0 - 0.1 * 2.0 * 2.0);
  EXPECT_THROW(dgd_step(w, obj, 0.1, Stacked(2, 1)), Error);
}

TEST(DsgdStep, DegenerateNoiseMatchesDgd) {
  const auto obj = generate_quadratic_problem(3, 2, 1.0, 3.0, 1.0, 4);
  const auto w = build_ring(3, 0.2);
  const Stacked x(3, 2, Vector::LinSpaced(6, -1.0, 1.0));
  const Stacked a = dsgd_step(w, obj, NoiseModel::isotropic(3, 2, 0.0), 0.05, x, NoiseStream(1, 0), 7);
  const Stacked b = dsgd_step(w, obj, NoiseModel::none(), 0.05, x, NoiseStream(1, 0), 7);
  EXPECT_EQ(a.values(), dgd_step(w, obj, 0.05, x).values());
  EXPECT_EQ(b.values(), dgd_step(w, obj, 0.05, x).values());
}

TEST(DsgdStep, ConditionalMeanIsDgdStep) {
  const auto obj = generate_logistic_problem(3, 10, 2, 1.0, 0.1, 2);
  const auto w = build_ring(3, 0.25);
  const auto noise = NoiseModel::minibatch(2);
  const Stacked x(3, 2, Vector::LinSpaced(6, -0.5, 0.5));
  const double gamma = 0.5;
  const int n = 100000;
  const NoiseStream s(3, 0);
  Vector sum = Vector::Zero(6);
  Vector sq = Vector::Zero(6);
  for (int t = 0; t < n; ++t) {
    const Vector v = dsgd_step(w, obj, noise, gamma, x, s, std::uint64_t(t)).values();
    sum += v;
    sq += v.cwiseAbs2();
  }
  const Vector mean = sum / n;
  const Vector se = ((sq / n - mean.cwiseAbs2()) / n).cwiseSqrt();
  const Vector expected = dgd_step(w, obj, gamma, x).values();
  for (int i = 0; i < 6; ++i) EXPECT_LE(std::abs(mean(i) - expected(i)), 4.0 * se(i)) << i;
}

TEST(DsgdStep, ScalarRecursionIsAr1) {
  const double a = 1.5, gamma = 0.1;
  const auto obj = scalar_quadratic(a);
  const auto w = build_fully_connected(1);
  const auto noise = NoiseModel::isotropic(1, 1, 2.0);
  const NoiseStream s(9, 0);
  double x = 1.0;
  Stacked theta(1, 1, v1(x));
  for (std::uint64_t t = 0; t < 50; ++t) {
    double z = 0.0;
    s.gaussian().normals(t, 0, std::span<double>(&z, 1));
    x = (1.0 - gamma * a) * x - gamma * std::sqrt(2.0) * z;
    theta = dsgd_step(w, obj, noise, gamma, theta, s, t);
    EXPECT_NEAR(theta.values()(0), x, 1e-14);
  }
}

TEST(FixedPoint, TwoNodeClosedForm) {
  const auto fp = fixed_point(two_node_graph(), two_node_problem(), 0.1);
  const double expected = oracle::two_node_fixed_point(0.1, 1.0, 0.25, 1.0);
  EXPECT_NEAR(expected, 1.0 / 11.0, 1e-15);
  EXPECT_NEAR(fp.theta.values()(0), expected, 1e-10);
  EXPECT_NEAR(fp.theta.values()(1), -expected, 1e-10);
}

TEST(FixedPoint, NoBiasWithoutHeterogeneityOrWithFullMixing) {
  const auto homo = generate_quadratic_problem(4, 2, 1.0, 3.0, 1.0, 3, true);
  EXPECT_LE((fixed_point(build_ring(4), homo, 0.1).theta.values() - homo.theta_star_stacked().values()).norm(), 1e-10);
  const auto het = generate_quadratic_problem(4, 2, 1.0, 3.0, 1.0, 3);
  EXPECT_LE((fixed_point(build_fully_connected(4), het, 0.1).theta.values() - het.theta_star_stacked().values()).norm(), 1e-10);
}

TEST(FixedPoint, Invariants) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto obj = seed % 2 ? generate_logistic_problem(4, 15, 2, 2.0, 0.1, seed)
                              : generate_quadratic_problem(4, 2, 0.5, 2.0, 1.0, seed);
    const auto w = build_clusters(4, 2, 0.2, 0.5);
    const double gamma = 0.5 / obj.L();
    const double tol = 1e-12;
    const auto fp = fixed_point(w, obj, gamma, tol);
    EXPECT_LE(fp.residual, 10 * tol);
    // Mean of the local gradients at the fixed point vanishes.
    Vector mean_grad = Vector::Zero(2);
    for (int k = 0; k < 4; ++k) mean_grad += obj.grad_local(k, fp.theta.block(k)) / 4.0;
    EXPECT_LE(mean_grad.norm(), 10 * tol);
    // Q Theta_det = -gamma (I - W)^+ W grad F(Theta_det).
    const Stacked rhs = apply_blockwise(gossip_operator(w), grad_stacked(obj, fp.theta));
    EXPECT_LE((project_disagreement(fp.theta).values() + gamma * rhs.values()).norm(), 10 * tol);
  }
}

TEST(Run, DgdContractsTowardFixedPoint) {
  const auto obj = generate_quadratic_problem(5, 3, 0.5, 2.0, 2.0, 8);
  const auto w = build_ring(5);
  const double gamma = 1.0 / obj.L();
  const auto det = fixed_point(w, obj, gamma).theta;
  RunConfig cfg;
  cfg.algorithm = Algorithm::DGD;
  cfg.gamma = gamma;
  cfg.T = 200;
  const Stacked start(5, 3, Vector::Constant(15, 4.0));
  const auto rec = run(w, obj, NoiseModel::none(), cfg, start, det);
  const double rate = 1.0 - gamma * obj.mu();
  const double d0 = rec.steps.front().dist_det;
  for (const auto& s : rec.steps) {
    EXPECT_LE(s.dist_det, std::pow(rate, double(s.t)) * d0 + 1e-12);
    if (s.t > 0) {
      const auto& prev = rec.steps[std::size_t(s.t - 1)];
      EXPECT_LE(s.dist_det, rate * prev.dist_det + 1e-12);
    }
  }
}

TEST(Run, ZeroStepsRecordsOnlyStart) {
  const auto obj = generate_quadratic_problem(2, 2, 1, 2, 1, 0);
  RunConfig cfg;
  cfg.T = 0;
  cfg.replicates = 2;
  const auto rec = run(build_fully_connected(2), obj, NoiseModel::isotropic(2, 2, 1.0), cfg,
                       Stacked(2, 2));
  ASSERT_EQ(rec.steps.size(), 2u);
  EXPECT_EQ(rec.steps[0].t, 0);
  EXPECT_TRUE(std::isnan(rec.steps[0].dist_det));
  EXPECT_EQ(rec.moments[0].count, 0);
}

TEST(Run, DeterministicAcrossRepeatsAndThreads) {
  const auto obj = generate_logistic_problem(3, 10, 2, 2.0, 0.1, 1);
  const auto w = build_ring(3, 0.25);
  RunConfig cfg;
  cfg.gamma = 0.05;
  cfg.T = 300;
  cfg.replicates = 4;
  cfg.seed = 17;
  auto csv = [&](int threads) {
    cfg.threads = threads;
    std::ostringstream out;
    write_run_csv(run(w, obj, NoiseModel::minibatch(3), cfg, Stacked(3, 2)), out);
    return out.str();
  };
  const std::string one = csv(1);
  EXPECT_EQ(one, csv(1));
  EXPECT_EQ(one, csv(3));
  EXPECT_EQ(one.substr(0, one.find('\n')), "t,replicate,dist_opt,dist_det,consensus_err,disagreement_norm");
}

TEST(Run, RecordStrideAndMetrics) {
  const auto obj = generate_quadratic_problem(3, 2, 1, 2, 1, 0);
  RunConfig cfg;
  cfg.T = 10;
  cfg.record_every = 4;
  const auto rec = run(build_ring(3, 0.2), obj, NoiseModel::isotropic(3, 2, 0.1), cfg, Stacked(3, 2));
  std::vector<long> ts;
  for (const auto& s : rec.steps) ts.push_back(s.t);
  EXPECT_EQ(ts, (std::vector<long>{0, 4, 8, 10}));
  const auto& s0 = rec.steps.front();
  // Start at zero: consensus error is sqrt(m) ||theta*||, disagreement 0.
  EXPECT_NEAR(s0.consensus_err, std::sqrt(3.0) * obj.theta_star().norm(), 1e-12);
  EXPECT_EQ(s0.disagreement_norm, 0.0);
  EXPECT_NEAR(s0.client_err, obj.theta_star().norm(), 1e-12);
}

TEST(Run, ConfigValidation) {
  RunConfig cfg;
  cfg.gamma = 0.0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg.gamma = 0.1;
  cfg.T = 10;
  cfg.burn_in = 10;
  EXPECT_THROW(cfg.validate(), Error);
  cfg.burn_in = 3;
  cfg.replicates = 0;
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(Run, WarnsAboveOneOverL) {
  const auto obj = scalar_quadratic(1.0);
  EXPECT_FALSE(step_size_warning(obj, 0.9));
  EXPECT_TRUE(step_size_warning(obj, 1.5));
}

TEST(RrRun, TwoNodeExtrapolation) {
  RunConfig cfg;
  cfg.algorithm = Algorithm::DGD;
  cfg.gamma = 0.1;
  cfg.T = 2000;
  const auto rec = rr_run(two_node_graph(), two_node_problem(), NoiseModel::none(), cfg, Stacked(2, 1));
  const double rr = 2.0 * oracle::two_node_fixed_point(0.05, 1, 0.25, 1) - oracle::two_node_fixed_point(0.1, 1, 0.25, 1);
  EXPECT_NEAR(rr, 0.004329, 1e-6);
  EXPECT_NEAR(rec.finals[0].values()(0), rr, 1e-12);
  EXPECT_NEAR(rec.finals[0].values()(1), -rr, 1e-12);
}

TEST(RrRun, HomogeneousLimitIsOptimum) {
  const auto obj = generate_quadratic_problem(4, 2, 1, 2, 1, 6, true);
  RunConfig cfg;
  cfg.algorithm = Algorithm::RR_DGD;
  cfg.gamma = 0.2;
  cfg.T = 3000;
  const auto rec = run(build_ring(4), obj, NoiseModel::none(), cfg, Stacked(4, 2));
  EXPECT_LE((rec.finals[0].values() - obj.theta_star_stacked().values()).norm(), 1e-12);
}

TEST(RrRun, BiasIsSecondOrder) {
  const auto obj = generate_quadratic_problem(4, 2, 1, 2, 2, 6);
  const auto w = build_ring(4);
  auto limit_error = [&](double gamma) {
    RunConfig cfg;
    cfg.algorithm = Algorithm::RR_DGD;
    cfg.gamma = gamma;
    cfg.T = long(40.0 / (gamma * obj.mu()));
    const auto rec = run(w, obj, NoiseModel::none(), cfg, obj.theta_star_stacked());
    return (rec.finals[0].values() - obj.theta_star_stacked().values()).norm();
  };
  const double g = 0.02 / obj.L();
  const double ratio = limit_error(g) / limit_error(g / 2);
  EXPECT_NEAR(ratio, 4.0, 1.0);
}

TEST(RrRun, CouplingModesSelectStreams) {
  const auto obj = generate_quadratic_problem(2, 1, 1, 2, 1, 2);
  RunConfig cfg;
  cfg.algorithm = Algorithm::RR_DSGD;
  cfg.gamma = 0.1;
  cfg.T = 50;
  cfg.coupling = Coupling::SharedNoise;
  const auto noise = NoiseModel::isotropic(2, 1, 1.0);
  const auto shared = run(build_fully_connected(2), obj, noise, cfg, Stacked(2, 1));
  cfg.coupling = Coupling::Independent;
  const auto indep = run(build_fully_connected(2), obj, noise, cfg, Stacked(2, 1));
  EXPECT_NE(shared.finals[0].values(), indep.finals[0].values());
}

TEST(CoupledRun, IdenticalStartsStayTogether) {
  const auto obj = generate_logistic_problem(3, 10, 2, 2.0, 0.1, 3);
  const Stacked x(3, 2, Vector::Constant(6, 0.3));
  const auto trace = coupled_run(build_ring(3, 0.25), obj, NoiseModel::minibatch(2), 0.2, 100, x, x, 1, 3);
  for (double v : trace.mean_sq_dist) EXPECT_EQ(v, 0.0);
}

TEST(CoupledRun, QuadraticRatioIsDeterministic) {
  const auto obj = generate_quadratic_problem(4, 2, 0.5, 2.0, 1.0, 5);
  const double gamma = 0.5 / obj.L();
  const Stacked a(4, 2, Vector::Constant(8, 3.0));
  const Stacked b(4, 2, Vector::LinSpaced(8, -2.0, 2.0));
  const auto trace = coupled_run(build_ring(4), obj, NoiseModel::isotropic(4, 2, 1.0), gamma, 100, a, b, 2);
  const double factor = std::pow(1.0 - gamma * obj.mu(), 2);
  for (std::size_t t = 0; t + 1 < trace.mean_sq_dist.size(); ++t) {
    EXPECT_LE(trace.mean_sq_dist[t + 1], factor * trace.mean_sq_dist[t] * (1 + 1e-9) + 1e-300);
  }
}

TEST(CoupledRun, RejectsLargeStep) {
  const auto obj = scalar_quadratic(1.0);
  try {
    coupled_run(build_fully_connected(1), obj, NoiseModel::isotropic(1, 1, 1.0), 2.0, 10,
                Stacked(1, 1), Stacked(1, 1), 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidStep);
  }
}

TEST(AggregateCsv, MeanAndStdAcrossReplicates) {
  const auto obj = generate_quadratic_problem(2, 1, 1, 2, 1, 0);
  RunConfig cfg;
  cfg.T = 2;
  cfg.replicates = 3;
  const auto rec = run(build_fully_connected(2), obj, NoiseModel::isotropic(2, 1, 1.0), cfg, Stacked(2, 1));
  std::ostringstream out;
  write_aggregate_csv(rec, out);
  std::istringstream in(out.str());
  std::string header, line;
  std::getline(in, header);
  EXPECT_EQ(header, "t,replicates,mean,std");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 3);
}
