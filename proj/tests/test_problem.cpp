// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "fedmm/problem.hpp"
#include "fedmm/rng.hpp"

using namespace fedmm;

namespace {

Vector random_vector(int d, Stream& rng, double scale = 1.0) {
  Vector v(d);
  for (int i = 0; i < d; ++i) v(i) = rng.normal(scale);
  return v;
}

QuadraticProblem default_problem() { return build_quadratic_problem(24, 4, 2e-4, 7); }

}  // namespace

TEST(Problem, DimensionOfDefaultShape) {
  const auto prob = default_problem();
  EXPECT_EQ(prob.dimension(), 97);
  EXPECT_EQ(prob.num_clients(), 24);
  for (const auto& c : prob.clients()) EXPECT_EQ(c.dimension(), 97);
}

TEST(Problem, HandAssembledTwoClientMatrix) {
  const auto prob = build_quadratic_problem(2, 1, 1.0);
  Matrix expected(3, 3);
  expected << 2, -1, 0, -1, 2, -1, 0, -1, 2;
  EXPECT_EQ(assembled_matrix(prob), expected);
  // A_1 = B_1 + E11, A_2 = B_2 + E33
  Matrix a1(3, 3), a2(3, 3);
  a1 << 2, -1, 0, -1, 1, 0, 0, 0, 0;
  a2 << 0, 0, 0, 0, 1, -1, 0, -1, 2;
  EXPECT_EQ(prob.client(0).dense_matrix(), a1);
  EXPECT_EQ(prob.client(1).dense_matrix(), a2);
}

TEST(Problem, AssemblyIsTridiagonalExactly) {
  const auto prob = default_problem();
  const Matrix a = assembled_matrix(prob);
  const int d = prob.dimension();
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      const double want = i == j ? 2.0 : (std::abs(i - j) == 1 ? -1.0 : 0.0);
      ASSERT_EQ(a(i, j), want) << i << "," << j;
    }
}

TEST(Problem, LinearTermsOnlyOnFirstClient) {
  const auto prob = default_problem();
  Vector e1 = Vector::Zero(prob.dimension());
  e1(0) = 1.0;
  EXPECT_EQ(prob.client(0).b(), e1);
  for (int k = 1; k < prob.num_clients(); ++k) EXPECT_EQ(prob.client(k).b().norm(), 0.0);
}

TEST(Problem, ConstructionErrorsNameTheParameter) {
  try {
    build_quadratic_problem(1, 4, 1.0);
    FAIL();
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("N must exceed 1"), std::string::npos);
  }
  EXPECT_THROW(build_quadratic_problem(4, 0, 1.0), InvalidArgument);
  try {
    build_quadratic_problem(4, 2, 0.0);
    FAIL();
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("mu"), std::string::npos);
  }
}

TEST(Problem, BlocksArePositiveSemidefinite) {
  const auto prob = default_problem();
  for (const auto& c : prob.clients()) EXPECT_GE(min_eigenvalue(c.dense_matrix()), -1e-10);
}

TEST(Problem, PerturbationsSumToZeroExactly) {
  const auto prob = default_problem();
  for (const auto& c : prob.clients()) {
    Vector sum = Vector::Zero(c.dimension());
    for (int y = 0; y < c.datapoints(); ++y) sum += c.perturbations().col(y);
    EXPECT_EQ(sum.norm(), 0.0);
    EXPECT_GT(c.perturbations().norm(), 0.0);
  }
}

TEST(Loss, ZeroAtOrigin) {
  const auto prob = default_problem();
  const Vector w = Vector::Zero(prob.dimension());
  for (const auto& c : prob.clients()) EXPECT_EQ(local_loss(c, w), 0.0);
}

TEST(Loss, FirstClientAtFirstBasisVector) {
  // 1/2 * A_1[1,1] - b_1[1] = 1/2 * 2 - 1 = 0, plus the regularizer mu/2.
  const double mu = 0.5;
  const auto prob = build_quadratic_problem(2, 1, mu);
  Vector w = Vector::Zero(3);
  w(0) = 1.0;
  EXPECT_NEAR(local_loss(prob.client(0), w) - 0.5 * mu, 0.0, 1e-15);
}

TEST(Loss, AverageOfLocalLossesIsGlobal) {
  const auto prob = default_problem();
  Stream rng(11);
  for (int i = 0; i < 100; ++i) {
    const Vector w = random_vector(prob.dimension(), rng);
    double sum = 0.0;
    for (const auto& c : prob.clients()) sum += local_loss(c, w);
    const double global = global_loss(prob, w);
    EXPECT_LE(std::abs(sum / prob.num_clients() - global), 1e-12 * std::max(1.0, std::abs(global)));
  }
}

TEST(Loss, DimensionMismatchThrows) {
  const auto prob = default_problem();
  EXPECT_THROW(local_loss(prob.client(0), Vector::Zero(5)), InvalidArgument);
  EXPECT_THROW(local_gradient(prob.client(0), Vector::Zero(5)), InvalidArgument);
}

TEST(Gradient, ClosedFormAtOrigin) {
  const auto prob = default_problem();
  const Vector w = Vector::Zero(prob.dimension());
  Vector minus_e1 = Vector::Zero(prob.dimension());
  minus_e1(0) = -1.0;
  EXPECT_EQ(local_gradient(prob.client(0), w), minus_e1);
  for (int k = 1; k < prob.num_clients(); ++k) EXPECT_EQ(local_gradient(prob.client(k), w).norm(), 0.0);
}

TEST(Gradient, MatchesDenseFormula) {
  const auto prob = default_problem();
  Stream rng(3);
  for (const auto& c : prob.clients()) {
    const Vector w = random_vector(prob.dimension(), rng);
    const Vector want = c.dense_matrix() * w - c.b() + c.mu() * w;
    EXPECT_LE((local_gradient(c, w) - want).norm(), 1e-12);
  }
}

TEST(Gradient, CentralFiniteDifferences) {
  const auto prob = build_quadratic_problem(4, 3, 0.3, 5);
  Stream rng(9);
  const double h = 1e-5;
  for (const auto& c : prob.clients()) {
    const Vector w = random_vector(prob.dimension(), rng);
    const Vector g = local_gradient(c, w);
    Vector fd(w.size());
    for (int i = 0; i < w.size(); ++i) {
      Vector wp = w, wm = w;
      wp(i) += h;
      wm(i) -= h;
      fd(i) = (local_loss(c, wp) - local_loss(c, wm)) / (2 * h);
    }
    EXPECT_LE((fd - g).norm(), 1e-6 * std::max(1.0, g.norm()));
  }
}

TEST(Gradient, StrongConvexityAndSmoothness) {
  const auto prob = default_problem();
  const auto c = compute_constants(prob);
  Stream rng(21);
  for (int i = 0; i < 50; ++i) {
    const auto& client = prob.client(i % prob.num_clients());
    const Vector w = random_vector(prob.dimension(), rng);
    const Vector v = random_vector(prob.dimension(), rng);
    const double lower = local_loss(client, w) + local_gradient(client, w).dot(v - w) + 0.5 * c.mu * (v - w).squaredNorm();
    EXPECT_GE(local_loss(client, v), lower - 1e-10);
    EXPECT_LE((local_gradient(client, w) - local_gradient(client, v)).norm(), c.L * (w - v).norm() * (1 + 1e-12));
  }
}

TEST(StochasticGradient, FullSampleIsExactLocalGradient) {
  const auto prob = default_problem();
  Stream rng(4);
  std::vector<int> all(static_cast<std::size_t>(prob.datapoints()));
  for (int i = 0; i < prob.datapoints(); ++i) all[static_cast<std::size_t>(i)] = i;
  for (const auto& c : prob.clients()) {
    const Vector w = random_vector(prob.dimension(), rng);
    EXPECT_EQ(stochastic_gradient(c, w, all), local_gradient(c, w));
  }
}

TEST(StochasticGradient, SingleDatapointIsShiftedGradient) {
  const auto prob = default_problem();
  const auto& c = prob.client(3);
  Stream rng(5);
  const Vector w = random_vector(prob.dimension(), rng);
  const std::vector<int> one{6};
  EXPECT_LE((stochastic_gradient(c, w, one) - (local_gradient(c, w) - c.perturbations().col(6))).norm(), 1e-15);
}

TEST(StochasticGradient, MonteCarloMeanIsLocalGradient) {
  ProblemShape shape;
  shape.clients = 4;
  shape.block = 2;
  shape.mu = 0.1;
  shape.sigma_z = 0.5;
  const auto prob = build_quadratic_problem(shape, Stream(1));
  const auto& c = prob.client(1);
  Stream rng(8);
  const Vector w = random_vector(prob.dimension(), rng);
  const Vector g = local_gradient(c, w);
  Vector mean = Vector::Zero(w.size());
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) mean += stochastic_gradient(c, w, sample_without_replacement(c.datapoints(), 3, rng));
  mean /= draws;
  // per-coordinate sd of a 3-sample mean is below 0.5; 5 sigma over 1e4 draws
  EXPECT_LE((mean - g).lpNorm<Eigen::Infinity>(), 5 * 0.5 / std::sqrt(3.0 * draws));
}

TEST(StochasticGradient, RejectsBadSamples) {
  const auto prob = default_problem();
  const Vector w = Vector::Zero(prob.dimension());
  EXPECT_THROW(stochastic_gradient(prob.client(0), w, std::vector<int>{}), InvalidArgument);
  EXPECT_THROW(stochastic_gradient(prob.client(0), w, std::vector<int>{16}), InvalidArgument);
  EXPECT_THROW(stochastic_gradient(prob.client(0), w, std::vector<int>{2, 2}), InvalidArgument);
}

TEST(Minimizer, TwoClientSystemAgainstHandInverse) {
  // (A/2 + I) w = e1/2 with A = tridiag(-1,2,-1) of size 3:
  // [[2,-1/2,0],[-1/2,2,-1/2],[0,-1/2,2]] w = [1/2,0,0].
  // Inverse first column (cofactors / det): det = 7, column = [15, 4, 1] / 28.
  const auto prob = build_quadratic_problem(2, 1, 1.0);
  const auto m = solve_minimizer(prob);
  Vector want(3);
  want << 15.0 / 56.0, 4.0 / 56.0, 1.0 / 56.0;
  EXPECT_LE((m.w_star - want).norm(), 1e-14);
  EXPECT_NEAR(m.F_star, -0.5 * 0.5 * want(0), 1e-15);
}

TEST(Minimizer, ResidualOnDefaultProblem) {
  const auto prob = default_problem();
  const auto m = solve_minimizer(prob);
  const double rhs = (assembled_b(prob) / prob.num_clients()).norm();
  EXPECT_LE(global_gradient(prob, m.w_star).norm(), 1e-10 * std::max(1.0, rhs));
  EXPECT_NEAR(global_loss(prob, m.w_star), m.F_star, 1e-14);
}

TEST(Constants, TridiagonalEigenvalueClosedForm) {
  const auto prob = build_quadratic_problem(2, 1, 1.0);
  EXPECT_NEAR(max_eigenvalue(assembled_matrix(prob)), 2.0 + std::numbers::sqrt2, 1e-12);
  // 2 - 2 cos(k pi/(d+1)) for d = 97, k = 97
  const auto big = default_problem();
  EXPECT_NEAR(max_eigenvalue(assembled_matrix(big)), 2.0 - 2.0 * std::cos(97.0 * std::numbers::pi / 98.0), 1e-10);
}

TEST(Constants, DefaultProblem) {
  const auto prob = default_problem();
  const auto c = compute_constants(prob);
  EXPECT_EQ(c.mu, 2e-4);
  EXPECT_LE(c.mu, c.L);
  EXPECT_GE(c.Gamma, 0.0);
  EXPECT_GE(c.beta1, 0.0);
  EXPECT_EQ(c.beta2, 2.0);
  double lam = 0.0;
  for (const auto& client : prob.clients()) lam = std::max(lam, max_eigenvalue(client.dense_matrix()));
  EXPECT_NEAR(c.L, lam + c.mu, 1e-8);
  EXPECT_NEAR(c.initial_delta, solve_minimizer(prob).w_star.norm(), 1e-15);
  double max_z = 0.0;
  for (const auto& client : prob.clients())
    for (int y = 0; y < client.datapoints(); ++y) max_z = std::max(max_z, client.perturbations().col(y).squaredNorm());
  EXPECT_DOUBLE_EQ(c.beta1, 2.0 * max_z);
}

TEST(Constants, SingleDatapointHasNoPerturbation) {
  ProblemShape shape;
  shape.clients = 3;
  shape.block = 2;
  shape.mu = 0.5;
  shape.datapoints = 1;
  const auto c = compute_constants(build_quadratic_problem(shape, Stream(2)));
  EXPECT_EQ(c.beta1, 0.0);
  EXPECT_GE(c.beta2, 1.0);
}

TEST(Constants, HeterogeneityGapByDirectMinimization) {
  const auto prob = build_quadratic_problem(3, 2, 0.4, 1);
  const auto c = compute_constants(prob);
  double avg = 0.0;
  for (const auto& client : prob.clients()) {
    const Matrix h = client.dense_matrix() + client.mu() * Matrix::Identity(prob.dimension(), prob.dimension());
    const Vector w = h.ldlt().solve(client.b());
    avg += local_loss(client, w);
  }
  avg /= prob.num_clients();
  EXPECT_NEAR(c.Gamma, solve_minimizer(prob).F_star - avg, 1e-14);
  EXPECT_GE(c.Gamma, 0.0);
}

TEST(Constants, SuboptimalityMatchesLossDifference) {
  const auto prob = default_problem();
  const auto c = compute_constants(prob);
  Stream rng(6);
  const Vector w = random_vector(prob.dimension(), rng, 0.1);
  EXPECT_NEAR(suboptimality(prob, w, c.w_star), global_loss(prob, w) - c.F_star, 1e-12);
}

TEST(Rng, StreamsAreReproducibleAndDistinct) {
  const Stream master = master_stream(42);
  Stream a = master.child("schedule").child(3);
  Stream b = master.child("schedule").child(3);
  Stream c = master.child("sampling").child(3);
  EXPECT_EQ(a(), b());
  EXPECT_NE(master.child("schedule").child(3)(), c());
}

TEST(Rng, SampleWithoutReplacementIsSortedSubset) {
  Stream rng(1);
  for (int i = 0; i < 200; ++i) {
    const auto s = sample_without_replacement(10, 4, rng);
    ASSERT_EQ(s.size(), 4u);
    for (std::size_t j = 1; j < s.size(); ++j) ASSERT_LT(s[j - 1], s[j]);
    ASSERT_GE(s.front(), 0);
    ASSERT_LT(s.back(), 10);
  }
}
