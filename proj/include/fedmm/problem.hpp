// SPDX-License-Identifier: Apache-2.0
#pragma once

// Synthetic strongly-convex federated objective.
//
// Client k (1-based) owns a (p+1)x(p+1) chain-Laplacian block B_k placed at
// rows/cols (k-1)p .. kp. Client 1 additionally carries E_{1,1} and client N
// carries E_{d,d}, so the client matrices sum to tridiag(-1, 2, -1) of size
// d = N*p + 1. Only client 1 has a linear term (b_1 = e_1).
//
//   F_k(w) = 1/2 (w' A_k w - 2 b_k' w) + mu/2 |w|^2
//   F(w)   = 1/N sum_k F_k(w)
//
// Each client also holds `datapoints` zero-sum perturbation vectors z_{k,y};
// the datapoint loss is f_{k,y}(w) = F_k(w) - z_{k,y}' w, which averages back
// to F_k exactly.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "fedmm/error.hpp"
#include "fedmm/rng.hpp"

namespace fedmm {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

struct ProblemShape {
  int clients = 24;       // N
  int block = 4;          // p
  double mu = 2e-4;       // regularizer
  int datapoints = 16;    // datapoints per client
  double sigma_z = 0.01;  // perturbation magnitude

  int dimension() const { return clients * block + 1; }
  bool operator==(const ProblemShape&) const = default;
};

class QuadraticClient {
 public:
  QuadraticClient(int index, int offset, Matrix block, Vector b, double mu, Matrix perturbations)
      : index_(index),
        offset_(offset),
        block_(std::move(block)),
        b_(std::move(b)),
        mu_(mu),
        z_(std::move(perturbations)) {}

  /// 1-based client index k.
  int index() const { return index_; }
  int dimension() const { return static_cast<int>(b_.size()); }
  double mu() const { return mu_; }
  int datapoints() const { return static_cast<int>(z_.cols()); }

  /// First row/column touched by A_k and the dense block stored there.
  int block_offset() const { return offset_; }
  const Matrix& block() const { return block_; }
  const Vector& b() const { return b_; }

  /// Perturbations z_{k,y}, one column per datapoint.
  const Matrix& perturbations() const { return z_; }

  /// A_k as a dense d x d matrix.
  Matrix dense_matrix() const {
    Matrix a = Matrix::Zero(dimension(), dimension());
    const auto n = block_.rows();
    a.block(offset_, offset_, n, n) = block_;
    return a;
  }

  /// A_k v without forming the dense matrix.
  void apply_matrix(const Vector& v, Vector& out) const {
    out.setZero(v.size());
    const auto n = block_.rows();
    out.segment(offset_, n).noalias() = block_ * v.segment(offset_, n);
  }

 private:
  int index_;
  int offset_;
  Matrix block_;
  Vector b_;
  double mu_;
  Matrix z_;
};

class QuadraticProblem {
 public:
  QuadraticProblem(ProblemShape shape, std::vector<QuadraticClient> clients)
      : shape_(shape), clients_(std::move(clients)) {}

  const ProblemShape& shape() const { return shape_; }
  int dimension() const { return shape_.dimension(); }
  int num_clients() const { return static_cast<int>(clients_.size()); }
  double mu() const { return shape_.mu; }
  int datapoints() const { return shape_.datapoints; }

  /// 0-based access.
  const QuadraticClient& client(int k) const { return clients_.at(static_cast<std::size_t>(k)); }
  const std::vector<QuadraticClient>& clients() const { return clients_; }

 private:
  ProblemShape shape_;
  std::vector<QuadraticClient> clients_;
};

namespace detail {

inline void check_dimension(const QuadraticClient& client, const Vector& w) {
  if (w.size() != client.dimension()) {
    throw InvalidArgument("dimension mismatch: client " + std::to_string(client.index()) + " expects " +
                          std::to_string(client.dimension()) + ", got " + std::to_string(w.size()));
  }
}

inline void check_dimension(const QuadraticProblem& problem, const Vector& w) {
  if (w.size() != problem.dimension()) {
    throw InvalidArgument("dimension mismatch: problem expects " + std::to_string(problem.dimension()) +
                          ", got " + std::to_string(w.size()));
  }
}

// Zero-sum perturbations. After centring, the last column is replaced by the
// negated left-to-right sum of the others, so summing all columns in index
// order yields exactly zero in floating point.
inline Matrix zero_sum_perturbations(int dimension, int datapoints, double sigma, Stream& rng) {
  Matrix z = Matrix::Zero(dimension, datapoints);
  if (datapoints < 2 || sigma == 0.0) return z;
  for (int y = 0; y < datapoints; ++y)
    for (int i = 0; i < dimension; ++i) z(i, y) = rng.normal(sigma);
  const Vector mean = z.rowwise().mean();
  z.colwise() -= mean;
  Vector partial = Vector::Zero(dimension);
  for (int y = 0; y + 1 < datapoints; ++y) partial += z.col(y);
  z.col(datapoints - 1) = -partial;
  return z;
}

}  // namespace detail

/// Builds the N-client chain problem. Perturbations are drawn from `rng`.
inline QuadraticProblem build_quadratic_problem(const ProblemShape& shape, Stream rng) {
  if (shape.clients <= 1) throw InvalidArgument("N must exceed 1 (got " + std::to_string(shape.clients) + ")");
  if (shape.block < 1) throw InvalidArgument("p must be at least 1 (got " + std::to_string(shape.block) + ")");
  if (!(shape.mu > 0.0) || !std::isfinite(shape.mu)) throw InvalidArgument("mu must be positive");
  if (shape.datapoints < 1) throw InvalidArgument("datapoints must be at least 1");
  if (!(shape.sigma_z >= 0.0) || !std::isfinite(shape.sigma_z)) throw InvalidArgument("sigma_z must be non-negative");

  const int n = shape.clients;
  const int p = shape.block;
  const int d = shape.dimension();

  // Chain Laplacian on p+1 nodes: 1 at both ends of the diagonal, 2 inside.
  Matrix chain = Matrix::Zero(p + 1, p + 1);
  for (int i = 0; i < p; ++i) {
    chain(i, i) += 1.0;
    chain(i + 1, i + 1) += 1.0;
    chain(i, i + 1) -= 1.0;
    chain(i + 1, i) -= 1.0;
  }

  std::vector<QuadraticClient> clients;
  clients.reserve(static_cast<std::size_t>(n));
  Stream perturb = rng.child("perturbations");
  for (int k = 1; k <= n; ++k) {
    Matrix block = chain;
    if (k == 1) block(0, 0) += 1.0;
    if (k == n) block(p, p) += 1.0;
    Vector b = Vector::Zero(d);
    if (k == 1) b(0) = 1.0;
    Stream zk = perturb.child(static_cast<std::uint64_t>(k));
    clients.emplace_back(k, (k - 1) * p, std::move(block), std::move(b), shape.mu,
                         detail::zero_sum_perturbations(d, shape.datapoints, shape.sigma_z, zk));
  }
  return QuadraticProblem(shape, std::move(clients));
}

inline QuadraticProblem build_quadratic_problem(int clients, int block, double mu, std::uint64_t seed = 0) {
  ProblemShape shape;
  shape.clients = clients;
  shape.block = block;
  shape.mu = mu;
  return build_quadratic_problem(shape, master_stream(seed));
}

/// sum_k A_k as a dense matrix.
inline Matrix assembled_matrix(const QuadraticProblem& problem) {
  Matrix a = Matrix::Zero(problem.dimension(), problem.dimension());
  for (const auto& c : problem.clients()) {
    const auto n = c.block().rows();
    a.block(c.block_offset(), c.block_offset(), n, n) += c.block();
  }
  return a;
}

inline Vector assembled_b(const QuadraticProblem& problem) {
  Vector b = Vector::Zero(problem.dimension());
  for (const auto& c : problem.clients()) b += c.b();
  return b;
}

// ---------------------------------------------------------------------------
// Loss and gradient oracles

inline double local_loss(const QuadraticClient& client, const Vector& w) {
  detail::check_dimension(client, w);
  const auto n = client.block().rows();
  const auto seg = w.segment(client.block_offset(), n);
  const double quad = seg.dot(client.block() * seg);
  return 0.5 * (quad - 2.0 * client.b().dot(w)) + 0.5 * client.mu() * w.squaredNorm();
}

/// A_k w - b_k + mu w, written into `out`.
inline void local_gradient(const QuadraticClient& client, const Vector& w, Vector& out) {
  detail::check_dimension(client, w);
  out = client.mu() * w - client.b();
  const auto n = client.block().rows();
  out.segment(client.block_offset(), n).noalias() += client.block() * w.segment(client.block_offset(), n);
}

inline Vector local_gradient(const QuadraticClient& client, const Vector& w) {
  Vector g;
  local_gradient(client, w, g);
  return g;
}

/// Gradient of datapoint y (0-based).
inline Vector datapoint_gradient(const QuadraticClient& client, const Vector& w, int y) {
  Vector g = local_gradient(client, w);
  g -= client.perturbations().col(y);
  return g;
}

/// Mean of datapoint gradients over `sample` (0-based indices). The sample is
/// summed in ascending index order, so the full sample returns exactly the
/// local gradient.
inline void stochastic_gradient(const QuadraticClient& client, const Vector& w, std::span<const int> sample,
                                Vector& out) {
  if (sample.empty()) throw InvalidArgument("sample must be non-empty");
  local_gradient(client, w, out);
  if (client.datapoints() == 1) return;
  Vector drift = Vector::Zero(w.size());
  int previous = -1;
  for (int h : sample) {
    if (h < 0 || h >= client.datapoints()) throw InvalidArgument("sample index out of range: " + std::to_string(h));
    if (h <= previous) throw InvalidArgument("sample indices must be strictly increasing");
    previous = h;
    drift += client.perturbations().col(h);
  }
  out -= drift / static_cast<double>(sample.size());
}

inline Vector stochastic_gradient(const QuadraticClient& client, const Vector& w, std::span<const int> sample) {
  Vector g;
  stochastic_gradient(client, w, sample, g);
  return g;
}

inline double global_loss(const QuadraticProblem& problem, const Vector& w) {
  detail::check_dimension(problem, w);
  double total = 0.0;
  for (const auto& c : problem.clients()) total += local_loss(c, w);
  return total / problem.num_clients();
}

/// (1/N) sum_k grad F_k(w), summed in client order.
inline Vector global_gradient(const QuadraticProblem& problem, const Vector& w) {
  detail::check_dimension(problem, w);
  Vector total = Vector::Zero(w.size());
  Vector g;
  for (const auto& c : problem.clients()) {
    local_gradient(c, w, g);
    total += g;
  }
  return total / static_cast<double>(problem.num_clients());
}

/// Hessian of F applied to v: (A/N + mu I) v.
inline Vector hessian_apply(const QuadraticProblem& problem, const Vector& v) {
  detail::check_dimension(problem, v);
  Vector out = Vector::Zero(v.size());
  for (const auto& c : problem.clients()) {
    const auto n = c.block().rows();
    out.segment(c.block_offset(), n).noalias() += c.block() * v.segment(c.block_offset(), n);
  }
  out /= static_cast<double>(problem.num_clients());
  out += problem.mu() * v;
  return out;
}

// ---------------------------------------------------------------------------
// Minimizer and constants

struct Minimizer {
  Vector w_star;
  double F_star = 0.0;
};

/// Dense solve of (A/N + mu I) w = b/N.
inline Minimizer solve_minimizer(const QuadraticProblem& problem) {
  const double n = problem.num_clients();
  Matrix h = assembled_matrix(problem) / n;
  h.diagonal().array() += problem.mu();
  const Vector rhs = assembled_b(problem) / n;

  Eigen::LLT<Matrix> llt(h);
  if (llt.info() != Eigen::Success) throw NumericalError("minimizer solve failed: system not positive definite");
  Minimizer m;
  m.w_star = llt.solve(rhs);
  if (!m.w_star.allFinite()) throw NumericalError("minimizer solve produced non-finite entries");

  const double residual = (h * m.w_star - rhs).norm();
  const double tolerance = 1e-10 * std::max(1.0, rhs.norm());
  if (residual > tolerance) {
    // One step of iterative refinement before giving up.
    m.w_star += llt.solve(rhs - h * m.w_star);
    if ((h * m.w_star - rhs).norm() > tolerance) throw NumericalError("minimizer residual above tolerance");
  }
  m.F_star = global_loss(problem, m.w_star);
  return m;
}

/// Minimizer of a single client's objective, (A_k + mu I) w = b_k.
inline Minimizer solve_local_minimizer(const QuadraticClient& client) {
  Matrix h = client.dense_matrix();
  h.diagonal().array() += client.mu();
  Eigen::LLT<Matrix> llt(h);
  if (llt.info() != Eigen::Success) throw NumericalError("local minimizer solve failed");
  Minimizer m;
  m.w_star = llt.solve(client.b());
  if (!m.w_star.allFinite()) throw NumericalError("local minimizer produced non-finite entries");
  m.F_star = local_loss(client, m.w_star);
  return m;
}

/// Largest eigenvalue of a symmetric matrix.
inline double max_eigenvalue(const Matrix& symmetric) {
  Eigen::SelfAdjointEigenSolver<Matrix> solver(symmetric, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) throw NumericalError("eigensolve did not converge");
  return solver.eigenvalues().maxCoeff();
}

inline double min_eigenvalue(const Matrix& symmetric) {
  Eigen::SelfAdjointEigenSolver<Matrix> solver(symmetric, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) throw NumericalError("eigensolve did not converge");
  return solver.eigenvalues().minCoeff();
}

struct ProblemConstants {
  double mu = 0.0;
  double L = 0.0;
  double Gamma = 0.0;
  double G = 0.0;  // set by calibrate_gradient_bound; zero until then
  double beta1 = 0.0;
  double beta2 = 2.0;
  Vector w_star;
  double F_star = 0.0;
  double initial_delta = 0.0;  // |w_init - w*|
};

inline ProblemConstants compute_constants(const QuadraticProblem& problem, const Minimizer& minimizer,
                                          const Vector& w_init) {
  detail::check_dimension(problem, w_init);
  ProblemConstants c;
  c.mu = problem.mu();
  c.w_star = minimizer.w_star;
  c.F_star = minimizer.F_star;
  c.initial_delta = (w_init - minimizer.w_star).norm();

  double lambda = 0.0;
  double local_minima = 0.0;
  double max_z = 0.0;
  for (const auto& client : problem.clients()) {
    // eig(A_k) = eig(block) plus zeros, and the block is PSD.
    lambda = std::max(lambda, max_eigenvalue(client.block()));
    local_minima += solve_local_minimizer(client).F_star;
    for (int y = 0; y < client.datapoints(); ++y)
      max_z = std::max(max_z, client.perturbations().col(y).squaredNorm());
  }
  c.L = lambda + problem.mu();
  c.Gamma = minimizer.F_star - local_minima / problem.num_clients();
  // |grad F_k - z|^2 <= 2|z|^2 + 2|grad F_k|^2
  c.beta1 = 2.0 * max_z;
  c.beta2 = 2.0;
  return c;
}

inline ProblemConstants compute_constants(const QuadraticProblem& problem) {
  return compute_constants(problem, solve_minimizer(problem), Vector::Zero(problem.dimension()));
}

/// F(w) - F(w*) from the quadratic form, accurate down to round-off in w - w*.
inline double suboptimality(const QuadraticProblem& problem, const Vector& w, const Vector& w_star) {
  const Vector e = w - w_star;
  return 0.5 * e.dot(hessian_apply(problem, e));
}

}  // namespace fedmm
