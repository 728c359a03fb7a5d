// SPDX-License-Identifier: Apache-2.0
#pragma once

// Closed-form convergence bounds for the two schedulers, their hypothesis
// checks, and numerical verifiers for the supporting inequalities.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedmm/engine.hpp"
#include "fedmm/error.hpp"
#include "fedmm/problem.hpp"
#include "fedmm/rng.hpp"
#include "fedmm/trace.hpp"

namespace fedmm {

enum class BoundKind { kTheorem1, kTheorem2, kCorollary1 };

inline std::string_view to_string(BoundKind k) {
  switch (k) {
    case BoundKind::kTheorem1: return "theorem1";
    case BoundKind::kTheorem2: return "theorem2";
    case BoundKind::kCorollary1: return "corollary1";
  }
  return "?";
}

struct Hypothesis {
  std::string name;  // e.g. "beta > 1/mu"
  bool holds = false;
  double margin = 0.0;  // lhs - rhs
};

struct BoundInputs {
  double mu = 0.0;
  double L = 0.0;
  double G = 0.0;
  double Gamma = 0.0;
  double beta1 = 0.0;
  double beta2 = 2.0;
  double beta = 0.0;
  double gamma = 0.0;
  double V = 0.0;
  int E = 1;
  int M = 1;
  int N = 2;
  int datapoints = 1;
  double delta1 = 0.0;  // Delta at round 1

  static BoundInputs from(const ProblemConstants& c, const QuadraticProblem& problem, const HyperParams& hp) {
    BoundInputs in;
    in.mu = c.mu;
    in.L = c.L;
    in.G = c.G;
    in.Gamma = c.Gamma;
    in.beta1 = c.beta1;
    in.beta2 = c.beta2;
    in.beta = hp.lr.beta;
    in.gamma = hp.lr.gamma;
    in.V = hp.sampling.kind == SampleKind::kTheorem2 ? hp.sampling.V : 0.0;
    in.E = hp.local_steps;
    in.M = hp.models;
    in.N = problem.num_clients();
    in.datapoints = problem.datapoints();
    in.delta1 = c.initial_delta;
    return in;
  }
};

struct BoundCurve {
  BoundKind kind = BoundKind::kTheorem1;
  BoundInputs inputs;
  std::vector<Hypothesis> hypotheses;
  // random-schedule terms
  double sigma2 = 0.0;
  double B = 0.0;
  double C = 0.0;
  double nu = 0.0;
  // round-robin terms
  double Y = 0.0;
  double Z = 0.0;
  double phi = 0.0;

  bool hypotheses_hold() const {
    return std::all_of(hypotheses.begin(), hypotheses.end(), [](const Hypothesis& h) { return h.holds; });
  }

  /// Bound at 1-based round t.
  double at(double t) const {
    if (kind == BoundKind::kTheorem1) return std::sqrt(nu) / std::sqrt(t + inputs.gamma);
    return phi / (t / inputs.M + inputs.gamma);
  }

  /// Values for rounds 1..count.
  std::vector<double> values(int count) const {
    std::vector<double> out(static_cast<std::size_t>(std::max(count, 0)));
    for (int t = 1; t <= count; ++t) out[static_cast<std::size_t>(t - 1)] = at(t);
    return out;
  }
};

namespace detail {

inline void check_inputs(const BoundInputs& in) {
  if (in.E < 1) throw InvalidArgument("E must be at least 1");
  if (in.M < 1) throw InvalidArgument("M must be at least 1");
  if (in.N < 2) throw InvalidArgument("N must exceed 1");
  if (!(in.beta > 0.0)) throw InvalidArgument("bound curves need an inverse schedule with beta > 0");
  if (in.beta * in.mu <= 1.0)
    throw HypothesisError("beta*mu = " + std::to_string(in.beta * in.mu) +
                          " <= 1: the first branch of the bound is undefined");
}

inline Hypothesis hypothesis(std::string name, double lhs, double rhs) {
  return {std::move(name), lhs > rhs, lhs - rhs};
}

}  // namespace detail

/// t -> sqrt(nu) / sqrt(t + gamma).
inline BoundCurve theorem1_bound(const BoundInputs& in) {
  detail::check_inputs(in);
  BoundCurve c;
  c.kind = BoundKind::kTheorem1;
  c.inputs = in;
  const double E = in.E, M = in.M, N = in.N, G2 = in.G * in.G;
  c.sigma2 = 4.0 * (in.beta1 + in.beta2 * G2);
  // (1/N^2) sum_k sigma_k^2 with one shared sigma^2
  c.B = 6.0 * in.L * in.Gamma + c.sigma2 / N + 8.0 * (E - 1.0) * (E - 1.0) * G2;
  c.C = (M - 1.0) / (N - 1.0) * E * E * G2;
  const double first = in.beta * in.beta * (c.B + c.C) / (in.beta * in.mu - 1.0);
  const double second = in.delta1 * in.delta1 * (1.0 + in.gamma);
  c.nu = std::max(first, second);
  c.hypotheses.push_back(detail::hypothesis("beta > 1/mu", in.beta, 1.0 / in.mu));
  c.hypotheses.push_back(detail::hypothesis("gamma > 4*L*beta - 1", in.gamma, 4.0 * in.L * in.beta - 1.0));
  return c;
}

/// t -> phi / (t/M + gamma). V = 0 gives the full-gradient corollary.
inline BoundCurve theorem2_bound(const BoundInputs& in) {
  detail::check_inputs(in);
  if (in.V < 0.0) throw InvalidArgument("V must be non-negative");
  BoundCurve c;
  c.kind = in.V == 0.0 ? BoundKind::kCorollary1 : BoundKind::kTheorem2;
  c.inputs = in;
  const double E = in.E, M = in.M;
  c.Y = in.L * in.G * E * E * (M - 1.0) / (2.0 * M);
  c.Z = in.L * in.G * E * (E - 1.0);
  const double lead = in.beta * E * in.G * (M - 1.0) / M;
  const double first = in.beta * in.beta * (c.Y + c.Z + in.V) / (in.beta * in.mu - 1.0);
  const double second = (1.0 + in.gamma) * in.delta1;
  c.phi = lead + std::max(first, second);
  c.hypotheses.push_back(detail::hypothesis("beta > 1/mu", in.beta, 1.0 / in.mu));
  c.hypotheses.push_back(detail::hypothesis("gamma > beta*L - 1", in.gamma, in.beta * in.L - 1.0));
  return c;
}

inline BoundCurve corollary1_bound(BoundInputs in) {
  in.V = 0.0;
  return theorem2_bound(in);
}

/// Copy of `curve` with nu (or phi) scaled by `factor`.
inline BoundCurve scaled_bound(BoundCurve curve, double factor) {
  curve.nu *= factor;
  curve.phi *= factor;
  return curve;
}

// ---------------------------------------------------------------------------
// Empirical domination

struct DominationReport {
  std::vector<int> violations;  // 1-based rounds where mean Delta > bound
  double max_ratio = 0.0;       // max over rounds of mean Delta / bound
  int max_ratio_round = 0;
  int rounds = 0;

  bool dominated() const { return violations.empty(); }
};

/// `mean_delta[i]` is the seed-mean Delta at round i + 1 (element 0 is the
/// initial weight).
inline DominationReport empirical_vs_bound(std::span<const double> mean_delta, const BoundCurve& bound) {
  DominationReport r;
  r.rounds = static_cast<int>(mean_delta.size());
  for (std::size_t i = 0; i < mean_delta.size(); ++i) {
    const int t = static_cast<int>(i) + 1;
    const double b = bound.at(t);
    const double ratio = mean_delta[i] / b;
    if (ratio > r.max_ratio) {
      r.max_ratio = ratio;
      r.max_ratio_round = t;
    }
    if (mean_delta[i] > b) r.violations.push_back(t);
  }
  return r;
}

/// Seed-mean Delta of one model, element 0 being the shared initial Delta.
inline std::vector<double> mean_delta_curve(const std::vector<TrainingTrace>& traces, int model) {
  if (traces.empty()) throw InvalidArgument("no traces");
  std::vector<double> mean(static_cast<std::size_t>(traces.front().rounds) + 1, 0.0);
  for (const auto& tr : traces) {
    const auto c = tr.delta_curve(model);
    if (c.size() != mean.size()) throw InvalidArgument("traces have different lengths");
    for (std::size_t i = 0; i < c.size(); ++i) mean[i] += c[i];
  }
  for (double& v : mean) v /= static_cast<double>(traces.size());
  return mean;
}

// ---------------------------------------------------------------------------
// Variance of the sampled gradient

struct Lemma1Report {
  int sample_size = 0;
  double variance = 0.0;
  double bound = 0.0;
  std::size_t subsets = 0;
  std::vector<int> witness;  // subset with the largest deviation
  bool holds() const { return variance <= bound * (1.0 + 1e-12) + 1e-300; }
  double slack() const { return bound - variance; }
};

inline double lemma1_rhs(int datapoints, int s, double beta1, double beta2, double grad_norm2) {
  const double f = static_cast<double>(datapoints - s) / datapoints;
  return 4.0 * f * f * (beta1 + beta2 * grad_norm2);
}

/// Exact E|grad(w, xi) - grad F_k(w)|^2 over every size-s subset.
inline Lemma1Report verify_lemma1_exhaustive(const QuadraticClient& client, const Vector& w, int s, double beta1,
                                             double beta2) {
  const int n = client.datapoints();
  if (n > 8) throw InvalidArgument("exhaustive mode requires at most 8 datapoints");
  if (s < 1 || s > n) throw InvalidArgument("sample size must lie in 1..datapoints");
  const Vector full = local_gradient(client, w);
  Lemma1Report r;
  r.sample_size = s;
  r.bound = lemma1_rhs(n, s, beta1, beta2, full.squaredNorm());
  double sum = 0.0;
  double worst = -1.0;
  std::vector<int> subset;
  Vector g;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    if (std::popcount(mask) != s) continue;
    subset.clear();
    for (int i = 0; i < n; ++i)
      if (mask & (1u << i)) subset.push_back(i);
    stochastic_gradient(client, w, subset, g);
    const double dev = (g - full).squaredNorm();
    sum += dev;
    ++r.subsets;
    if (dev > worst) {
      worst = dev;
      r.witness = subset;
    }
  }
  r.variance = sum / static_cast<double>(r.subsets);
  return r;
}

/// Monte-Carlo estimate with `draws` uniform size-s subsets.
inline Lemma1Report verify_lemma1_monte_carlo(const QuadraticClient& client, const Vector& w, int s, double beta1,
                                              double beta2, int draws, Stream& rng,
                                              double* standard_error = nullptr) {
  const int n = client.datapoints();
  if (s < 1 || s > n) throw InvalidArgument("sample size must lie in 1..datapoints");
  if (draws < 2) throw InvalidArgument("need at least two draws");
  const Vector full = local_gradient(client, w);
  Lemma1Report r;
  r.sample_size = s;
  r.bound = lemma1_rhs(n, s, beta1, beta2, full.squaredNorm());
  double sum = 0.0, sum2 = 0.0, worst = -1.0;
  Vector g;
  for (int i = 0; i < draws; ++i) {
    const auto subset = sample_without_replacement(n, s, rng);
    stochastic_gradient(client, w, subset, g);
    const double dev = (g - full).squaredNorm();
    sum += dev;
    sum2 += dev * dev;
    if (dev > worst) {
      worst = dev;
      r.witness = subset;
    }
  }
  r.subsets = static_cast<std::size_t>(draws);
  r.variance = sum / draws;
  if (standard_error) {
    const double var = (sum2 - sum * sum / draws) / (draws - 1);
    *standard_error = std::sqrt(std::max(var, 0.0) / draws);
  }
  return r;
}

// ---------------------------------------------------------------------------
// E centralized GD steps contract by (1 - alpha mu)^E

struct Lemma2Report {
  double lhs = 0.0;  // |u_{E+1} - w*|
  double rhs = 0.0;  // (1 - alpha mu)^E |w_1 - w*|
  std::vector<double> iterate_errors;
  bool holds() const { return lhs <= rhs * (1.0 + 1e-12) + 1e-15; }
  double slack() const { return rhs - lhs; }
};

inline Lemma2Report verify_lemma2(const QuadraticProblem& problem, const ProblemConstants& c, const Vector& w1,
                                  double alpha, int E) {
  if (E < 1) throw InvalidArgument("E must be at least 1");
  if (!(alpha > 0.0) || alpha > 1.0 / c.L * (1.0 + 1e-12)) throw InvalidArgument("alpha must lie in (0, 1/L]");
  Lemma2Report r;
  Vector u = w1;
  r.iterate_errors.push_back((u - c.w_star).norm());
  for (int p = 0; p < E; ++p) {
    u -= alpha * global_gradient(problem, u);
    r.iterate_errors.push_back((u - c.w_star).norm());
  }
  r.lhs = r.iterate_errors.back();
  r.rhs = std::pow(1.0 - alpha * c.mu, E) * r.iterate_errors.front();
  return r;
}

// ---------------------------------------------------------------------------
// Drift checks over recorded frame diagnostics

struct FrameCheck {
  int frame = 0;
  int model = 0;
  double e_norm = 0.0;
  double e_bound = 0.0;
  double d_norm = 0.0;
  double d_bound = 0.0;
  double contraction_lhs = 0.0;  // |u_{E+1} - w*|
  double contraction_rhs = 0.0;  // (1 - alpha mu)^E |w_1 - w*|
};

struct FrameLemmaReport {
  std::vector<FrameCheck> frames;
  std::vector<FrameCheck> lemma3_violations;
  std::vector<FrameCheck> lemma4_violations;
  std::vector<FrameCheck> lemma2_violations;  // only where alpha <= 1/L
  double max_identity_residual = 0.0;
  bool holds() const { return lemma3_violations.empty() && lemma4_violations.empty() && lemma2_violations.empty(); }
};

inline double lemma3_rhs(double alpha, double L, double G, int E, int M) {
  return alpha * L * G * (double(E) * E * (M - 1.0) / (2.0 * M) + double(E) * (E - 1.0));
}

inline double lemma4_rhs(int E, int datapoints, int s, double beta1, double beta2, double G) {
  return 2.0 * E * (static_cast<double>(datapoints - s) / datapoints) * std::sqrt(beta1 + beta2 * G * G);
}

inline FrameLemmaReport verify_lemma3_lemma4(const TrainingTrace& trace, const ProblemConstants& c, int E,
                                             int datapoints) {
  if (trace.frames.empty()) throw InvalidArgument("trace carries no frame diagnostics");
  FrameLemmaReport r;
  for (const auto& f : trace.frames) {
    FrameCheck k;
    k.frame = f.frame;
    k.model = f.model;
    k.e_norm = f.e_norm;
    k.e_bound = lemma3_rhs(f.alpha, c.L, c.G, E, trace.models);
    k.d_norm = f.d_norm;
    k.d_bound = lemma4_rhs(E, datapoints, f.sample_size, c.beta1, c.beta2, c.G);
    k.contraction_lhs = f.central_delta;
    k.contraction_rhs = std::pow(1.0 - f.alpha * c.mu, E) * f.start_delta;
    r.frames.push_back(k);
    const double tol = 1e-12;
    if (k.e_norm > k.e_bound * (1.0 + tol) + 1e-14) r.lemma3_violations.push_back(k);
    if (k.d_norm > k.d_bound * (1.0 + tol) + 1e-14) r.lemma4_violations.push_back(k);
    if (f.alpha <= 1.0 / c.L && k.contraction_lhs > k.contraction_rhs * (1.0 + tol) + 1e-14)
      r.lemma2_violations.push_back(k);
    r.max_identity_residual = std::max(r.max_identity_residual, f.identity_residual);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Bound-based gain and the E = 1 condition

/// First round whose bound value is <= epsilon, searching up to `cap`.
inline std::optional<long long> bound_rounds_to_accuracy(const BoundCurve& curve, double epsilon,
                                                         long long cap = 100'000'000) {
  if (!(epsilon > 0.0)) return std::nullopt;
  if (curve.at(static_cast<double>(cap)) > epsilon) return std::nullopt;
  long long lo = 1, hi = cap;
  if (curve.at(1.0) <= epsilon) return 1;
  while (hi - lo > 1) {
    const long long mid = lo + (hi - lo) / 2;
    if (curve.at(static_cast<double>(mid)) <= epsilon) hi = mid;
    else lo = mid;
  }
  return hi;
}

struct BoundGain {
  std::optional<long long> T1;
  std::optional<long long> TP;
  std::optional<double> gain;
};

inline BoundGain bound_gain(const BoundCurve& single, const BoundCurve& multi, double epsilon) {
  BoundGain g;
  g.T1 = bound_rounds_to_accuracy(single, epsilon);
  g.TP = bound_rounds_to_accuracy(multi, epsilon);
  if (g.T1 && g.TP) g.gain = static_cast<double>(multi.inputs.M) * static_cast<double>(*g.T1) / static_cast<double>(*g.TP);
  return g;
}

/// N > 1 + 6 L Gamma / G^2, the client-count condition for a gain above one
/// at E = 1.
inline Hypothesis single_step_gain_condition(const ProblemConstants& c, int N) {
  const double rhs = c.G > 0.0 ? 1.0 + 6.0 * c.L * c.Gamma / (c.G * c.G) : INFINITY;
  return detail::hypothesis("N > 1 + 6*L*Gamma/G^2", static_cast<double>(N), rhs);
}

}  // namespace fedmm
