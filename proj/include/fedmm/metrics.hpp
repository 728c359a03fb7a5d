// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedmm/error.hpp"
#include "fedmm/problem.hpp"

namespace fedmm {

inline constexpr double kGapFloor = 1e-16;
inline constexpr double kGapSlack = 1e-9;

/// Euclidean distance |w - w*|.
inline double error_delta(const Vector& w, const Vector& w_star) {
  if (w.size() != w_star.size()) throw InvalidArgument("dimension mismatch in error_delta");
  return (w - w_star).norm();
}

/// log10 of a suboptimality, floored at kGapFloor.
inline double log_gap(double suboptimality, bool* floored = nullptr) {
  if (suboptimality < -kGapSlack) throw NumericalError("loss below the minimum: the minimizer is wrong");
  const bool hit = suboptimality < kGapFloor;
  if (floored) *floored = hit;
  return std::log10(hit ? kGapFloor : suboptimality);
}

/// log10(max(F(w) - F*, floor)).
inline double gap(double loss, double loss_star, bool* floored = nullptr) {
  return log_gap(loss - loss_star, floored);
}

/// First 1-based round whose value is <= epsilon, or nullopt if never.
inline std::optional<int> rounds_to_accuracy(std::span<const double> per_round, double epsilon) {
  for (std::size_t i = 0; i < per_round.size(); ++i)
    if (per_round[i] <= epsilon) return static_cast<int>(i) + 1;
  return std::nullopt;
}

/// All models must reach epsilon; the slowest one decides.
inline std::optional<int> rounds_to_accuracy(const std::vector<std::vector<double>>& per_model, double epsilon) {
  std::optional<int> worst;
  for (const auto& curve : per_model) {
    const auto t = rounds_to_accuracy(std::span<const double>(curve), epsilon);
    if (!t) return std::nullopt;
    worst = std::max(worst.value_or(0), *t);
  }
  return worst;
}

struct GainReport {
  int models = 1;
  double epsilon = 0.0;
  std::optional<int> T1;
  std::optional<int> TP;
  std::optional<double> gain;
  std::vector<double> per_seed;  // filled when per-seed traces are supplied
  std::string reason;            // why the gain was withheld
};

inline GainReport compute_gain(std::optional<int> T1, std::optional<int> TP, int models, double epsilon) {
  GainReport r;
  r.models = models;
  r.epsilon = epsilon;
  r.T1 = T1;
  r.TP = TP;
  if (!T1) r.reason = "single-model FedAvg did not reach epsilon within the round cap";
  else if (!TP) r.reason = "multi-model run did not reach epsilon within the round cap";
  else r.gain = static_cast<double>(models) * *T1 / static_cast<double>(*TP);
  return r;
}

/// g = M T1(eps) / TP(M, eps) from seed-mean Delta curves.
inline GainReport compute_gain(std::span<const double> single_model, const std::vector<std::vector<double>>& multi_model,
                               int models, double epsilon) {
  return compute_gain(rounds_to_accuracy(single_model, epsilon), rounds_to_accuracy(multi_model, epsilon), models,
                      epsilon);
}

struct SeedStatistics {
  std::vector<double> mean;
  std::vector<double> variance;  // unbiased
  std::vector<double> min;
  std::vector<double> max;
};

/// Pointwise statistics across seeds. Each inner vector is one seed's curve.
inline SeedStatistics seed_statistics(const std::vector<std::vector<double>>& curves, std::size_t min_seeds = 2) {
  if (curves.size() < std::max<std::size_t>(min_seeds, 1))
    throw InvalidArgument("seed_statistics needs at least " + std::to_string(min_seeds) + " seeds, got " +
                          std::to_string(curves.size()));
  const std::size_t len = curves.front().size();
  for (const auto& c : curves)
    if (c.size() != len) throw InvalidArgument("seed curves have different lengths");
  const double s = static_cast<double>(curves.size());
  SeedStatistics out;
  out.mean.assign(len, 0.0);
  out.variance.assign(len, 0.0);
  out.min.assign(len, std::numeric_limits<double>::infinity());
  out.max.assign(len, -std::numeric_limits<double>::infinity());
  for (std::size_t t = 0; t < len; ++t) {
    double sum = 0.0;
    for (const auto& c : curves) {
      sum += c[t];
      out.min[t] = std::min(out.min[t], c[t]);
      out.max[t] = std::max(out.max[t], c[t]);
    }
    const double mean = sum / s;
    double ss = 0.0;
    for (const auto& c : curves) ss += (c[t] - mean) * (c[t] - mean);
    out.mean[t] = mean;
    out.variance[t] = curves.size() > 1 ? ss / (s - 1.0) : 0.0;
  }
  return out;
}

/// Least-squares slope of log(y) against log(x) for x in [x_begin, x_end].
/// `y[i]` belongs to x = i + 1.
inline double loglog_slope(std::span<const double> y, int x_begin, int x_end) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = 0;
  for (int x = x_begin; x <= x_end && x <= static_cast<int>(y.size()); ++x) {
    const double v = y[static_cast<std::size_t>(x - 1)];
    if (!(v > 0.0)) throw InvalidArgument("loglog_slope needs positive values");
    const double lx = std::log(static_cast<double>(x));
    const double ly = std::log(v);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
    ++n;
  }
  if (n < 2) throw InvalidArgument("loglog_slope needs at least two points");
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace fedmm
