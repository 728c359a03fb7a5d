// SPDX-License-Identifier: Apache-2.0
#pragma once

// Named experiment presets. Each preset is one or more configs; several
// configs are written to subdirectories named after each config.

#include <string>
#include <string_view>
#include <vector>

#include "fedmm/experiment/config.hpp"
#include "fedmm/problem.hpp"
#include "fedmm/rng.hpp"

namespace fedmm::experiment {

struct Preset {
  std::string name;
  std::string description;
  std::vector<ExperimentConfig> configs;
};

namespace detail {

inline ExperimentConfig shape_config(std::string name, int M, LrSchedule lr) {
  ExperimentConfig c;
  c.name = std::move(name);
  c.problem = ProblemShape{};  // N = 24, p = 4, mu = 2e-4
  c.algorithms = {Algorithm::kMfaRand, Algorithm::kMfaRR};
  c.models = {M};
  c.local_steps = {5};
  c.rounds = 1000;
  c.lr = lr;
  c.seeds = 20;
  return c;
}

/// Smoothness constant of a shape under the default problem stream.
inline double smoothness(const ProblemShape& shape, std::uint64_t master_seed) {
  const auto problem = build_quadratic_problem(shape, master_stream(master_seed).child("problem"));
  return compute_constants(problem).L;
}

}  // namespace detail

/// Rescaled problem where beta > 1/mu is feasible. beta = 1.01/mu; gamma sits
/// just above each scheduler's threshold (4 L beta - 1 or beta L - 1).
inline std::vector<ExperimentConfig> bound_configs(std::uint64_t master_seed = 0, int seeds = 20, int rounds = 500) {
  ProblemShape shape;
  shape.clients = 4;
  shape.block = 2;
  shape.mu = 0.1;
  const double L = detail::smoothness(shape, master_seed);
  const double beta = 1.01 / shape.mu;

  ExperimentConfig rand;
  rand.name = "bounds-mfa-rand";
  rand.problem = shape;
  rand.algorithms = {Algorithm::kMfaRand};
  rand.models = {2};
  rand.local_steps = {2};
  rand.rounds = rounds;
  rand.lr = LrSchedule::inverse(beta, 4.0 * L * beta - 1.0 + 0.01, LrGranularity::kRound);
  rand.seeds = seeds;
  rand.master_seed = master_seed;
  rand.bounds = true;

  ExperimentConfig rr = rand;
  rr.name = "bounds-mfa-rr";
  rr.algorithms = {Algorithm::kMfaRR};
  rr.lr = LrSchedule::inverse(beta, beta * L - 1.0 + 0.01, LrGranularity::kFrame);
  return {rand, rr};
}

inline std::vector<Preset> presets() {
  const auto decay = LrSchedule::inverse(30.0, 100.0, LrGranularity::kRound);
  const auto constant = LrSchedule::constant(0.1);
  std::vector<Preset> out;
  out.push_back({"fig1", "M=2, constant lr 0.1, mfa-rand vs mfa-rr, 20 seeds, 1000 rounds",
                 {detail::shape_config("fig1", 2, constant)}});
  out.push_back({"fig2", "M=2, lr 30/(100+t), mfa-rand vs mfa-rr, 20 seeds, 1000 rounds",
                 {detail::shape_config("fig2", 2, decay)}});
  out.push_back({"fig3", "M=12, constant lr 0.1, mfa-rand vs mfa-rr, 20 seeds, 1000 rounds",
                 {detail::shape_config("fig3", 12, constant)}});
  out.push_back({"fig4", "M=12, lr 30/(100+t), mfa-rand vs mfa-rr, 20 seeds, 1000 rounds",
                 {detail::shape_config("fig4", 12, decay)}});

  ExperimentConfig gain = detail::shape_config("fig8", 1, constant);
  gain.models = {2, 3, 4, 6, 8, 12};
  gain.local_steps = {1, 5, 10};
  gain.rounds = 50000;  // cap; runs stop once every epsilon is reached
  gain.trace = false;
  gain.epsilon = {0.5, 0.2};
  out.push_back({"fig8", "gain vs M for E in {1,5,10}, N=24, epsilon in {0.5,0.2} x Delta(1)", {gain}});

  out.push_back({"bounds", "rescaled problem (N=4, p=2, mu=0.1): bound curves and domination, 500 rounds",
                 bound_configs()});
  return out;
}

inline Preset find_preset(std::string_view name) {
  for (auto& p : presets())
    if (p.name == name) return p;
  throw ConfigError("--preset", "unknown preset '" + std::string(name) + "'");
}

}  // namespace fedmm::experiment
