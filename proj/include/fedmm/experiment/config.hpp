// SPDX-License-Identifier: Apache-2.0
#pragma once

// Experiment configuration: a YAML tree (JSON is accepted as a subset).
//
//   name: fig1
//   problem: {clients: 24, block: 4, mu: 2.0e-4, datapoints: 16, sigma_z: 0.01}
//   algorithms: [mfa-rand, mfa-rr]
//   models: [2]            # M, scalar or list
//   local_steps: [5]       # E, scalar or list
//   rounds: 1000
//   lr: {kind: constant, eta: 0.1}
//     | {kind: inverse, beta: 30, gamma: 100, granularity: round|frame}
//   sampling: {kind: full} | {kind: theorem2, V: 1.0} | {kind: fixed, size: 4}
//   aggregation: subset-mean | client-total
//   seeds: {count: 20, master: 0}
//   diagnostics: false
//   bounds: false
//   trace: true
//   epsilon: [0.5, 0.2, 0.1]   # multiples of Delta(1); enables gain.csv

#include <algorithm>
#include <cstdint>
#include <initializer_list>
#include <type_traits>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "fedmm/engine.hpp"
#include "fedmm/error.hpp"
#include "fedmm/problem.hpp"
#include "fedmm/scheduler.hpp"

namespace fedmm::experiment {

struct ExperimentConfig {
  std::string name = "run";
  ProblemShape problem;
  std::vector<Algorithm> algorithms{Algorithm::kMfaRand};
  std::vector<int> models{1};
  std::vector<int> local_steps{5};
  int rounds = 1000;
  LrSchedule lr = LrSchedule::constant(0.1);
  SampleSchedule sampling;
  Aggregation aggregation = Aggregation::kSubsetMean;
  int seeds = 20;
  std::uint64_t master_seed = 0;
  bool diagnostics = false;
  bool bounds = false;
  bool trace = true;
  std::vector<double> epsilon;

  bool operator==(const ExperimentConfig&) const = default;

  HyperParams hyper_params(int M, int E) const {
    HyperParams hp;
    hp.local_steps = E;
    hp.lr = lr;
    hp.sampling = sampling;
    hp.rounds = rounds;
    hp.models = M;
    hp.aggregation = aggregation;
    hp.diagnostics = diagnostics;
    return hp;
  }
};

inline std::string_view to_string(Aggregation a) {
  return a == Aggregation::kSubsetMean ? "subset-mean" : "client-total";
}

namespace detail {

template <class T>
T scalar(const YAML::Node& node, const std::string& field) {
  try {
    return node.as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError(field, "expected a " + std::string(std::is_same_v<T, std::string> ? "string"
                                                         : std::is_integral_v<T>      ? "integer"
                                                         : std::is_same_v<T, bool>    ? "boolean"
                                                                                      : "number"));
  }
}

template <class T>
void read(const YAML::Node& parent, const char* key, T& out, const std::string& prefix = "") {
  const auto node = parent[key];
  if (node) out = scalar<T>(node, prefix + key);
}

template <class T>
std::vector<T> scalar_or_list(const YAML::Node& node, const std::string& field) {
  std::vector<T> out;
  if (node.IsSequence()) {
    for (std::size_t i = 0; i < node.size(); ++i) out.push_back(scalar<T>(node[i], field + "[" + std::to_string(i) + "]"));
  } else {
    out.push_back(scalar<T>(node, field));
  }
  if (out.empty()) throw ConfigError(field, "must not be empty");
  return out;
}

inline void check_keys(const YAML::Node& node, const std::string& prefix, std::initializer_list<std::string_view> allowed) {
  if (!node.IsMap()) throw ConfigError(prefix.empty() ? "<root>" : prefix, "expected a mapping");
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw ConfigError(prefix + key, "unknown key");
  }
}

}  // namespace detail

inline void validate(const ExperimentConfig& c) {
  if (c.problem.clients < 2) throw ConfigError("problem.clients", "N must exceed 1");
  if (c.problem.block < 1) throw ConfigError("problem.block", "p must be at least 1");
  if (!(c.problem.mu > 0.0)) throw ConfigError("problem.mu", "mu must be positive");
  if (c.problem.datapoints < 1) throw ConfigError("problem.datapoints", "must be at least 1");
  if (!(c.problem.sigma_z >= 0.0)) throw ConfigError("problem.sigma_z", "must be non-negative");
  if (c.algorithms.empty()) throw ConfigError("algorithms", "must not be empty");
  for (int M : c.models) {
    if (M < 1) throw ConfigError("models", "M must be at least 1");
    if (c.problem.clients % M != 0) throw ConfigError("models", "N must be an integral multiple of M");
    for (auto a : c.algorithms)
      if (a == Algorithm::kFedAvgSeq && M != 1) throw ConfigError("models", "fedavg-seq requires M = 1");
  }
  for (int E : c.local_steps)
    if (E < 1) throw ConfigError("local_steps", "E must be at least 1");
  if (c.rounds < 1) throw ConfigError("rounds", "T must be at least 1");
  if (c.seeds < 1) throw ConfigError("seeds.count", "must be at least 1");
  if (c.lr.kind == LrKind::kConstant && !(c.lr.eta > 0.0)) throw ConfigError("lr.eta", "must be positive");
  if (c.lr.kind == LrKind::kInverse) {
    if (!(c.lr.beta > 0.0)) throw ConfigError("lr.beta", "must be positive");
    if (!(c.lr.gamma >= 0.0)) throw ConfigError("lr.gamma", "must be non-negative");
  }
  if (c.sampling.kind == SampleKind::kTheorem2 && !(c.sampling.V >= 0.0))
    throw ConfigError("sampling.V", "must be non-negative");
  if (c.sampling.kind == SampleKind::kFixed && (c.sampling.size < 1 || c.sampling.size > c.problem.datapoints))
    throw ConfigError("sampling.size", "must lie in 1..problem.datapoints");
  for (double e : c.epsilon)
    if (!(e > 0.0 && e < 1.0)) throw ConfigError("epsilon", "factors of Delta(1) must lie in (0, 1)");
  if (c.diagnostics) {
    for (auto a : c.algorithms)
      if (a == Algorithm::kMfaRand) throw ConfigError("diagnostics", "frame diagnostics need mfa-rr or fedavg-seq");
    if (c.lr.kind == LrKind::kInverse && c.lr.granularity == LrGranularity::kRound)
      for (int M : c.models)
        if (M > 1) throw ConfigError("diagnostics", "frame diagnostics need lr.granularity: frame when M > 1");
  }
}

inline ExperimentConfig parse_config(const YAML::Node& root) {
  using detail::read;
  ExperimentConfig c;
  // A manifest echoes the config under "config".
  const YAML::Node node = root.IsMap() && root["config"] ? root["config"] : root;
  detail::check_keys(node, "",
                     {"name", "problem", "algorithms", "algorithm", "models", "local_steps", "rounds", "lr",
                      "sampling", "aggregation", "seeds", "diagnostics", "bounds", "trace", "epsilon"});
  read(node, "name", c.name);
  if (const auto p = node["problem"]) {
    detail::check_keys(p, "problem.", {"clients", "block", "mu", "datapoints", "sigma_z"});
    read(p, "clients", c.problem.clients, "problem.");
    read(p, "block", c.problem.block, "problem.");
    read(p, "mu", c.problem.mu, "problem.");
    read(p, "datapoints", c.problem.datapoints, "problem.");
    read(p, "sigma_z", c.problem.sigma_z, "problem.");
  }
  auto parse_algos = [](const YAML::Node& n, const std::string& field) {
    std::vector<Algorithm> out;
    for (const auto& name : detail::scalar_or_list<std::string>(n, field)) {
      try {
        out.push_back(parse_algorithm(name));
      } catch (const InvalidArgument& e) {
        throw ConfigError(field, e.what());
      }
    }
    return out;
  };
  if (node["algorithms"] && node["algorithm"]) throw ConfigError("algorithm", "give either algorithm or algorithms");
  if (node["algorithms"]) c.algorithms = parse_algos(node["algorithms"], "algorithms");
  if (node["algorithm"]) c.algorithms = parse_algos(node["algorithm"], "algorithm");
  if (node["models"]) c.models = detail::scalar_or_list<int>(node["models"], "models");
  if (node["local_steps"]) c.local_steps = detail::scalar_or_list<int>(node["local_steps"], "local_steps");
  read(node, "rounds", c.rounds);
  if (const auto lr = node["lr"]) {
    detail::check_keys(lr, "lr.", {"kind", "eta", "beta", "gamma", "granularity"});
    std::string kind = "constant";
    read(lr, "kind", kind, "lr.");
    if (kind == "constant") {
      c.lr = LrSchedule::constant(0.1);
      read(lr, "eta", c.lr.eta, "lr.");
    } else if (kind == "inverse") {
      c.lr = LrSchedule::inverse(0.0, 0.0);
      if (!lr["beta"]) throw ConfigError("lr.beta", "required for an inverse schedule");
      if (!lr["gamma"]) throw ConfigError("lr.gamma", "required for an inverse schedule");
      read(lr, "beta", c.lr.beta, "lr.");
      read(lr, "gamma", c.lr.gamma, "lr.");
      std::string g = "round";
      read(lr, "granularity", g, "lr.");
      if (g == "round") c.lr.granularity = LrGranularity::kRound;
      else if (g == "frame") c.lr.granularity = LrGranularity::kFrame;
      else throw ConfigError("lr.granularity", "expected round or frame");
    } else {
      throw ConfigError("lr.kind", "expected constant or inverse");
    }
  }
  if (const auto s = node["sampling"]) {
    detail::check_keys(s, "sampling.", {"kind", "V", "size"});
    std::string kind = "full";
    read(s, "kind", kind, "sampling.");
    if (kind == "full") {
      c.sampling = SampleSchedule::full();
    } else if (kind == "theorem2") {
      if (!s["V"]) throw ConfigError("sampling.V", "required for theorem2 sampling");
      c.sampling = SampleSchedule::theorem2(detail::scalar<double>(s["V"], "sampling.V"));
    } else if (kind == "fixed") {
      if (!s["size"]) throw ConfigError("sampling.size", "required for fixed sampling");
      c.sampling = SampleSchedule::fixed(detail::scalar<int>(s["size"], "sampling.size"));
    } else {
      throw ConfigError("sampling.kind", "expected full, theorem2 or fixed");
    }
  }
  if (node["aggregation"]) {
    const auto a = detail::scalar<std::string>(node["aggregation"], "aggregation");
    if (a == "subset-mean") c.aggregation = Aggregation::kSubsetMean;
    else if (a == "client-total") c.aggregation = Aggregation::kClientTotal;
    else throw ConfigError("aggregation", "expected subset-mean or client-total");
  }
  if (const auto s = node["seeds"]) {
    if (s.IsMap()) {
      detail::check_keys(s, "seeds.", {"count", "master"});
      read(s, "count", c.seeds, "seeds.");
      read(s, "master", c.master_seed, "seeds.");
    } else {
      c.seeds = detail::scalar<int>(s, "seeds");
    }
  }
  read(node, "diagnostics", c.diagnostics);
  read(node, "bounds", c.bounds);
  read(node, "trace", c.trace);
  if (const auto e = node["epsilon"]; e && !(e.IsSequence() && e.size() == 0))
    c.epsilon = detail::scalar_or_list<double>(e, "epsilon");
  validate(c);
  return c;
}

inline ExperimentConfig parse_config_string(const std::string& text) {
  try {
    return parse_config(YAML::Load(text));
  } catch (const YAML::Exception& e) {
    throw ConfigError("<file>", e.what());
  }
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("--config", "cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_string(buf.str());
}

inline YAML::Node to_yaml(const ExperimentConfig& c) {
  YAML::Node n;
  n["name"] = c.name;
  n["problem"]["clients"] = c.problem.clients;
  n["problem"]["block"] = c.problem.block;
  n["problem"]["mu"] = c.problem.mu;
  n["problem"]["datapoints"] = c.problem.datapoints;
  n["problem"]["sigma_z"] = c.problem.sigma_z;
  for (auto a : c.algorithms) n["algorithms"].push_back(std::string(to_string(a)));
  for (int M : c.models) n["models"].push_back(M);
  for (int E : c.local_steps) n["local_steps"].push_back(E);
  n["rounds"] = c.rounds;
  if (c.lr.kind == LrKind::kConstant) {
    n["lr"]["kind"] = "constant";
    n["lr"]["eta"] = c.lr.eta;
  } else {
    n["lr"]["kind"] = "inverse";
    n["lr"]["beta"] = c.lr.beta;
    n["lr"]["gamma"] = c.lr.gamma;
    n["lr"]["granularity"] = c.lr.granularity == LrGranularity::kRound ? "round" : "frame";
  }
  switch (c.sampling.kind) {
    case SampleKind::kFull: n["sampling"]["kind"] = "full"; break;
    case SampleKind::kTheorem2:
      n["sampling"]["kind"] = "theorem2";
      n["sampling"]["V"] = c.sampling.V;
      break;
    case SampleKind::kFixed:
      n["sampling"]["kind"] = "fixed";
      n["sampling"]["size"] = c.sampling.size;
      break;
  }
  n["aggregation"] = std::string(to_string(c.aggregation));
  n["seeds"]["count"] = c.seeds;
  n["seeds"]["master"] = c.master_seed;
  n["diagnostics"] = c.diagnostics;
  n["bounds"] = c.bounds;
  n["trace"] = c.trace;
  if (!c.epsilon.empty())
    for (double e : c.epsilon) n["epsilon"].push_back(e);
  return n;
}

inline std::string to_yaml_string(const ExperimentConfig& c) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << to_yaml(c);
  return std::string(out.c_str()) + "\n";
}

}  // namespace fedmm::experiment
