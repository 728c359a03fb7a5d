// SPDX-License-Identifier: Apache-2.0
#pragma once

// Orchestration: runs every (algorithm, M, E) cell of a config across seeds and
// writes trace.csv, bounds.json, gain.csv and manifest.json.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "fedmm/bounds.hpp"
#include "fedmm/engine.hpp"
#include "fedmm/experiment/config.hpp"
#include "fedmm/experiment/io.hpp"
#include "fedmm/metrics.hpp"
#include "fedmm/problem.hpp"
#include "fedmm/version.hpp"

namespace fedmm::experiment {

namespace fs = std::filesystem;

using Logger = std::function<void(const std::string&)>;

struct RunOptions {
  int jobs = 1;
  Logger log;  // progress lines; may be empty
};

struct CellResult {
  Algorithm algo = Algorithm::kMfaRand;
  int M = 1;
  int E = 1;
  std::optional<double> G;
  std::vector<TrainingTrace> traces;       // empty when traces were not kept
  std::vector<std::vector<double>> mean;   // seed-mean Delta per model, element t-1 = round t
  Json bounds;                             // null unless requested
  int gap_floored = 0;
};

struct ExperimentResult {
  ExperimentConfig config;
  ProblemConstants constants;
  std::vector<CellResult> cells;
  std::vector<GainRow> gains;
  std::vector<std::string> warnings;
};

inline Json constants_json(const QuadraticProblem& problem, const ProblemConstants& c) {
  Json j;
  j["dimension"] = problem.dimension();
  j["mu"] = c.mu;
  j["L"] = c.L;
  j["Gamma"] = c.Gamma;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["F_star"] = c.F_star;
  j["delta1"] = c.initial_delta;
  return j;
}

inline Json bound_json(const BoundCurve& b) {
  Json j;
  j["theorem"] = std::string(to_string(b.kind));
  const auto& in = b.inputs;
  j["inputs"] = {{"mu", in.mu}, {"L", in.L},       {"G", in.G}, {"Gamma", in.Gamma}, {"beta1", in.beta1},
                 {"beta2", in.beta2}, {"beta", in.beta}, {"gamma", in.gamma}, {"V", in.V}, {"E", in.E},
                 {"M", in.M},   {"N", in.N},       {"datapoints", in.datapoints}, {"delta1", in.delta1}};
  j["hypotheses"] = Json::array();
  for (const auto& h : b.hypotheses) j["hypotheses"].push_back({{"name", h.name}, {"holds", h.holds}, {"margin", h.margin}});
  if (b.kind == BoundKind::kTheorem1) {
    j["sigma2"] = b.sigma2;
    j["B"] = b.B;
    j["C"] = b.C;
    j["nu"] = b.nu;
  } else {
    j["Y"] = b.Y;
    j["Z"] = b.Z;
    j["phi"] = b.phi;
  }
  return j;
}

namespace detail {

inline void log(const RunOptions& o, const std::string& msg) {
  if (o.log) o.log(msg);
}

inline bool needs_gradient_bound(const ExperimentConfig& c) {
  return c.bounds || c.diagnostics || c.sampling.kind == SampleKind::kTheorem2;
}

inline fs::path cell_dir(const fs::path& out, const ExperimentConfig& c, Algorithm a) {
  return c.algorithms.size() > 1 ? out / std::string(to_string(a)) : out;
}

/// Bound report of one cell: the theorem matching the scheduler, its
/// hypotheses, the curve and its comparison with the seed-mean Delta.
inline Json cell_bounds(const QuadraticProblem& problem, const ProblemConstants& c, const HyperParams& hp,
                        Algorithm algo, const std::vector<TrainingTrace>& traces) {
  Json j;
  j["algo"] = std::string(to_string(algo));
  j["M"] = hp.models;
  j["E"] = hp.local_steps;
  j["G"] = c.G;
  if (hp.local_steps == 1) {
    const auto h = single_step_gain_condition(c, problem.num_clients());
    j["single_step_gain_condition"] = {{"name", h.name}, {"holds", h.holds}, {"margin", h.margin}};
  }
  if (hp.lr.kind != LrKind::kInverse) {
    j["status"] = "skipped";
    j["reason"] = "bound curves need an inverse learning-rate schedule";
    return j;
  }
  const auto in = BoundInputs::from(c, problem, hp);
  BoundCurve curve;
  try {
    curve = algo == Algorithm::kMfaRand ? theorem1_bound(in) : theorem2_bound(in);
  } catch (const HypothesisError& e) {
    j["status"] = "undefined";
    j["reason"] = e.what();
    return j;
  }
  j["status"] = curve.hypotheses_hold() ? "ok" : "hypotheses-violated";
  j["bound"] = bound_json(curve);
  if (!traces.empty()) {
    Json models = Json::array();
    for (int m = 0; m < hp.models; ++m) {
      const auto mean = mean_delta_curve(traces, m);
      const auto rep = empirical_vs_bound(mean, curve);
      models.push_back({{"model", m + 1},
                        {"violations", rep.violations.size()},
                        {"first_violation", rep.violations.empty() ? 0 : rep.violations.front()},
                        {"max_ratio", rep.max_ratio},
                        {"max_ratio_round", rep.max_ratio_round}});
    }
    j["domination"] = models;
    j["curve"] = curve.values(traces.front().rounds + 1);
  }
  if (hp.diagnostics && !traces.empty()) {
    std::size_t l3 = 0, l4 = 0, l2 = 0;
    double residual = 0.0;
    for (const auto& tr : traces) {
      const auto rep = verify_lemma3_lemma4(tr, c, hp.local_steps, problem.datapoints());
      l3 += rep.lemma3_violations.size();
      l4 += rep.lemma4_violations.size();
      l2 += rep.lemma2_violations.size();
      residual = std::max(residual, rep.max_identity_residual);
    }
    j["frame_checks"] = {{"lemma2_violations", l2},
                         {"lemma3_violations", l3},
                         {"lemma4_violations", l4},
                         {"max_identity_residual", residual}};
  }
  return j;
}

}  // namespace detail

/// Runs a config in memory. Nothing is written.
inline ExperimentResult execute(const ExperimentConfig& config, const RunOptions& opt = {}) {
  validate(config);
  ExperimentResult res;
  res.config = config;
  const Stream master = master_stream(config.master_seed);
  const QuadraticProblem problem = build_quadratic_problem(config.problem, master.child("problem"));
  res.constants = compute_constants(problem);
  const ProblemConstants& base = res.constants;

  if (config.lr.kind == LrKind::kConstant && config.lr.eta > 1.0 / base.L)
    res.warnings.push_back("constant learning rate " + format_double(config.lr.eta) + " exceeds 1/L = " +
                           format_double(1.0 / base.L));

  const bool want_gain = !config.epsilon.empty();
  const double eps_min = want_gain ? *std::min_element(config.epsilon.begin(), config.epsilon.end()) * base.initial_delta : 0.0;
  const bool keep_traces = config.trace || config.bounds || config.diagnostics;

  auto run_cell = [&](Algorithm algo, int M, int E) {
    CellResult cell;
    cell.algo = algo;
    cell.M = M;
    cell.E = E;
    HyperParams hp = config.hyper_params(M, E);
    if (algo == Algorithm::kMfaRand) hp.diagnostics = false;
    ProblemConstants c = base;
    if (detail::needs_gradient_bound(config)) {
      c.G = calibrate_gradient_bound(problem, base, hp, algo, master, config.seeds, opt.jobs);
      cell.G = c.G;
    }
    detail::log(opt, std::string(to_string(algo)) + " M=" + std::to_string(M) + " E=" + std::to_string(E));
    if (keep_traces) {
      cell.traces = run_seeds(problem, c, hp, algo, master, config.seeds, opt.jobs);
      cell.mean = mean_delta_by_model(cell.traces);
      for (const auto& tr : cell.traces)
        for (const auto& r : tr.records) cell.gap_floored += r.gap_floored ? 1 : 0;
      if (config.bounds) cell.bounds = detail::cell_bounds(problem, c, hp, algo, cell.traces);
    } else if (want_gain) {
      cell.mean = run_until_accuracy(problem, c, hp, algo, master, config.seeds, eps_min, opt.jobs);
    }
    return cell;
  };

  for (int E : config.local_steps) {
    // Single-model baseline for this E, shared by every M.
    std::optional<CellResult> baseline;
    if (want_gain) {
      const bool in_grid = std::find(config.algorithms.begin(), config.algorithms.end(), Algorithm::kFedAvgSeq) !=
                           config.algorithms.end();
      if (!in_grid) baseline = run_cell(Algorithm::kFedAvgSeq, 1, E);
    }
    for (int M : config.models) {
      for (Algorithm algo : config.algorithms) {
        res.cells.push_back(run_cell(algo, M, E));
        if (algo == Algorithm::kFedAvgSeq && !baseline) baseline = res.cells.back();
      }
    }
    if (!want_gain) continue;
    if (!baseline) baseline = run_cell(Algorithm::kFedAvgSeq, 1, E);
    for (const auto& cell : res.cells) {
      if (cell.E != E) continue;
      for (double f : config.epsilon) {
        const double eps = f * base.initial_delta;
        const auto rep = compute_gain(std::span<const double>(baseline->mean.front()), cell.mean, cell.M, eps);
        res.gains.push_back({std::string(to_string(cell.algo)), cell.M, E, eps, rep.T1, rep.TP, rep.gain});
      }
    }
  }
  return res;
}

inline Json manifest_json(const ExperimentConfig& config, const ExperimentResult& res,
                          const std::vector<const CellResult*>& cells, const QuadraticProblem& problem) {
  Json j;
  j["tool"] = "fedmm";
  j["version"] = std::string(kVersion);
  j["master_seed"] = config.master_seed;
  j["config"] = to_json(config);
  j["constants"] = constants_json(problem, res.constants);
  j["runs"] = Json::array();
  std::size_t rows = 0;
  for (const auto* cell : cells) {
    Json r;
    r["algo"] = std::string(to_string(cell->algo));
    r["M"] = cell->M;
    r["E"] = cell->E;
    r["effective_aggregation"] = std::string(to_string(config.hyper_params(cell->M, cell->E).effective_aggregation()));
    if (cell->G) r["G"] = *cell->G;
    r["gap_floored"] = cell->gap_floored;
    std::size_t n = 0;
    for (const auto& tr : cell->traces) n += tr.records.size();
    r["trace_rows"] = config.trace ? n : 0;
    rows += config.trace ? n : 0;
    j["runs"].push_back(r);
  }
  j["trace_rows"] = rows;
  j["warnings"] = res.warnings;
  return j;
}

/// Executes `config` and writes its artifact directory. With several
/// algorithms each gets a subdirectory holding its own trace and manifest.
inline ExperimentResult run_experiment(const ExperimentConfig& config, const fs::path& out, const RunOptions& opt = {}) {
  ExperimentResult res = execute(config, opt);
  fs::create_directories(out);
  const Stream master = master_stream(config.master_seed);
  const QuadraticProblem problem = build_quadratic_problem(config.problem, master.child("problem"));

  for (Algorithm algo : config.algorithms) {
    const fs::path dir = detail::cell_dir(out, config, algo);
    fs::create_directories(dir);
    std::vector<const CellResult*> cells;
    for (const auto& c : res.cells)
      if (c.algo == algo) cells.push_back(&c);
    ExperimentConfig sub = config;
    sub.algorithms = {algo};
    if (config.trace) {
      std::ofstream csv(dir / "trace.csv");
      if (!csv) throw Error("cannot write '" + (dir / "trace.csv").string() + "'");
      csv << kTraceHeader << '\n';
      for (const auto* c : cells) write_trace_rows(csv, c->traces, c->E);
    }
    if (config.bounds) {
      Json b;
      b["constants"] = constants_json(problem, res.constants);
      b["cells"] = Json::array();
      for (const auto* c : cells) b["cells"].push_back(c->bounds);
      write_json((dir / "bounds.json").string(), b);
    }
    write_json((dir / "manifest.json").string(), manifest_json(sub, res, cells, problem));
  }
  if (!res.gains.empty()) {
    std::ofstream g(out / "gain.csv");
    if (!g) throw Error("cannot write '" + (out / "gain.csv").string() + "'");
    write_gain_csv(g, res.gains);
  }
  if (config.algorithms.size() > 1) {
    std::vector<const CellResult*> all;
    for (const auto& c : res.cells) all.push_back(&c);
    write_json((out / "manifest.json").string(), manifest_json(config, res, all, problem));
  }
  return res;
}

// ---------------------------------------------------------------------------
// compare

struct CompareResult {
  std::vector<double> mean_gap_a;  // per round, averaged over seeds and models
  std::vector<double> mean_gap_b;
  double tail_variance_a = 0.0;
  double tail_variance_b = 0.0;
  double variance_ratio = 1.0;
  bool pass = false;
};

namespace detail {

struct TraceSummary {
  std::vector<double> mean_gap;
  double tail_variance = 0.0;
};

/// Per-round seed/model mean gap, and the cross-seed gap variance averaged
/// over the final `tail` rounds and all models.
inline TraceSummary summarize(const std::vector<TraceRow>& rows, int rounds, int models, int seeds, int tail) {
  std::vector<double> sum(static_cast<std::size_t>(rounds) * models, 0.0);
  std::vector<double> sum2(sum.size(), 0.0);
  for (const auto& r : rows) {
    const auto i = static_cast<std::size_t>(r.round - 1) * models + static_cast<std::size_t>(r.model - 1);
    sum.at(i) += r.gap;
    sum2.at(i) += r.gap * r.gap;
  }
  TraceSummary s;
  s.mean_gap.assign(static_cast<std::size_t>(rounds), 0.0);
  for (int t = 0; t < rounds; ++t)
    for (int m = 0; m < models; ++m) s.mean_gap[static_cast<std::size_t>(t)] += sum[static_cast<std::size_t>(t) * models + m] / seeds / models;
  const int first = std::max(0, rounds - tail);
  double var = 0.0;
  for (int t = first; t < rounds; ++t)
    for (int m = 0; m < models; ++m) {
      const auto i = static_cast<std::size_t>(t) * models + m;
      const double mean = sum[i] / seeds;
      var += seeds > 1 ? (sum2[i] - seeds * mean * mean) / (seeds - 1) : 0.0;
    }
  s.tail_variance = std::max(0.0, var / ((rounds - first) * models));
  return s;
}

}  // namespace detail

/// Compares two single-algorithm artifact directories. Prints per-round mean
/// gap difference (a - b) and the tail-variance ratio a/b.
inline CompareResult compare_runs(const fs::path& a, const fs::path& b, std::ostream& out, int tail = 100) {
  const Json ma = read_json((a / "manifest.json").string());
  const Json mb = read_json((b / "manifest.json").string());
  const auto ca = parse_config_string(ma.dump());
  const auto cb = parse_config_string(mb.dump());
  std::vector<std::string> mismatched;
  auto check = [&](const char* field, bool same) {
    if (!same) mismatched.emplace_back(field);
  };
  check("problem.clients", ca.problem.clients == cb.problem.clients);
  check("problem.block", ca.problem.block == cb.problem.block);
  check("problem.mu", ca.problem.mu == cb.problem.mu);
  check("problem.datapoints", ca.problem.datapoints == cb.problem.datapoints);
  check("problem.sigma_z", ca.problem.sigma_z == cb.problem.sigma_z);
  check("models", ca.models == cb.models);
  check("local_steps", ca.local_steps == cb.local_steps);
  check("rounds", ca.rounds == cb.rounds);
  check("lr", ca.lr == cb.lr);
  check("sampling", ca.sampling == cb.sampling);
  check("aggregation", ca.aggregation == cb.aggregation);
  check("seeds.count", ca.seeds == cb.seeds);
  check("seeds.master", ca.master_seed == cb.master_seed);
  if (!mismatched.empty()) {
    std::string msg = "incompatible runs, mismatched fields:";
    for (const auto& f : mismatched) msg += " " + f;
    throw Error(msg);
  }
  if (ca.algorithms.size() != 1 || cb.algorithms.size() != 1)
    throw Error("compare needs single-algorithm directories (pass the per-algorithm subdirectories)");
  if (ca.models.size() != 1 || ca.local_steps.size() != 1)
    throw Error("compare needs directories with a single (M, E) cell");
  if (!ca.trace || !cb.trace) throw Error("compare needs trace.csv in both directories");

  const int rounds = ca.rounds, models = ca.models.front(), seeds = ca.seeds;
  const auto sa = detail::summarize(read_trace_csv((a / "trace.csv").string()), rounds, models, seeds, tail);
  const auto sb = detail::summarize(read_trace_csv((b / "trace.csv").string()), rounds, models, seeds, tail);

  CompareResult r;
  r.mean_gap_a = sa.mean_gap;
  r.mean_gap_b = sb.mean_gap;
  r.tail_variance_a = sa.tail_variance;
  r.tail_variance_b = sb.tail_variance;
  if (sb.tail_variance > 0.0) r.variance_ratio = sa.tail_variance / sb.tail_variance;
  else r.variance_ratio = sa.tail_variance > 0.0 ? INFINITY : 1.0;
  r.pass = r.variance_ratio > 1.0;

  out << "round,mean_gap_a,mean_gap_b,diff\n";
  double max_abs = 0.0;
  for (int t = 0; t < rounds; ++t) {
    const double d = sa.mean_gap[static_cast<std::size_t>(t)] - sb.mean_gap[static_cast<std::size_t>(t)];
    max_abs = std::max(max_abs, std::abs(d));
    out << t + 1 << ',' << format_double(sa.mean_gap[static_cast<std::size_t>(t)]) << ','
        << format_double(sb.mean_gap[static_cast<std::size_t>(t)]) << ',' << format_double(d) << '\n';
  }
  out << "max |diff|: " << format_double(max_abs) << '\n';
  out << "tail variance (last " << std::min(tail, rounds) << " rounds): a=" << format_double(sa.tail_variance)
      << " b=" << format_double(sb.tail_variance) << " ratio=" << format_double(r.variance_ratio) << '\n';
  out << (r.pass ? "PASS" : "FAIL") << ": tail variance of " << to_string(ca.algorithms.front()) << " "
      << (r.pass ? "exceeds" : "does not exceed") << " that of " << to_string(cb.algorithms.front()) << '\n';
  return r;
}

}  // namespace fedmm::experiment
