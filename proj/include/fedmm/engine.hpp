// SPDX-License-Identifier: Apache-2.0
#pragma once

// Multi-model federated training loop: local E-step (S)GD per client,
// server-side aggregation, learning-rate and sample-size schedules, and the
// optional per-frame decomposition diagnostics for round-robin runs.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "fedmm/error.hpp"
#include "fedmm/metrics.hpp"
#include "fedmm/problem.hpp"
#include "fedmm/rng.hpp"
#include "fedmm/scheduler.hpp"
#include "fedmm/trace.hpp"

namespace fedmm {

// ---------------------------------------------------------------------------
// Schedules

enum class LrKind { kConstant, kInverse };
enum class LrGranularity { kRound, kFrame };

struct LrSchedule {
  LrKind kind = LrKind::kConstant;
  double eta = 0.1;
  double beta = 0.0;
  double gamma = 0.0;
  LrGranularity granularity = LrGranularity::kRound;

  static LrSchedule constant(double eta) {
    LrSchedule s;
    s.kind = LrKind::kConstant;
    s.eta = eta;
    return s;
  }

  static LrSchedule inverse(double beta, double gamma, LrGranularity g = LrGranularity::kRound) {
    LrSchedule s;
    s.kind = LrKind::kInverse;
    s.beta = beta;
    s.gamma = gamma;
    s.granularity = g;
    return s;
  }

  /// Learning rate of round t. Frame granularity uses alpha_l = beta/(l + gamma)
  /// with l = 1 + floor((t-1)/M).
  double at(int round, int models) const {
    if (kind == LrKind::kConstant) return eta;
    const double index = granularity == LrGranularity::kRound ? round : frame_of(round, models);
    return beta / (index + gamma);
  }

  /// True when the rate cannot change inside an M-round frame.
  bool frame_constant(int models) const {
    return kind == LrKind::kConstant || granularity == LrGranularity::kFrame || models == 1;
  }

  void validate() const {
    if (kind == LrKind::kConstant) {
      if (!(eta > 0.0) || !std::isfinite(eta)) throw InvalidArgument("constant learning rate must be positive");
    } else {
      if (!(beta > 0.0)) throw InvalidArgument("inverse schedule requires beta > 0");
      if (!(gamma >= 0.0)) throw InvalidArgument("inverse schedule requires gamma >= 0");
    }
  }

  bool operator==(const LrSchedule&) const = default;
};

enum class SampleKind { kFull, kTheorem2, kFixed };

struct SampleSchedule {
  SampleKind kind = SampleKind::kFull;
  double V = 0.0;  // theorem2
  int size = 0;    // fixed

  static SampleSchedule full() { return {}; }
  static SampleSchedule theorem2(double v) {
    SampleSchedule s;
    s.kind = SampleKind::kTheorem2;
    s.V = v;
    return s;
  }
  static SampleSchedule fixed(int size) {
    SampleSchedule s;
    s.kind = SampleKind::kFixed;
    s.size = size;
    return s;
  }

  bool operator==(const SampleSchedule&) const = default;
};

/// Smallest integer Ns in [1, datapoints] with
///   (datapoints - Ns) / datapoints <= eta * V / (2 E sqrt(beta1 + beta2 G^2)).
inline int sample_size_theorem2(double eta, int local_steps, int datapoints, double beta1, double beta2, double G,
                                double V) {
  if (V < 0.0) throw InvalidArgument("V must be non-negative");
  if (datapoints < 1) throw InvalidArgument("datapoints must be at least 1");
  if (V == 0.0) return datapoints;
  const double spread = std::sqrt(beta1 + beta2 * G * G);
  if (!(spread > 0.0)) return 1;
  const double allowed = eta * V / (2.0 * local_steps * spread);
  const double n = datapoints;
  auto admissible = [&](int s) { return (n - s) / n <= allowed; };
  int s = static_cast<int>(std::ceil(n - n * allowed));
  s = std::clamp(s, 1, datapoints);
  while (s < datapoints && !admissible(s)) ++s;
  while (s > 1 && admissible(s - 1)) --s;
  return s;
}

/// How a model's server update normalizes the summed client updates.
enum class Aggregation {
  kSubsetMean,   // divide by the number of clients that trained the model
  kClientTotal,  // divide by N, so a full frame sums to one full-client average
};

struct HyperParams {
  int local_steps = 5;  // E
  LrSchedule lr;
  SampleSchedule sampling;
  int rounds = 1000;
  int models = 1;  // M
  Aggregation aggregation = Aggregation::kSubsetMean;
  bool diagnostics = false;  // per-frame e^l, d^l (forces client-total accounting)
  bool snapshots = false;
  bool track_gap = true;     // off: gap column left at 0, Delta only
  bool keep_history = true;  // off: trace keeps only the latest round

  Aggregation effective_aggregation() const { return diagnostics ? Aggregation::kClientTotal : aggregation; }
};

// ---------------------------------------------------------------------------
// Client and server steps

struct NoStepObserver {
  void operator()(int, const Vector&, const Vector&) const {}
};

/// E local steps from `w_global` with a fresh uniform sample at every step:
///   u_1 = w_global, u_{p+1} = u_p - eta grad F_k(u_p, xi_p).
/// Returns u_1 - u_{E+1}. `observe(p, u_p, g_p)` sees every step.
template <class Observer = NoStepObserver>
Vector local_update(const QuadraticClient& client, const Vector& w_global, int local_steps, double eta,
                    int sample_size, Stream& rng, Observer&& observe = {}, double* max_grad_norm = nullptr) {
  if (local_steps < 1) throw InvalidArgument("E must be at least 1");
  if (!(eta > 0.0)) throw InvalidArgument("learning rate must be positive");
  if (sample_size < 1 || sample_size > client.datapoints())
    throw InvalidArgument("sample size must lie in 1.." + std::to_string(client.datapoints()));
  const bool full = sample_size == client.datapoints();
  Vector u = w_global;
  Vector g;
  for (int p = 1; p <= local_steps; ++p) {
    if (full) {
      local_gradient(client, u, g);
    } else {
      const auto sample = sample_without_replacement(client.datapoints(), sample_size, rng);
      stochastic_gradient(client, u, sample, g);
    }
    observe(p, u, g);
    if (max_grad_norm) *max_grad_norm = std::max(*max_grad_norm, g.norm());
    u -= eta * g;
    if (!u.allFinite())
      throw NumericalError("non-finite local iterate at client " + std::to_string(client.index()) + ", step " +
                           std::to_string(p));
  }
  return w_global - u;
}

/// One server round. Clients run in ascending index order; each model's summed
/// updates are scaled by 1/|S_m| or 1/N depending on `aggregation`.
/// `observe(client, model, p, u, g)` sees every local step.
template <class Observer>
void server_round(std::vector<Vector>& states, const Assignment& assignment, double eta, int sample_size,
                  int local_steps, Aggregation aggregation, const QuadraticProblem& problem,
                  std::vector<Stream>& client_streams, Observer&& observe, double* max_grad_norm = nullptr) {
  const int n = problem.num_clients();
  if (assignment.num_clients() != n) throw InvalidArgument("assignment does not cover every client");
  const auto models = states.size();
  std::vector<Vector> sums(models, Vector::Zero(problem.dimension()));
  std::vector<int> counts(models, 0);
  for (int c = 0; c < n; ++c) {
    const int m = assignment.model_of[static_cast<std::size_t>(c)];
    if (m < 0 || static_cast<std::size_t>(m) >= models) throw InvalidArgument("assignment names an unknown model");
    const auto& client = problem.client(c);
    auto step = [&](int p, const Vector& u, const Vector& g) { observe(c, m, p, u, g); };
    sums[static_cast<std::size_t>(m)] += local_update(client, states[static_cast<std::size_t>(m)], local_steps, eta,
                                                      sample_size, client_streams[static_cast<std::size_t>(c)], step,
                                                      max_grad_norm);
    ++counts[static_cast<std::size_t>(m)];
  }
  for (std::size_t m = 0; m < models; ++m) {
    if (counts[m] == 0) continue;
    const double scale = aggregation == Aggregation::kSubsetMean ? counts[m] : n;
    states[m] -= sums[m] / scale;
  }
}

inline void server_round(std::vector<Vector>& states, const Assignment& assignment, double eta, int sample_size,
                         int local_steps, Aggregation aggregation, const QuadraticProblem& problem,
                         std::vector<Stream>& client_streams) {
  server_round(states, assignment, eta, sample_size, local_steps, aggregation, problem, client_streams,
               [](int, int, int, const Vector&, const Vector&) {});
}

// ---------------------------------------------------------------------------
// Training run

/// Named streams of one (algorithm, seed) run.
struct RunStreams {
  Stream schedule;
  Stream sampling;

  static RunStreams derive(const Stream& master, Algorithm algo, int seed_index) {
    const auto seed = static_cast<std::uint64_t>(seed_index);
    // Sampling streams do not depend on the algorithm, so M = 1 runs of every
    // policy draw identical samples.
    return {master.child("schedule").child(to_string(algo)).child(seed), master.child("sampling").child(seed)};
  }
};

/// Steps one seed of one configuration round by round.
class FederatedRun {
 public:
  FederatedRun(const QuadraticProblem& problem, const ProblemConstants& constants, HyperParams hp, Algorithm algo,
               const Stream& master, int seed_index)
      : problem_(problem),
        constants_(constants),
        hp_(hp),
        scheduler_(make_scheduler(algo, problem.num_clients(), hp.models, RunStreams::derive(master, algo, seed_index).schedule)) {
    if (hp_.local_steps < 1) throw InvalidArgument("E must be at least 1");
    if (hp_.rounds < 0) throw InvalidArgument("rounds must be non-negative");
    hp_.lr.validate();
    check_divisible(problem.num_clients(), hp_.models);
    if (hp_.sampling.kind == SampleKind::kFixed &&
        (hp_.sampling.size < 1 || hp_.sampling.size > problem.datapoints()))
      throw InvalidArgument("fixed sample size must lie in 1..datapoints");
    if (hp_.diagnostics) {
      if (algo == Algorithm::kMfaRand) throw InvalidArgument("frame diagnostics need a round-robin schedule");
      if (!hp_.lr.frame_constant(hp_.models))
        throw InvalidArgument("frame diagnostics need a learning rate that is constant within each frame");
    }
    const auto streams = RunStreams::derive(master, algo, seed_index);
    client_streams_.reserve(static_cast<std::size_t>(problem.num_clients()));
    for (int c = 0; c < problem.num_clients(); ++c)
      client_streams_.push_back(streams.sampling.child(static_cast<std::uint64_t>(c)));

    states_.assign(static_cast<std::size_t>(hp_.models), Vector::Zero(problem.dimension()));
    trace_.algorithm = algo;
    trace_.seed_index = seed_index;
    trace_.models = hp_.models;
    trace_.initial_delta = error_delta(states_.front(), constants_.w_star);
    if (hp_.keep_history)
      trace_.records.reserve(static_cast<std::size_t>(hp_.rounds) * static_cast<std::size_t>(hp_.models));
  }

  int round() const { return round_; }
  bool done() const { return round_ >= hp_.rounds; }
  const TrainingTrace& trace() const { return trace_; }
  /// Records of the most recent round, one per model.
  std::span<const RoundRecord> latest() const {
    return std::span<const RoundRecord>(trace_.records).last(static_cast<std::size_t>(hp_.models));
  }
  TrainingTrace take_trace() { return std::move(trace_); }
  const std::vector<Vector>& states() const { return states_; }
  const HyperParams& params() const { return hp_; }

  /// Sample size of round t under the configured schedule.
  int sample_size(double eta) const {
    switch (hp_.sampling.kind) {
      case SampleKind::kFull: return problem_.datapoints();
      case SampleKind::kFixed: return hp_.sampling.size;
      case SampleKind::kTheorem2:
        return sample_size_theorem2(eta, hp_.local_steps, problem_.datapoints(), constants_.beta1, constants_.beta2,
                                    constants_.G, hp_.sampling.V);
    }
    return problem_.datapoints();
  }

  void step() {
    const int t = ++round_;
    const double eta = hp_.lr.at(t, hp_.models);
    const int s = sample_size(eta);
    const Assignment assignment = next_assignment(scheduler_, t);

    if (hp_.diagnostics) {
      if (is_frame_start(t, hp_.models)) begin_frame(eta);
      server_round(states_, assignment, eta, s, hp_.local_steps, Aggregation::kClientTotal, problem_, client_streams_,
                   [this](int c, int m, int p, const Vector& u, const Vector& g) { observe_step(c, m, p, u, g); },
                   &trace_.max_gradient_norm);
      if (t % hp_.models == 0) end_frame(frame_of(t, hp_.models), eta, s);
    } else {
      server_round(states_, assignment, eta, s, hp_.local_steps, hp_.aggregation, problem_, client_streams_,
                   [](int, int, int, const Vector&, const Vector&) {}, &trace_.max_gradient_norm);
    }

    if (!hp_.keep_history) {
      trace_.records.clear();
      trace_.snapshots.clear();
    }
    for (int m = 0; m < hp_.models; ++m) {
      const Vector& w = states_[static_cast<std::size_t>(m)];
      if (!w.allFinite())
        throw NumericalError("non-finite global weights at round " + std::to_string(t) + ", model " +
                             std::to_string(m + 1));
      RoundRecord r;
      r.round = t;
      r.model = m;
      r.lr = eta;
      r.sample_size = s;
      r.delta = error_delta(w, constants_.w_star);
      if (hp_.track_gap) r.gap = log_gap(suboptimality(problem_, w, constants_.w_star), &r.gap_floored);
      trace_.records.push_back(r);
      if (hp_.snapshots) trace_.snapshots.push_back(w);
    }
    trace_.rounds = t;
  }

  void run() {
    while (!done()) step();
  }

 private:
  struct FrameState {
    Vector start;                  // w_1^l
    std::vector<Vector> central;   // u_1 .. u_{E+1}
    Vector e_sum;                  // sum (grad F_k(u_p) - grad F_k(u_{k,p}))
    Vector d_sum;                  // sum (grad F_k(u_{k,p}, xi) - grad F_k(u_{k,p}))
  };

  void begin_frame(double alpha) {
    frame_.resize(states_.size());
    for (std::size_t m = 0; m < states_.size(); ++m) {
      auto& f = frame_[m];
      f.start = states_[m];
      f.central.assign(1, f.start);
      for (int p = 1; p <= hp_.local_steps; ++p)
        f.central.push_back(f.central.back() - alpha * global_gradient(problem_, f.central.back()));
      f.e_sum = Vector::Zero(problem_.dimension());
      f.d_sum = Vector::Zero(problem_.dimension());
    }
  }

  void observe_step(int c, int m, int p, const Vector& u, const Vector& g) {
    auto& f = frame_[static_cast<std::size_t>(m)];
    const auto& client = problem_.client(c);
    local_gradient(client, u, full_);
    local_gradient(client, f.central[static_cast<std::size_t>(p - 1)], central_);
    f.e_sum += central_ - full_;
    f.d_sum += g - full_;
  }

  void end_frame(int frame, double alpha, int s) {
    const double n = problem_.num_clients();
    for (std::size_t m = 0; m < states_.size(); ++m) {
      const auto& f = frame_[m];
      const Vector e = f.e_sum / n;
      const Vector d = f.d_sum / n;
      const Vector predicted = f.central.back() + alpha * e - alpha * d;
      FrameRecord r;
      r.frame = frame;
      r.model = static_cast<int>(m);
      r.alpha = alpha;
      r.sample_size = s;
      r.e_norm = e.norm();
      r.d_norm = d.norm();
      r.identity_residual = (states_[m] - predicted).norm();
      r.start_delta = error_delta(f.start, constants_.w_star);
      r.central_delta = error_delta(f.central.back(), constants_.w_star);
      trace_.frames.push_back(r);
    }
  }

  const QuadraticProblem& problem_;
  const ProblemConstants& constants_;
  HyperParams hp_;
  Scheduler scheduler_;
  std::vector<Stream> client_streams_;
  std::vector<Vector> states_;
  TrainingTrace trace_;
  int round_ = 0;
  std::vector<FrameState> frame_;
  Vector full_;
  Vector central_;
};

inline TrainingTrace run_training(const QuadraticProblem& problem, const ProblemConstants& constants,
                                  const HyperParams& hp, Algorithm algo, const Stream& master, int seed_index) {
  FederatedRun run(problem, constants, hp, algo, master, seed_index);
  run.run();
  return run.take_trace();
}

// ---------------------------------------------------------------------------
// Seed fan-out

/// Runs body(i) for i in [0, count) on up to `jobs` threads. The first
/// exception thrown by any task is rethrown after all workers join.
template <class Body>
void parallel_for(int count, int jobs, Body&& body) {
  jobs = std::clamp(jobs, 1, std::max(count, 1));
  if (jobs == 1) {
    for (int i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> workers;
  workers.reserve(static_cast<std::size_t>(jobs));
  for (int j = 0; j < jobs; ++j) {
    workers.emplace_back([&] {
      for (int i = next++; i < count; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next = count;
        }
      }
    });
  }
  for (auto& w : workers) w.join();
  if (failure) std::rethrow_exception(failure);
}

/// One trace per seed index 0..seeds-1, in seed order regardless of `jobs`.
inline std::vector<TrainingTrace> run_seeds(const QuadraticProblem& problem, const ProblemConstants& constants,
                                            const HyperParams& hp, Algorithm algo, const Stream& master, int seeds,
                                            int jobs = 1) {
  std::vector<TrainingTrace> out(static_cast<std::size_t>(seeds));
  parallel_for(seeds, jobs, [&](int s) { out[static_cast<std::size_t>(s)] = run_training(problem, constants, hp, algo, master, s); });
  return out;
}

/// Seed-mean of Delta per model, indexed by round (element t-1 is round t).
inline std::vector<std::vector<double>> mean_delta_by_model(const std::vector<TrainingTrace>& traces) {
  if (traces.empty()) return {};
  const int models = traces.front().models;
  const int rounds = traces.front().rounds;
  std::vector<std::vector<double>> out(static_cast<std::size_t>(models), std::vector<double>(static_cast<std::size_t>(rounds), 0.0));
  for (const auto& tr : traces)
    for (const auto& r : tr.records) out[static_cast<std::size_t>(r.model)][static_cast<std::size_t>(r.round - 1)] += r.delta;
  for (auto& curve : out)
    for (double& v : curve) v /= static_cast<double>(traces.size());
  return out;
}

/// Advances every seed in lockstep and stops once each model's seed-mean Delta
/// has dropped to `epsilon`, or at hp.rounds. Returns seed-mean Delta per model
/// for the rounds actually run.
inline std::vector<std::vector<double>> run_until_accuracy(const QuadraticProblem& problem,
                                                           const ProblemConstants& constants, const HyperParams& hp,
                                                           Algorithm algo, const Stream& master, int seeds,
                                                           double epsilon, int jobs = 1, int block = 50) {
  HyperParams lean = hp;
  lean.track_gap = false;
  lean.snapshots = false;
  lean.diagnostics = false;
  lean.keep_history = false;
  std::vector<std::optional<FederatedRun>> runs(static_cast<std::size_t>(seeds));
  for (int s = 0; s < seeds; ++s) runs[static_cast<std::size_t>(s)].emplace(problem, constants, lean, algo, master, s);
  const auto models = static_cast<std::size_t>(hp.models);
  std::vector<std::vector<double>> mean(models);
  std::vector<bool> reached(models, false);
  // buffer[s][(t - round - 1) * M + m]
  std::vector<std::vector<double>> buffer(static_cast<std::size_t>(seeds));
  int round = 0;
  while (round < hp.rounds) {
    const int upto = std::min(hp.rounds, round + block);
    parallel_for(seeds, jobs, [&](int s) {
      auto& run = *runs[static_cast<std::size_t>(s)];
      auto& out = buffer[static_cast<std::size_t>(s)];
      out.clear();
      while (run.round() < upto) {
        run.step();
        for (const auto& r : run.latest()) out.push_back(r.delta);
      }
    });
    for (int t = round + 1; t <= upto; ++t) {
      for (std::size_t m = 0; m < models; ++m) {
        double sum = 0.0;
        for (const auto& out : buffer) sum += out[static_cast<std::size_t>(t - round - 1) * models + m];
        const double v = sum / seeds;
        mean[m].push_back(v);
        if (v <= epsilon) reached[m] = true;
      }
    }
    round = upto;
    if (std::all_of(reached.begin(), reached.end(), [](bool b) { return b; })) break;
  }
  return mean;
}

/// Gradient-norm envelope: 1.1 x the largest stochastic gradient norm seen in
/// a 200-round constant-rate run of the same configuration. Adaptive sampling
/// is replaced by single-datapoint samples, the widest draws available.
inline double calibrate_gradient_bound(const QuadraticProblem& problem, const ProblemConstants& constants,
                                       const HyperParams& hp, Algorithm algo, const Stream& master, int seeds,
                                       int jobs = 1, int calibration_rounds = 200) {
  HyperParams cal = hp;
  cal.lr = LrSchedule::constant(hp.lr.at(1, hp.models));
  cal.rounds = calibration_rounds;
  cal.diagnostics = false;
  cal.snapshots = false;
  if (cal.sampling.kind == SampleKind::kTheorem2) cal.sampling = SampleSchedule::fixed(1);
  const Stream cal_master = master.child("calibration");
  std::vector<double> peaks(static_cast<std::size_t>(seeds), 0.0);
  parallel_for(seeds, jobs, [&](int s) {
    FederatedRun run(problem, constants, cal, algo, cal_master, s);
    run.run();
    peaks[static_cast<std::size_t>(s)] = run.trace().max_gradient_norm;
  });
  return 1.1 * *std::max_element(peaks.begin(), peaks.end());
}

}  // namespace fedmm
