// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "fedmm/problem.hpp"
#include "fedmm/scheduler.hpp"

namespace fedmm {

/// State of one model after round `round` (1-based) has been applied.
struct RoundRecord {
  int round = 0;
  int model = 0;  // 0-based
  double lr = 0.0;
  int sample_size = 0;
  double delta = 0.0;  // |w - w*|
  double gap = 0.0;    // log10(F(w) - F*), floored
  bool gap_floored = false;
};

/// Per-frame decomposition terms of one model (client-total accounting).
struct FrameRecord {
  int frame = 0;  // 1-based
  int model = 0;
  double alpha = 0.0;
  int sample_size = 0;
  double e_norm = 0.0;             // |e^l|
  double d_norm = 0.0;             // |d^l|
  double identity_residual = 0.0;  // |w_1^{l+1} - (u_{E+1} + alpha e - alpha d)|
  double start_delta = 0.0;        // |w_1^l - w*|
  double central_delta = 0.0;      // |u_{E+1} - w*|
};

struct TrainingTrace {
  Algorithm algorithm = Algorithm::kMfaRand;
  int seed_index = 0;
  int models = 1;
  int rounds = 0;
  double initial_delta = 0.0;
  std::vector<RoundRecord> records;  // (round, model) row-major, rounds contiguous
  std::vector<FrameRecord> frames;
  std::vector<Vector> snapshots;     // same layout as records when enabled
  double max_gradient_norm = 0.0;    // over every local step of the run

  const RoundRecord& at(int round, int model) const {
    return records.at(static_cast<std::size_t>((round - 1) * models + model));
  }

  /// Delta of `model` indexed by round: element 0 is
  /// the initial weight (t = 1), element t is the state after round t.
  std::vector<double> delta_curve(int model) const {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(rounds) + 1);
    out.push_back(initial_delta);
    for (int t = 1; t <= rounds; ++t) out.push_back(at(t, model).delta);
    return out;
  }

  std::vector<double> gap_curve(int model) const {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(rounds));
    for (int t = 1; t <= rounds; ++t) out.push_back(at(t, model).gap);
    return out;
  }
};

}  // namespace fedmm
