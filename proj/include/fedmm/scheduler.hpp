// SPDX-License-Identifier: Apache-2.0
#pragma once

// Client-to-model assignment policies. Rounds are 1-based; client and model
// indices are 0-based internally and printed 1-based.

#include <algorithm>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "fedmm/error.hpp"
#include "fedmm/rng.hpp"

namespace fedmm {

enum class Algorithm { kMfaRand, kMfaRR, kFedAvgSeq };

inline std::string_view to_string(Algorithm a) {
  switch (a) {
    case Algorithm::kMfaRand: return "mfa-rand";
    case Algorithm::kMfaRR: return "mfa-rr";
    case Algorithm::kFedAvgSeq: return "fedavg-seq";
  }
  return "?";
}

inline Algorithm parse_algorithm(std::string_view name) {
  if (name == "mfa-rand") return Algorithm::kMfaRand;
  if (name == "mfa-rr") return Algorithm::kMfaRR;
  if (name == "fedavg-seq") return Algorithm::kFedAvgSeq;
  throw InvalidArgument("unknown algorithm '" + std::string(name) + "'");
}

/// M disjoint client subsets of equal size N/M.
struct Partition {
  std::vector<std::vector<int>> subsets;
  int created_at = 0;

  int num_clients() const {
    int n = 0;
    for (const auto& s : subsets) n += static_cast<int>(s.size());
    return n;
  }
};

/// Round-t map client -> model, total over all clients.
struct Assignment {
  int round = 0;
  int models = 1;
  std::vector<int> model_of;  // indexed by client

  int num_clients() const { return static_cast<int>(model_of.size()); }

  /// Clients training model m, in ascending client order.
  std::vector<int> clients_of(int m) const {
    std::vector<int> out;
    for (int c = 0; c < num_clients(); ++c)
      if (model_of[static_cast<std::size_t>(c)] == m) out.push_back(c);
    return out;
  }

  /// True when every client has a model and each model has N/M clients.
  bool balanced() const {
    if (models < 1 || num_clients() % models != 0) return false;
    std::vector<int> load(static_cast<std::size_t>(models), 0);
    for (int m : model_of) {
      if (m < 0 || m >= models) return false;
      ++load[static_cast<std::size_t>(m)];
    }
    for (int l : load)
      if (l != num_clients() / models) return false;
    return true;
  }
};

inline void check_divisible(int clients, int models) {
  if (models < 1) throw InvalidArgument("M must be at least 1");
  if (clients < 1) throw InvalidArgument("N must be at least 1");
  if (clients % models != 0) throw InvalidArgument("N must be an integral multiple of M");
}

/// Uniform equal partition: Fisher-Yates shuffle of the clients, cut into M
/// consecutive blocks of N/M. Subsets are stored in ascending order.
inline Partition partition_clients(int clients, int models, Stream& rng, int created_at = 0) {
  check_divisible(clients, models);
  std::vector<int> order(static_cast<std::size_t>(clients));
  for (int c = 0; c < clients; ++c) order[static_cast<std::size_t>(c)] = c;
  fisher_yates(order, rng);
  const int size = clients / models;
  Partition part;
  part.created_at = created_at;
  part.subsets.resize(static_cast<std::size_t>(models));
  for (int j = 0; j < models; ++j) {
    auto& s = part.subsets[static_cast<std::size_t>(j)];
    s.assign(order.begin() + j * size, order.begin() + (j + 1) * size);
    std::sort(s.begin(), s.end());
  }
  return part;
}

/// Model trained by subset j (0-based) in round t of an MFA-RR frame:
/// ((j + t - 2) mod M) + 1 in 1-based terms.
constexpr int round_robin_model(int subset, int round, int models) {
  const int j = subset + 1;
  return ((j + round - 2) % models + models) % models;
}

/// MFA-Rand: fresh partition every round, subset j trains model j. A uniform
/// partition followed by the identity matching has the same law as a uniform
/// partition followed by a uniform matching.
inline Assignment mfa_rand_assign(int round, int clients, int models, Stream& rng) {
  const Partition part = partition_clients(clients, models, rng, round);
  Assignment a;
  a.round = round;
  a.models = models;
  a.model_of.assign(static_cast<std::size_t>(clients), -1);
  for (int j = 0; j < models; ++j)
    for (int c : part.subsets[static_cast<std::size_t>(j)]) a.model_of[static_cast<std::size_t>(c)] = j;
  return a;
}

/// Holds the partition of the current MFA-RR frame.
struct FrameCache {
  Partition partition;
  int frame = 0;  // 1-based, 0 before the first frame
};

constexpr bool is_frame_start(int round, int models) { return models == 1 || round % models == 1; }

constexpr int frame_of(int round, int models) { return 1 + (round - 1) / models; }

/// MFA-RR: repartition at frame starts (t mod M = 1), rotate subsets across
/// models within the frame.
inline Assignment mfa_rr_assign(int round, int clients, int models, Stream& rng, FrameCache& cache) {
  check_divisible(clients, models);
  if (round < 1) throw InvalidArgument("rounds are 1-based");
  const int frame = frame_of(round, models);
  if (is_frame_start(round, models) || cache.frame != frame) {
    cache.partition = partition_clients(clients, models, rng, round);
    cache.frame = frame;
  }
  Assignment a;
  a.round = round;
  a.models = models;
  a.model_of.assign(static_cast<std::size_t>(clients), -1);
  for (int j = 0; j < models; ++j) {
    const int m = round_robin_model(j, round, models);
    for (int c : cache.partition.subsets[static_cast<std::size_t>(j)]) a.model_of[static_cast<std::size_t>(c)] = m;
  }
  return a;
}

/// Single-model FedAvg: every client trains `model`.
inline Assignment sequential_fedavg_assign(int round, int clients, int model = 0) {
  if (clients < 1) throw InvalidArgument("N must be at least 1");
  Assignment a;
  a.round = round;
  a.models = model + 1;
  a.model_of.assign(static_cast<std::size_t>(clients), model);
  return a;
}

// Stateful wrappers so the engine can drive any policy round by round.

class MfaRandScheduler {
 public:
  MfaRandScheduler(int clients, int models, Stream rng) : clients_(clients), models_(models), rng_(rng) {
    check_divisible(clients, models);
  }
  Assignment assign(int round) { return mfa_rand_assign(round, clients_, models_, rng_); }
  int models() const { return models_; }

 private:
  int clients_;
  int models_;
  Stream rng_;
};

class MfaRRScheduler {
 public:
  MfaRRScheduler(int clients, int models, Stream rng) : clients_(clients), models_(models), rng_(rng) {
    check_divisible(clients, models);
  }
  Assignment assign(int round) { return mfa_rr_assign(round, clients_, models_, rng_, cache_); }
  int models() const { return models_; }
  const FrameCache& cache() const { return cache_; }

 private:
  int clients_;
  int models_;
  Stream rng_;
  FrameCache cache_;
};

class FedAvgScheduler {
 public:
  explicit FedAvgScheduler(int clients) : clients_(clients) {}
  Assignment assign(int round) const { return sequential_fedavg_assign(round, clients_, 0); }
  int models() const { return 1; }

 private:
  int clients_;
};

using Scheduler = std::variant<MfaRandScheduler, MfaRRScheduler, FedAvgScheduler>;

inline Scheduler make_scheduler(Algorithm algo, int clients, int models, Stream rng) {
  switch (algo) {
    case Algorithm::kMfaRand: return MfaRandScheduler(clients, models, rng);
    case Algorithm::kMfaRR: return MfaRRScheduler(clients, models, rng);
    case Algorithm::kFedAvgSeq:
      if (models != 1) throw InvalidArgument("fedavg-seq trains one model at a time (M must be 1)");
      return FedAvgScheduler(clients);
  }
  throw InvalidArgument("unknown algorithm");
}

inline Assignment next_assignment(Scheduler& s, int round) {
  return std::visit([round](auto& impl) { return impl.assign(round); }, s);
}

}  // namespace fedmm
