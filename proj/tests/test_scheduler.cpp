// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <vector>

#include "fedmm/rng.hpp"
#include "fedmm/scheduler.hpp"

using namespace fedmm;

TEST(Partition, EqualDisjointCover) {
  Stream rng(1);
  const auto p = partition_clients(24, 12, rng, 5);
  ASSERT_EQ(p.subsets.size(), 12u);
  EXPECT_EQ(p.created_at, 5);
  std::set<int> seen;
  for (const auto& s : p.subsets) {
    EXPECT_EQ(s.size(), 2u);
    for (int c : s) EXPECT_TRUE(seen.insert(c).second);
  }
  EXPECT_EQ(seen.size(), 24u);
}

TEST(Partition, SingleModelTakesEveryone) {
  Stream rng(2);
  const auto p = partition_clients(6, 1, rng);
  ASSERT_EQ(p.subsets.size(), 1u);
  EXPECT_EQ(p.subsets[0], (std::vector<int>{0, 1, 2, 3, 4, 5}));
}

TEST(Partition, IndivisibleCountIsRejected) {
  Stream rng(3);
  try {
    partition_clients(5, 2, rng);
    FAIL();
  } catch (const InvalidArgument& e) {
    EXPECT_STREQ(e.what(), "N must be an integral multiple of M");
  }
}

TEST(MfaRand, SingleModel) {
  Stream rng(4);
  for (int t = 1; t <= 5; ++t) {
    const auto a = mfa_rand_assign(t, 8, 1, rng);
    for (int m : a.model_of) EXPECT_EQ(m, 0);
  }
}

TEST(MfaRand, ClientModelFrequencyIsUniform) {
  Stream rng(5);
  const int N = 6, M = 3, rounds = 100000;
  std::vector<int> hits(N * M, 0);
  for (int t = 1; t <= rounds; ++t) {
    const auto a = mfa_rand_assign(t, N, M, rng);
    for (int c = 0; c < N; ++c) ++hits[static_cast<std::size_t>(c * M + a.model_of[static_cast<std::size_t>(c)])];
  }
  const double p = 1.0 / M, sd = std::sqrt(rounds * p * (1 - p));
  for (int h : hits) EXPECT_LE(std::abs(h - rounds * p), 3 * sd);
}

TEST(MfaRand, PairMissRateOverWindow) {
  // (1 - 1/M)^M = 8/27 for M = 3
  Stream rng(6);
  const int N = 6, M = 3, frames = 20000;
  long miss = 0, total = 0;
  for (int f = 0; f < frames; ++f) {
    std::vector<char> met(N * M, 0);
    for (int t = 1; t <= M; ++t) {
      const auto a = mfa_rand_assign(f * M + t, N, M, rng);
      for (int c = 0; c < N; ++c) met[static_cast<std::size_t>(c * M + a.model_of[static_cast<std::size_t>(c)])] = 1;
    }
    for (char m : met) miss += m ? 0 : 1;
    total += N * M;
  }
  const double p = 8.0 / 27.0;
  EXPECT_NEAR(static_cast<double>(miss) / total, p, 4 * std::sqrt(p * (1 - p) / total));
}

TEST(MfaRR, TableRowsForThreeModels) {
  Stream rng(7);
  FrameCache cache;
  const auto r1 = mfa_rr_assign(1, 6, 3, rng, cache);
  const auto part = cache.partition;
  for (int j = 0; j < 3; ++j)
    for (int c : part.subsets[static_cast<std::size_t>(j)]) EXPECT_EQ(r1.model_of[static_cast<std::size_t>(c)], j);
  const auto r2 = mfa_rr_assign(2, 6, 3, rng, cache);
  // ((3 + 2 - 2) mod 3) + 1 = 1: subset 3 trains model 1 in round 2
  for (int c : part.subsets[2]) EXPECT_EQ(r2.model_of[static_cast<std::size_t>(c)], 0);
  for (int c : part.subsets[0]) EXPECT_EQ(r2.model_of[static_cast<std::size_t>(c)], 1);
  const auto r3 = mfa_rr_assign(3, 6, 3, rng, cache);
  for (int c : part.subsets[0]) EXPECT_EQ(r3.model_of[static_cast<std::size_t>(c)], 2);
  EXPECT_EQ(cache.partition.subsets, part.subsets);
}

TEST(MfaRR, RoundRobinFormula) {
  EXPECT_EQ(round_robin_model(2, 2, 3), 0);
  EXPECT_EQ(round_robin_model(0, 1, 3), 0);
  EXPECT_EQ(round_robin_model(1, 3, 3), 0);
  EXPECT_EQ(round_robin_model(0, 4, 3), 0);
}

TEST(MfaRR, PartitionRefreshedOnlyAtFrameStart) {
  Stream rng(8);
  FrameCache cache;
  std::vector<std::vector<int>> last;
  int changes = 0;
  for (int t = 1; t <= 40; ++t) {
    mfa_rr_assign(t, 12, 4, rng, cache);
    if (cache.partition.subsets != last) {
      ++changes;
      EXPECT_EQ(t % 4, 1) << t;
      EXPECT_EQ(cache.partition.created_at, t);
    }
    last = cache.partition.subsets;
  }
  EXPECT_GE(changes, 9);
}

TEST(MfaRR, SingleModelEveryRoundIsAFrame) {
  Stream rng(9);
  FrameCache cache;
  for (int t = 1; t <= 4; ++t) {
    EXPECT_TRUE(is_frame_start(t, 1));
    const auto a = mfa_rr_assign(t, 5, 1, rng, cache);
    for (int m : a.model_of) EXPECT_EQ(m, 0);
  }
}

TEST(MfaRR, FrameCoversEveryPairOnce) {
  Stream rng(10);
  FrameCache cache;
  const int N = 12, M = 6;
  for (int frame = 0; frame < 20; ++frame) {
    std::vector<int> count(N * M, 0);
    for (int t = frame * M + 1; t <= (frame + 1) * M; ++t) {
      const auto a = mfa_rr_assign(t, N, M, rng, cache);
      ASSERT_TRUE(a.balanced());
      for (int c = 0; c < N; ++c) ++count[static_cast<std::size_t>(c * M + a.model_of[static_cast<std::size_t>(c)])];
    }
    for (int v : count) ASSERT_EQ(v, 1);
  }
}

TEST(FedAvg, AllClientsOnOneModel) {
  const auto a = sequential_fedavg_assign(1, 24, 0);
  EXPECT_EQ(a.num_clients(), 24);
  EXPECT_EQ(a.clients_of(0).size(), 24u);
}

TEST(FedAvg, IdenticalToRoundRobinWithOneModel) {
  Stream rng(11);
  FrameCache cache;
  for (int t = 1; t <= 10; ++t)
    EXPECT_EQ(sequential_fedavg_assign(t, 7).model_of, mfa_rr_assign(t, 7, 1, rng, cache).model_of);
}

TEST(Scheduler, AssignmentsAreDeterministic) {
  for (auto algo : {Algorithm::kMfaRand, Algorithm::kMfaRR}) {
    auto a = make_scheduler(algo, 12, 3, Stream(99));
    auto b = make_scheduler(algo, 12, 3, Stream(99));
    for (int t = 1; t <= 30; ++t) EXPECT_EQ(next_assignment(a, t).model_of, next_assignment(b, t).model_of);
  }
}

TEST(Scheduler, FedAvgRequiresOneModel) {
  EXPECT_THROW(make_scheduler(Algorithm::kFedAvgSeq, 4, 2, Stream(1)), InvalidArgument);
}

TEST(Scheduler, AlgorithmNamesRoundTrip) {
  for (auto a : {Algorithm::kMfaRand, Algorithm::kMfaRR, Algorithm::kFedAvgSeq})
    EXPECT_EQ(parse_algorithm(to_string(a)), a);
  EXPECT_THROW(parse_algorithm("fedprox"), InvalidArgument);
}

TEST(Scheduler, PairCooccurrenceAcrossRoundsLooksIndependent) {
  // Chi-square on (model in round t, model in round t+1) for one client.
  Stream rng(12);
  const int N = 6, M = 3, rounds = 30000;
  std::vector<double> table(M * M, 0.0);
  int prev = -1;
  for (int t = 1; t <= rounds; ++t) {
    const int m = mfa_rand_assign(t, N, M, rng).model_of[0];
    if (prev >= 0) table[static_cast<std::size_t>(prev * M + m)] += 1;
    prev = m;
  }
  const double expected = (rounds - 1.0) / (M * M);
  double chi2 = 0.0;
  for (double o : table) chi2 += (o - expected) * (o - expected) / expected;
  // 8 degrees of freedom; 26.1 is the 0.999 quantile
  EXPECT_LT(chi2, 26.1);
}
