// SPDX-License-Identifier: Apache-2.0

#include "eendvc/powerset.hpp"

#include <gtest/gtest.h>

#include <random>

#include "eendvc/error.hpp"
#include "oracles.hpp"

using namespace eendvc;

namespace {
long binomial(int n, int k) {
  long r = 1;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

RowMatrix random_distribution(std::mt19937_64& rng, int frames, int classes) {
  std::gamma_distribution<double> g(0.5, 1.0);
  RowMatrix p(frames, classes);
  for (int t = 0; t < frames; ++t) {
    for (int c = 0; c < classes; ++c) p(t, c) = g(rng) + 1e-6;
    p.row(t) /= p.row(t).sum();
  }
  return p;
}
}  // namespace

TEST(PowersetCodec, ClassCounts) {
  EXPECT_EQ(PowersetCodec(4, 2).num_classes(), 11);
  EXPECT_EQ(PowersetCodec(1, 1).num_classes(), 2);
  EXPECT_EQ(PowersetCodec(3, 3).num_classes(), 8);
  for (int K = 1; K <= 6; ++K)
    for (int C = 1; C <= K; ++C) {
      long expected = 0;
      for (int j = 0; j <= C; ++j) expected += binomial(K, j);
      EXPECT_EQ(PowersetCodec(K, C).num_classes(), expected) << K << "," << C;
    }
  EXPECT_THROW(PowersetCodec(2, 3), ConfigError);
  EXPECT_THROW(PowersetCodec(0, 0), ConfigError);
}

TEST(PowersetCodec, CanonicalOrder) {
  PowersetCodec codec(4, 2);
  std::vector<std::uint8_t> silence{0, 0, 0, 0}, first{1, 0, 0, 0}, pair{1, 1, 0, 0};
  EXPECT_EQ(codec.encode(silence), 0);
  EXPECT_EQ(codec.encode(first), 1);
  EXPECT_EQ(codec.encode(pair), 5);
  std::vector<std::uint8_t> last{0, 0, 1, 1};
  EXPECT_EQ(codec.encode(last), 10);
  EXPECT_EQ(codec.decode(0), silence);
  std::vector<std::uint8_t> three{1, 1, 1, 0};
  EXPECT_THROW(codec.encode(three), EncodingError);
  EXPECT_THROW(codec.decode(11), EncodingError);
}

TEST(PowersetCodec, ExhaustiveRoundTrip) {
  for (int K = 1; K <= 6; ++K)
    for (int C = 1; C <= K; ++C) {
      PowersetCodec codec(K, C);
      for (int c = 0; c < codec.num_classes(); ++c) EXPECT_EQ(codec.encode(codec.decode(c)), c);
    }
  PowersetCodec codec(4, 2);
  RowMatrix onehot = RowMatrix::Zero(11, 11);
  for (int c = 0; c < 11; ++c) onehot(c, c) = 1.0;
  const auto act = codec.decode_argmax(onehot);
  for (int c = 0; c < 11; ++c) {
    std::vector<std::uint8_t> row(act.row(c).data(), act.row(c).data() + 4);
    EXPECT_EQ(row, codec.decode(c));
  }
}

TEST(AssignSlots, SingleSpeakerUniformPicksSlotZero) {
  PowersetCodec codec(4, 2);
  Activity ref = Activity::Ones(5, 1);
  RowMatrix uniform = RowMatrix::Constant(5, 11, 1.0 / 11);
  auto r = assign_slots(ref, uniform, codec);
  EXPECT_EQ(r.slot_of_speaker, std::vector<int>{0});
  EXPECT_EQ(r.targets, std::vector<int>(5, 1));
}

TEST(AssignSlots, FollowsPredictionFavouringSlotsTwoAndThree) {
  PowersetCodec codec(4, 2);
  Activity ref(4, 2);
  ref << 1, 0, 0, 1, 1, 1, 0, 0;
  // Class ids: {2}=3, {3}=4, {2,3}=10, silence=0.
  RowMatrix p = RowMatrix::Constant(4, 11, 0.01);
  p(0, 3) = 0.9;
  p(1, 4) = 0.9;
  p(2, 10) = 0.9;
  p(3, 0) = 0.9;
  for (int t = 0; t < 4; ++t) p.row(t) /= p.row(t).sum();
  auto r = assign_slots(ref, p, codec);
  EXPECT_EQ(r.slot_of_speaker, (std::vector<int>{2, 3}));
  EXPECT_EQ(r.targets, (std::vector<int>{3, 4, 10, 0}));
}

TEST(AssignSlots, MatchesBruteForce) {
  PowersetCodec codec(4, 2);
  std::mt19937_64 rng(1234);
  std::bernoulli_distribution on(0.45);
  for (int trial = 0; trial < 300; ++trial) {
    const int S = 1 + static_cast<int>(rng() % 4);
    const int T = 5;
    Activity ref(T, S);
    for (int t = 0; t < T; ++t)
      for (int s = 0; s < S; ++s) ref(t, s) = on(rng);
    const auto p = random_distribution(rng, T, 11);
    const auto got = assign_slots(ref, p, codec);
    const auto want = oracle::brute_force_assign(ref, p, 4, 2);
    EXPECT_EQ(got.targets, want.targets);
    EXPECT_EQ(got.slot_of_speaker, want.injection);
    EXPECT_NEAR(got.nll, want.nll, 1e-9);
  }
}

TEST(AssignSlots, PermutationConsistentTargets) {
  PowersetCodec codec(4, 2);
  std::mt19937_64 rng(99);
  std::bernoulli_distribution on(0.4);
  for (int trial = 0; trial < 100; ++trial) {
    const int S = 3, T = 8;
    Activity ref(T, S);
    for (int t = 0; t < T; ++t)
      for (int s = 0; s < S; ++s) ref(t, s) = on(rng);
    const auto p = random_distribution(rng, T, 11);
    Activity perm(T, S);
    perm.col(0) = ref.col(2);
    perm.col(1) = ref.col(0);
    perm.col(2) = ref.col(1);
    EXPECT_EQ(assign_slots(ref, p, codec).targets, assign_slots(perm, p, codec).targets);
  }
}

TEST(AssignSlots, ClipsOverConcurrentFramesAndRejectsTooManySpeakers) {
  PowersetCodec codec(4, 2);
  Activity ref(3, 3);
  ref << 1, 1, 1, 1, 1, 0, 1, 0, 0;
  RowMatrix uniform = RowMatrix::Constant(3, 11, 1.0 / 11);
  auto r = assign_slots(ref, uniform, codec);
  // Speaker 0 (3 frames) and 1 (2 frames) survive the 3-way frame.
  const auto kept = codec.subset(r.targets[0]);
  EXPECT_EQ(kept, (1u << r.slot_of_speaker[0]) | (1u << r.slot_of_speaker[1]));
  EXPECT_THROW(assign_slots(Activity::Ones(3, 5), RowMatrix::Constant(3, 11, 1.0 / 11), codec), TooManySpeakersError);
}
