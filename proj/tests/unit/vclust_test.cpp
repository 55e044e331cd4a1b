// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "cluster_oracles.hpp"
#include "eendvc/error.hpp"
#include "eendvc/vclust.hpp"

namespace eendvc {
namespace {

using testing::blobs_around;
using testing::labels_of;
using testing::partition_of;

TEST(Cluster, RecoversSeparatedBlobs) {
  for (int k = 2; k <= 6; ++k) {
    std::mt19937_64 rng(100 + k);
    const auto centers = testing::separated_centers(k, 64, rng);
    const auto b = blobs_around(centers, std::vector<int>(static_cast<std::size_t>(k), 40), 0.03, 200 + k);
    AHCConfig cfg;
    cfg.min_speakers = 1;
    const auto a = cluster(b.embeddings, cfg);
    EXPECT_EQ(a.cluster_count, k);
    EXPECT_EQ(partition_of(labels_of(b, a)), partition_of(b.truth));
    EXPECT_EQ(partition_of(labels_of(b, a)), partition_of(testing::nearest_center(b)));
    for (double s : a.merge_similarities) EXPECT_GE(s, cfg.threshold);
    EXPECT_FALSE(a.constraint_violation);
  }
}

TEST(Cluster, StopsWhenNoPairReachesThreshold) {
  std::mt19937_64 rng(5);
  const auto centers = testing::separated_centers(3, 32, rng);
  const auto b = blobs_around(centers, {40, 40, 40}, 0.02, 6);
  const auto a = cluster(b.embeddings);
  const auto labels = labels_of(b, a);
  std::map<int, Eigen::VectorXd> sums;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto [it, fresh] = sums.try_emplace(labels[i], Eigen::VectorXd::Zero(32));
    it->second += b.embeddings[i].vector;
  }
  for (auto i = sums.begin(); i != sums.end(); ++i)
    for (auto j = std::next(i); j != sums.end(); ++j) EXPECT_LT(centroid_similarity(i->second, j->second), 0.70);
}

TEST(Cluster, IdenticalEmbeddingsCollapse) {
  std::vector<SpeakerEmbedding> e;
  Eigen::VectorXd v = Eigen::VectorXd::Ones(8).normalized();
  for (int i = 0; i < 12; ++i) e.push_back({v, i, 0, 1.0});
  const auto a = cluster(e);
  EXPECT_EQ(a.cluster_count, 1);
  EXPECT_TRUE(a.constraint_violation);
  for (int i = 0; i < 12; ++i) EXPECT_EQ(a.cluster_of(i, 0), 0);
}

TEST(Cluster, ForcedMergeJoinsClosestBlobs) {
  std::mt19937_64 rng(11);
  const auto base = testing::separated_centers(2, 64, rng);
  // Third center sits between the first two but closer to the first.
  const Eigen::VectorXd third = (base[0] * 0.45 + base[1] * 0.2 + testing::random_unit(rng, 64) * 0.85).normalized();
  const auto b = blobs_around({base[0], base[1], third}, {40, 40, 40}, 0.02, 12);
  AHCConfig cfg;
  cfg.max_speakers = 2;
  const auto a = cluster(b.embeddings, cfg);
  EXPECT_EQ(a.cluster_count, 2);
  EXPECT_EQ(a.forced_merges, 1);
  EXPECT_EQ(partition_of(labels_of(b, a)), partition_of(testing::merge_groups_to(b, b.truth, 2)));
}

TEST(Cluster, DissolvesSmallClusterIntoNearestCentroid) {
  std::mt19937_64 rng(21);
  const auto centers = testing::separated_centers(3, 64, rng);
  auto b = blobs_around(centers, {40, 40, 5}, 0.02, 22);
  const auto a = cluster(b.embeddings);
  EXPECT_EQ(a.cluster_count, 2);
  EXPECT_EQ(a.dissolved, 5);
  const auto labels = labels_of(b, a);
  Eigen::VectorXd sum0 = Eigen::VectorXd::Zero(64), sum1 = Eigen::VectorXd::Zero(64);
  for (std::size_t i = 0; i < 80; ++i) (b.truth[i] == 0 ? sum0 : sum1) += b.embeddings[i].vector;
  const int label0 = labels[0], label1 = labels[40];
  for (std::size_t i = 80; i < 85; ++i) {
    const bool nearer0 = centroid_similarity(b.embeddings[i].vector, sum0) >= centroid_similarity(b.embeddings[i].vector, sum1);
    EXPECT_EQ(labels[i], nearer0 ? label0 : label1);
  }
  for (const auto& [key, c] : a.mapping) EXPECT_TRUE(c == label0 || c == label1);
}

TEST(Cluster, EnforcesMaximumSpeakerCount) {
  std::mt19937_64 rng(31);
  const auto centers = testing::separated_centers(10, 64, rng);
  const auto b = blobs_around(centers, std::vector<int>(10, 40), 0.03, 32);
  const auto a = cluster(b.embeddings);
  EXPECT_EQ(a.cluster_count, 8);
  EXPECT_EQ(a.forced_merges, 2);
  EXPECT_EQ(partition_of(labels_of(b, a)), partition_of(testing::merge_groups_to(b, b.truth, 8)));
}

TEST(Cluster, InputOrderDoesNotMatter) {
  std::mt19937_64 rng(41);
  const auto centers = testing::separated_centers(3, 16, rng);
  auto b = blobs_around(centers, {20, 15, 25}, 0.08, 42);
  const auto a = cluster(b.embeddings);
  for (int trial = 0; trial < 5; ++trial) {
    auto shuffled = b.embeddings;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    EXPECT_EQ(cluster(shuffled).mapping, a.mapping);
  }
}

TEST(Cluster, ValidatesInput) {
  EXPECT_THROW(cluster({}), Error);
  AHCConfig bad;
  bad.min_speakers = 9;
  std::vector<SpeakerEmbedding> one{{Eigen::VectorXd::Ones(2).normalized(), 0, 0, 1.0}};
  EXPECT_THROW(cluster(one, bad), ConfigError);
}

WindowResult window_with(int index, int frames, std::vector<std::pair<int, std::pair<int, int>>> runs) {
  WindowResult w;
  w.index = index;
  w.activity = Activity::Zero(frames, 4);
  for (auto [slot, range] : runs) {
    for (int t = range.first; t < range.second; ++t) w.activity(t, slot) = 1;
    w.embeddings.push_back({Eigen::VectorXd::Ones(2).normalized(), index, slot, 1.0});
  }
  return w;
}

TEST(Reconcile, SingleWindowRun) {
  const auto w = window_with(0, 400, {{0, {0, 200}}});
  ClusterAssignment a;
  a.mapping[{0, 0}] = 0;
  a.cluster_count = 1;
  const auto ann = reconcile("r", {w}, a, 8.0, 8.0);
  ASSERT_EQ(ann.size(), 1u);
  EXPECT_EQ(ann.turns()[0].segment, Segment(0.0, 4.0));
  EXPECT_EQ(ann.turns()[0].speaker, "spk00");
}

TEST(Reconcile, AdjacentWindowsAbut) {
  const auto w0 = window_with(0, 400, {{1, {300, 400}}});
  const auto w1 = window_with(1, 400, {{0, {0, 50}}});
  ClusterAssignment a;
  a.mapping[{0, 1}] = 3;
  a.mapping[{1, 0}] = 3;
  const auto ann = reconcile("r", {w0, w1}, a, 8.0, 8.0);
  ASSERT_EQ(ann.size(), 2u);
  EXPECT_NEAR(ann.turns()[0].segment.start(), 6.0, 1e-9);
  EXPECT_NEAR(ann.turns()[0].segment.end(), 8.0, 1e-9);
  EXPECT_NEAR(ann.turns()[1].segment.start(), 8.0, 1e-9);
  EXPECT_NEAR(ann.turns()[1].segment.end(), 9.0, 1e-9);
  EXPECT_EQ(ann.labels(), std::vector<std::string>{"spk00"});
}

TEST(Reconcile, SpeechTimeMatchesActiveFrames) {
  std::mt19937_64 rng(3);
  std::bernoulli_distribution on(0.4);
  std::vector<WindowResult> windows;
  ClusterAssignment a;
  double expected = 0.0;
  for (int w = 0; w < 3; ++w) {
    WindowResult r;
    r.index = w;
    r.activity = Activity::Zero(400, 4);
    for (int slot = 0; slot < 3; ++slot) {
      for (int t = 0; t < 400; ++t) r.activity(t, slot) = on(rng);
      if (slot < 2) {
        a.mapping[{w, slot}] = (slot + w) % 2;
        expected += r.activity.col(slot).cast<int>().sum() * 0.02;
      }
    }
    windows.push_back(r);
  }
  const auto ann = reconcile("r", windows, a, 8.0, 8.0);
  EXPECT_NEAR(ann.stats().total_speech, expected, 1e-9);
}

TEST(Reconcile, LabelsFollowFirstAppearance) {
  const auto w = window_with(0, 400, {{0, {100, 200}}, {1, {10, 50}}});
  ClusterAssignment a;
  a.mapping[{0, 0}] = 0;
  a.mapping[{0, 1}] = 1;
  const auto ann = reconcile("r", {w}, a, 8.0, 8.0);
  ASSERT_EQ(ann.size(), 2u);
  EXPECT_EQ(ann.turns()[0].speaker, "spk00");
  EXPECT_NEAR(ann.turns()[0].segment.start(), 0.2, 1e-9);
  EXPECT_EQ(ann.turns()[1].speaker, "spk01");
}

TEST(Reconcile, ClipsToRecordingEnd) {
  const auto w = window_with(1, 400, {{0, {0, 400}}});
  ClusterAssignment a;
  a.mapping[{1, 0}] = 0;
  const auto ann = reconcile("r", {w}, a, 8.0, 8.0, 0.02, 10.0);
  ASSERT_EQ(ann.size(), 1u);
  EXPECT_NEAR(ann.turns()[0].segment.end(), 10.0, 1e-12);
}

}  // namespace
}  // namespace eendvc
