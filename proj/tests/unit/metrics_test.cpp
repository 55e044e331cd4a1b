// SPDX-License-Identifier: Apache-2.0

#include "eendvc/metrics.hpp"

#include <gtest/gtest.h>

#include <functional>
#include <random>

#include <nlohmann/json.hpp>

#include "eendvc/error.hpp"
#include "oracles.hpp"

using namespace eendvc;

TEST(Score, IdentityIsZero) {
  Annotation ref("r", {{Segment(0, 4), "A"}, {Segment(3, 9), "B"}});
  const auto rep = score(ref, ref);
  EXPECT_EQ(rep.der, 0.0);
  EXPECT_EQ(rep.missed_detection, 0.0);
  EXPECT_EQ(rep.false_alarm, 0.0);
  EXPECT_EQ(rep.speaker_confusion, 0.0);
}

TEST(Score, EmptyHypothesisIsAllMissed) {
  const auto rep = score(Annotation("r", {{Segment(0, 10), "A"}}), Annotation("r"));
  EXPECT_DOUBLE_EQ(rep.missed_detection, 100.0);
  EXPECT_DOUBLE_EQ(rep.der, 100.0);
}

TEST(Score, EmptyReferenceIsAnError) {
  EXPECT_THROW(score(Annotation("r"), Annotation("r", {{Segment(0, 1), "x"}})), Error);
}

TEST(Score, OverlapHandling) {
  Annotation ref("r", {{Segment(0, 10), "A"}, {Segment(0, 10), "B"}});
  Annotation both("r", {{Segment(0, 10), "x"}, {Segment(0, 10), "y"}});
  EXPECT_EQ(score(ref, both).der, 0.0);
  Annotation one("r", {{Segment(0, 10), "x"}});
  const auto e = error_times(ref, one);
  EXPECT_DOUBLE_EQ(e.missed, 10.0);
  EXPECT_DOUBLE_EQ(e.confusion, 0.0);
  EXPECT_DOUBLE_EQ(e.reference_speech, 20.0);
}

TEST(Score, ConfusionUsesGlobalMapping) {
  Annotation ref("r", {{Segment(0, 6), "A"}, {Segment(6, 10), "B"}});
  Annotation hyp("r", {{Segment(0, 10), "x"}});
  const auto e = error_times(ref, hyp);
  EXPECT_DOUBLE_EQ(e.confusion, 4.0);
  EXPECT_EQ(optimal_mapping(ref, hyp).at("A"), "x");
}

TEST(Score, CollarExcludesBoundaryRegions) {
  Annotation ref("r", {{Segment(1, 5), "A"}});
  Annotation hyp("r", {{Segment(1.2, 4.9), "x"}});
  EXPECT_GT(score(ref, hyp).der, 0.0);
  EXPECT_DOUBLE_EQ(score(ref, hyp, 0.25).der, 0.0);
}

TEST(Score, MatchesBruteForceAndDecomposes) {
  std::mt19937_64 rng(2024);
  for (int i = 0; i < 300; ++i) {
    const auto ref = oracle::random_annotation(rng, "r", 4, 12, 30.0, "R");
    const auto hyp = oracle::random_annotation(rng, "r", 4, 12, 30.0, "H");
    const auto got = error_times(ref, hyp);
    const auto want = oracle::brute_force_der(ref, hyp);
    EXPECT_NEAR(got.missed, want.missed, 1e-9);
    EXPECT_NEAR(got.false_alarm, want.false_alarm, 1e-9);
    EXPECT_NEAR(got.confusion, want.confusion, 1e-9);
    EXPECT_NEAR(got.reference_speech, want.reference_speech, 1e-9);
    const auto rep = score(ref, hyp);
    EXPECT_NEAR(rep.der, rep.missed_detection + rep.false_alarm + rep.speaker_confusion, 1e-9);
  }
}

TEST(Score, RelabelingHypothesisIsInvariant) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 50; ++i) {
    const auto ref = oracle::random_annotation(rng, "r", 3, 10, 20.0, "R");
    const auto hyp = oracle::random_annotation(rng, "r", 3, 10, 20.0, "H");
    std::vector<Turn> renamed;
    for (const auto& t : hyp.turns()) renamed.push_back({t.segment, "zz" + t.speaker});
    const auto a = error_times(ref, hyp);
    const auto b = error_times(ref, Annotation("r", renamed));
    EXPECT_NEAR(a.error(), b.error(), 1e-9);
    EXPECT_NEAR(a.confusion, b.confusion, 1e-9);
  }
}

TEST(Score, RemovingCorrectSegmentNeverHelps) {
  Annotation ref("r", {{Segment(0, 5), "A"}, {Segment(5, 9), "B"}});
  Annotation hyp("r", {{Segment(0, 5), "x"}, {Segment(5, 9), "y"}});
  Annotation less("r", {{Segment(0, 5), "x"}});
  EXPECT_GE(score(ref, less).missed_detection, score(ref, hyp).missed_detection);
  EXPECT_GE(score(ref, less).der, score(ref, hyp).der);
}

TEST(Assignment, HungarianMatchesExhaustive) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 200; ++trial) {
    const int r = 1 + static_cast<int>(rng() % 4), c = 1 + static_cast<int>(rng() % 4);
    std::vector<std::vector<double>> w(r, std::vector<double>(c));
    for (auto& row : w)
      for (auto& x : row) x = u(rng);
    auto m = max_weight_assignment(w);
    double got = 0;
    for (int i = 0; i < r; ++i)
      if (m[i] >= 0) got += w[i][m[i]];
    // exhaustive over injections of rows into columns-or-nothing
    double best = 0;
    std::vector<int> cur(r, -1);
    std::function<void(int)> rec = [&](int i) {
      if (i == r) {
        double s = 0;
        for (int k = 0; k < r; ++k)
          if (cur[k] >= 0) s += w[k][cur[k]];
        best = std::max(best, s);
        return;
      }
      cur[i] = -1;
      rec(i + 1);
      for (int j = 0; j < c; ++j) {
        if (std::find(cur.begin(), cur.begin() + i, j) != cur.begin() + i) continue;
        cur[i] = j;
        rec(i + 1);
      }
      cur[i] = -1;
    };
    rec(0);
    EXPECT_NEAR(got, best, 1e-12);
  }
}

TEST(Report, MacroAverageAndRelativeChange) {
  EXPECT_EQ(format_percent(macro_average({18.6, 20.2, 12.2})), "17.0");
  EXPECT_EQ(format_percent(macro_average({16.2, 18.0, 9.8})), "14.7");
  EXPECT_EQ(format_percent(macro_average({42.5})), "42.5");
  EXPECT_EQ(format_relative(relative_change(13.9, 24.4)), "-43.0%");
  EXPECT_EQ(format_relative(relative_change(40.9, 59.7)), "-31.5%");
  EXPECT_EQ(format_relative(relative_change(12.3, 12.3)), "+0.0%");
  EXPECT_THROW(macro_average({}), Error);
  EXPECT_THROW(relative_change(1.0, 0.0), Error);
}

TEST(Report, DecompositionFormatting) {
  // MD 5.8 + FA 11.6 + SC 4.7 over 1000 s of reference speech.
  const auto rep = DERReport::from_times(ErrorTimes{1000.0, 58.0, 116.0, 47.0});
  EXPECT_EQ(format_percent(rep.missed_detection), "5.8");
  EXPECT_EQ(format_percent(rep.false_alarm), "11.6");
  EXPECT_EQ(format_percent(rep.speaker_confusion), "4.7");
  EXPECT_EQ(format_percent(rep.der), "22.1");
  const auto back = DERReport::from_json(rep.to_json());
  EXPECT_DOUBLE_EQ(back.der, rep.der);
}
