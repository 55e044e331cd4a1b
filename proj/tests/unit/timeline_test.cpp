// SPDX-License-Identifier: Apache-2.0

#include "eendvc/timeline.hpp"

#include <gtest/gtest.h>

#include <random>

#include "eendvc/error.hpp"
#include "oracles.hpp"

using namespace eendvc;

TEST(Segment, RejectsEmptyAndInverted) {
  EXPECT_THROW(Segment(1.0, 1.0), Error);
  EXPECT_THROW(Segment(2.0, 1.0), Error);
  EXPECT_THROW(Segment(-0.5, 1.0), Error);
  EXPECT_DOUBLE_EQ(Segment(0.5, 2.0).duration(), 1.5);
}

TEST(Annotation, KeepsSortedUniqueEntries) {
  Annotation a("rec");
  EXPECT_TRUE(a.add(Segment(3, 4), "B"));
  EXPECT_TRUE(a.add(Segment(0, 5), "A"));
  EXPECT_TRUE(a.add(Segment(0, 5), "B"));
  EXPECT_FALSE(a.add(Segment(0, 5), "A"));
  ASSERT_EQ(a.size(), 3u);
  EXPECT_EQ(a.turns()[0].speaker, "A");
  EXPECT_EQ(a.turns()[1].speaker, "B");
  EXPECT_EQ(a.turns()[2].segment.start(), 3.0);
}

TEST(Rttm, ParsesSingleLine) {
  auto m = parse_rttm_string("SPEAKER rec1 1 0.00 10.00 <NA> <NA> spkA <NA> <NA>\n");
  ASSERT_EQ(m.size(), 1u);
  const auto& a = m.at("rec1");
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a.turns()[0], (Turn{Segment(0, 10), "spkA"}));
}

TEST(Rttm, EmptyInput) {
  EXPECT_TRUE(parse_rttm_string("").empty());
  EXPECT_TRUE(serialize_rttm(AnnotationMap{}).empty());
}

TEST(Rttm, OverlapAcrossLines) {
  auto m = parse_rttm_string(
      "SPEAKER rec1 1 0 5 <NA> <NA> spkA <NA> <NA>\n"
      "SPEAKER rec1 1 3 5 <NA> <NA> spkB <NA> <NA>\n");
  const auto s = m.at("rec1").stats();
  EXPECT_DOUBLE_EQ(s.overlap_duration, 2.0);
  EXPECT_DOUBLE_EQ(s.total_speech, 10.0);
  EXPECT_EQ(s.speaker_count, 2);
}

TEST(Rttm, ErrorsCarryLineNumbers) {
  try {
    parse_rttm_string("# comment\nSPEAKER rec1 1 0 1 <NA> <NA> a <NA> <NA>\nSPEAKER rec1 1 0\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  EXPECT_THROW(parse_rttm_string("SPEAKER r 1 0 0 <NA> <NA> a <NA> <NA>"), ParseError);
  EXPECT_THROW(parse_rttm_string("SPEAKER r 1 0 -1 <NA> <NA> a <NA> <NA>"), ParseError);
  EXPECT_THROW(parse_rttm_string("SPEAKER r 1 x 1 <NA> <NA> a <NA> <NA>"), ParseError);
  EXPECT_THROW(parse_rttm_string("LEXEME r 1 0 1 <NA> <NA> a <NA> <NA>"), ParseError);
}

TEST(Rttm, SerializesFixtureLineExactly) {
  Annotation a("rec1", {{Segment(0, 10), "spkA"}});
  EXPECT_EQ(serialize_rttm(a), "SPEAKER rec1 1 0.000 10.000 <NA> <NA> spkA <NA> <NA>\n");
}

TEST(Rttm, RandomRoundTrip) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 200; ++i) {
    AnnotationMap m;
    for (int r = 0; r < 3; ++r) {
      auto a = oracle::random_annotation(rng, "rec" + std::to_string(r), 4, 50, 300.0);
      m.emplace(a.uri(), a);
    }
    ASSERT_EQ(parse_rttm_string(serialize_rttm(m)), m);
  }
}

TEST(Crop, IntersectsAndShifts) {
  Annotation a("r", {{Segment(0, 10), "A"}});
  EXPECT_EQ(crop(a, Segment(2, 6)), Annotation("r", {{Segment(0, 4), "A"}}));
  EXPECT_TRUE(crop(Annotation("r", {{Segment(0, 1), "A"}}), Segment(5, 8)).empty());
  Annotation b("r", {{Segment(3, 8), "B"}, {Segment(0, 5), "A"}});
  EXPECT_EQ(crop(b, Segment(4, 9)), Annotation("r", {{Segment(0, 1), "A"}, {Segment(0, 4), "B"}}));
}

TEST(Crop, Idempotent) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 100; ++i) {
    auto a = oracle::random_annotation(rng, "r", 3, 20, 60.0);
    const Segment w(10.0, 30.0);
    const auto once = crop(a, w);
    EXPECT_EQ(crop(once, Segment(0, w.duration())), once);
  }
}

TEST(Discretize, FrameCentreMembership) {
  Annotation a("r", {{Segment(0, 1), "A"}});
  auto m = discretize(a, 0.5, 4, {"A"});
  ASSERT_EQ(m.rows(), 4);
  EXPECT_EQ((std::vector<int>{m(0, 0), m(1, 0), m(2, 0), m(3, 0)}), (std::vector<int>{1, 1, 0, 0}));

  EXPECT_EQ(discretize(Annotation("r"), 0.5, 3, {"A", "B"}).cast<int>().sum(), 0);

  Annotation ab("r", {{Segment(0, 2), "A"}, {Segment(1, 3), "B"}});
  auto o = discretize(ab, 0.5, 6, {"A", "B"});
  for (int t = 0; t < 6; ++t) {
    const bool both = o(t, 0) && o(t, 1);
    EXPECT_EQ(both, t == 2 || t == 3) << t;
  }
  EXPECT_THROW(discretize(ab, 0.5, 6, {"A"}), Error);
}

TEST(Discretize, SumApproximatesSpeech) {
  std::mt19937_64 rng(3);
  const double frame = 0.02;
  for (int i = 0; i < 50; ++i) {
    auto a = oracle::random_annotation(rng, "r", 3, 10, 20.0);
    const auto labels = a.labels();
    auto m = discretize(a, frame, 2000, labels);
    double speech = 0.0;
    std::size_t boundaries = 0;
    for (const auto& l : labels) {
      const auto support = a.support(l);
      boundaries += 2 * support.size();
      for (const auto& s : support) speech += s.duration();
    }
    EXPECT_NEAR(m.cast<double>().sum() * frame, speech, frame * static_cast<double>(boundaries) + 1e-9);
  }
}
