#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dbf/labelgen.hpp"
#include "support/oracles.hpp"

using namespace dbf;

TEST(DistanceMap, MatchesBruteForce) {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 60; ++t) {
    std::uniform_int_distribution<int> dim(1, 20);
    const BinaryMask m = oracle::random_mask(rng, dim(rng), dim(rng), 0.7);
    const auto d = distance_map(m);
    const auto ref = oracle::brute_distance(m);
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (std::isinf(ref[i]))
        EXPECT_TRUE(std::isinf(d[i]));
      else
        EXPECT_DOUBLE_EQ(d[i], ref[i]);
    }
  }
}

TEST(DistanceMap, AllForegroundIsInfinite) {
  BinaryMask m(3, 4);
  for (std::size_t i = 0; i < m.size(); ++i) m.set(i, true);
  const auto d = distance_map(m);
  for (double v : d.values()) EXPECT_TRUE(std::isinf(v));
  const auto l = split_labels(m, 3);
  EXPECT_EQ(l.body.count(), m.size());
  EXPECT_TRUE(l.bound.none());
}

TEST(DistanceMap, ChamferMetrics) {
  // single background pixel in the centre of a 5x5 block
  BinaryMask m(5, 5);
  for (std::size_t i = 0; i < m.size(); ++i) m.set(i, true);
  m.set(2, 2, false);
  const auto cb = distance_map(m, DistanceMetric::city_block);
  const auto ch = distance_map(m, DistanceMetric::chessboard);
  EXPECT_DOUBLE_EQ(cb(0, 0), 4);
  EXPECT_DOUBLE_EQ(ch(0, 0), 2);
  EXPECT_DOUBLE_EQ(cb(2, 0), 2);
  EXPECT_DOUBLE_EQ(ch(1, 1), 1);
  EXPECT_DOUBLE_EQ(cb(2, 2), 0);
}

TEST(SplitLabels, HandCaseSquare) {
  // 5x5 square inside a 7x7 background: ring of width 1 is boundary at alpha=1
  BinaryMask m(7, 7);
  for (int y = 1; y < 6; ++y)
    for (int x = 1; x < 6; ++x) m.set(y, x, true);
  const auto l = split_labels(m, 1.0);
  EXPECT_EQ(l.bound.count(), 16u);
  EXPECT_EQ(l.body.count(), 9u);
  EXPECT_TRUE(l.consistent());
  const auto l0 = split_labels(m, 0.0);
  EXPECT_TRUE(l0.bound.none());
  EXPECT_EQ(l0.body.count(), 25u);
  const auto l2 = split_labels(m, 2.0);
  EXPECT_EQ(l2.body.count(), 1u);
}

TEST(SplitLabels, MatchesOracleAndPartitions) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 80; ++t) {
    std::uniform_int_distribution<int> dim(1, 24);
    const BinaryMask m = oracle::random_blob_mask(rng, dim(rng), dim(rng));
    for (double alpha : {0.0, 1.0, 1.5, 2.0, 3.0}) {
      const auto l = split_labels(m, alpha);
      BinaryMask body(1, 1), bound(1, 1);
      oracle::brute_split(m, alpha, body, bound);
      EXPECT_EQ(l.body, body);
      EXPECT_EQ(l.bound, bound);
      EXPECT_TRUE(l.consistent());
      EXPECT_EQ(mask_or(l.body, l.bound), m);
      EXPECT_TRUE(mask_and(l.body, l.bound).none());
    }
  }
}

TEST(SplitLabels, BoundaryGrowsWithAlpha) {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 30; ++t) {
    const BinaryMask m = oracle::random_blob_mask(rng, 20, 20);
    for (double a = 0; a < 5; a += 1)
      EXPECT_TRUE(mask_subset(split_labels(m, a).bound, split_labels(m, a + 1).bound));
  }
}

TEST(SplitLabels, EmptyMaskGivesEmptyLabels) {
  const BinaryMask m(4, 6);
  const auto l = split_labels(m);
  EXPECT_TRUE(l.body.none());
  EXPECT_TRUE(l.bound.none());
}

TEST(SplitLabels, RejectsBadAlpha) {
  const BinaryMask m(4, 4);
  EXPECT_THROW(split_labels(m, -1.0), ParameterError);
  EXPECT_THROW(split_labels(m, std::nan("")), ParameterError);
  EXPECT_THROW(split_labels(m, INFINITY), ParameterError);
}

TEST(BinaryMaskType, RejectsDegenerateInput) {
  EXPECT_THROW(BinaryMask(0, 3), ShapeError);
  EXPECT_THROW(BinaryMask(2, 2, {0, 1, 2, 0}), ParameterError);
}
