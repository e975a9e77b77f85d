#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <set>

#include "nsgr/listspace.hpp"

namespace {

using nsgr::build_tree;
using nsgr::diff_count;
using nsgr::NeighborSpec;
using nsgr::PositionTree;
using nsgr::RankedList;
using nsgr::Rng;
using nsgr::sample_neighbors;

TEST(PositionTree, FourPositionsGiveSevenNodes) {
  PositionTree t = build_tree(4);
  EXPECT_EQ(t.node_count(), 7u);
  EXPECT_EQ(t.depth, 2u);
  auto level0 = t.level_nodes(0);
  ASSERT_EQ(level0.size(), 1u);
  EXPECT_EQ(level0[0].lo, 0u);
  EXPECT_EQ(level0[0].hi, 4u);
  auto level1 = t.level_nodes(1);
  ASSERT_EQ(level1.size(), 2u);
  EXPECT_EQ(level1[0].hi, 2u);
  EXPECT_EQ(level1[1].lo, 2u);
  auto level2 = t.level_nodes(2);
  ASSERT_EQ(level2.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(level2[i].lo, i);
    EXPECT_EQ(level2[i].hi, i + 1);
  }
}

TEST(PositionTree, NodeCountFollowsClosedForm) {
  for (std::size_t m : {2u, 4u, 8u, 16u}) {
    PositionTree t = build_tree(m);
    EXPECT_EQ(t.node_count(), 2 * m - 1) << "m=" << m;
    EXPECT_EQ(t.depth, nsgr::log2_exact(m));
  }
  EXPECT_EQ(build_tree(2).node_count(), 3u);
  EXPECT_EQ(build_tree(8).node_count(), 15u);
}

TEST(PositionTree, SiblingsPartitionParentExactly) {
  PositionTree t = build_tree(8);
  for (std::size_t level = 0; level + 1 <= t.depth; ++level)
    for (std::size_t i = 0; i < (std::size_t{1} << level); ++i) {
      const auto& parent = t.node(level, i);
      const auto& left = t.node(level + 1, 2 * i);
      const auto& right = t.node(level + 1, 2 * i + 1);
      EXPECT_EQ(left.lo, parent.lo);
      EXPECT_EQ(left.hi, right.lo);
      EXPECT_EQ(right.hi, parent.hi);
      EXPECT_EQ(left.hi - left.lo, right.hi - right.lo);
    }
}

TEST(PositionTree, RejectsNonPowerOfTwoWithPaddingHint) {
  for (std::size_t m : {0u, 1u, 3u, 6u, 20u}) {
    try {
      build_tree(m);
      FAIL() << "expected DomainError for m=" << m;
    } catch (const nsgr::DomainError& e) {
      EXPECT_NE(std::string(e.what()).find("pad"), std::string::npos);
    }
  }
}

TEST(Permutations, CountsMatchFactorials) {
  EXPECT_EQ(nsgr::enumerate_permutations(3).size(), 6u);
  auto perms4 = nsgr::enumerate_permutations(4);
  EXPECT_EQ(perms4.size(), 24u);
  std::set<RankedList> unique(perms4.begin(), perms4.end());
  EXPECT_EQ(unique.size(), 24u);
  std::size_t count8 = 0;
  nsgr::for_each_permutation(8, [&](const RankedList&) { ++count8; });
  EXPECT_EQ(count8, 40320u);
  EXPECT_THROW(nsgr::enumerate_permutations(9), nsgr::DomainError);
}

TEST(DiffCount, CountsDisturbedSlots) {
  RankedList a({0, 1, 2, 3});
  EXPECT_EQ(diff_count(a, a), 0u);
  RankedList swapped({1, 0, 2, 3});
  EXPECT_EQ(diff_count(a, swapped), 2u);
  RankedList reversed({3, 2, 1, 0});
  EXPECT_EQ(diff_count(a, reversed), 4u);
  EXPECT_THROW(diff_count(a, RankedList({0, 1})), nsgr::DomainError);
}

TEST(DiffCount, IsSymmetricAndNeverOne) {
  Rng rng(99);
  auto perms = nsgr::enumerate_permutations(4);
  for (const RankedList& a : perms)
    for (const RankedList& b : perms) {
      const std::size_t d = diff_count(a, b);
      EXPECT_EQ(d, diff_count(b, a));
      EXPECT_NE(d, 1u);
      EXPECT_LE(d, 4u);
    }
}

TEST(RankedList, PermutationCheck) {
  EXPECT_TRUE(RankedList({2, 0, 1}).is_permutation());
  EXPECT_FALSE(RankedList({0, 0, 1}).is_permutation());
  EXPECT_FALSE(RankedList({0, 2}).is_permutation());
  EXPECT_THROW(RankedList({1, 1}).check_permutation(), nsgr::DomainError);
}

TEST(Neighbors, BetaOneYieldsOnePerPosition) {
  Rng rng(1);
  NeighborSpec spec;
  spec.beta = 1.0;
  auto neighbors = sample_neighbors(RankedList({0, 1, 2, 3}), 4, spec, rng);
  EXPECT_EQ(neighbors.size(), 4u);
  for (const RankedList& n : neighbors) {
    EXPECT_TRUE(n.is_permutation());
    EXPECT_EQ(diff_count(n, RankedList({0, 1, 2, 3})), 2u);  // single transposition
  }
}

TEST(Neighbors, LengthTwoHasOnlyTheReversal) {
  Rng rng(2);
  NeighborSpec spec;
  spec.beta = 1.0;
  auto neighbors = sample_neighbors(RankedList({0, 1}), 2, spec, rng);
  ASSERT_EQ(neighbors.size(), 1u);
  EXPECT_EQ(neighbors[0], RankedList({1, 0}));
}

TEST(Neighbors, StratificationCoversEveryScale) {
  Rng rng(3);
  NeighborSpec spec;
  spec.beta = 2.0;
  RankedList base({0, 1, 2, 3});
  auto neighbors = sample_neighbors(base, 4, spec, rng);
  // Requested O = 8, but sampling is without replacement over the stratified
  // pool (3 distance-1 + 2 distance-2 transpositions), so 5 distinct edits.
  EXPECT_EQ(neighbors.size(), 5u);
  std::multiset<std::size_t> distances;
  for (const RankedList& n : neighbors) {
    std::vector<std::size_t> moved;
    for (std::size_t t = 0; t < 4; ++t)
      if (n[t] != base[t]) moved.push_back(t);
    ASSERT_EQ(moved.size(), 2u);
    distances.insert(moved[1] - moved[0]);
  }
  EXPECT_GT(distances.count(1), 0u);
  EXPECT_GT(distances.count(2), 0u);
  std::set<RankedList> unique(neighbors.begin(), neighbors.end());
  EXPECT_EQ(unique.size(), neighbors.size());
}

TEST(Neighbors, NeverReturnsTheInputAndAlwaysPermutations) {
  Rng rng(4);
  NeighborSpec spec;
  spec.beta = 5.0;
  for (std::size_t m : {2u, 4u, 8u}) {
    RankedList base = RankedList::identity(m);
    std::shuffle(base.order.begin(), base.order.end(), rng);
    for (int trial = 0; trial < 50; ++trial) {
      auto neighbors = sample_neighbors(base, m, spec, rng);
      EXPECT_GE(neighbors.size(), 1u);
      for (const RankedList& n : neighbors) {
        EXPECT_TRUE(n.is_permutation());
        EXPECT_NE(n, base);
      }
    }
  }
}

TEST(Neighbors, TinyBetaStillProducesAtLeastOne) {
  Rng rng(5);
  NeighborSpec spec;
  spec.beta = 0.1;
  EXPECT_EQ(spec.target_count(4), 1u);
  auto neighbors = sample_neighbors(RankedList({0, 1, 2, 3}), 4, spec, rng);
  EXPECT_EQ(neighbors.size(), 1u);
  NeighborSpec bad;
  bad.beta = 0.0;
  EXPECT_THROW(bad.target_count(4), nsgr::ConfigError);
}

TEST(Neighbors, CandidateExchangeActivatesOnlyWithSparePool) {
  Rng rng(6);
  NeighborSpec spec;
  spec.beta = 5.0;
  RankedList base({0, 1, 2, 3});

  // n == m: every neighbor is a transposition (a valid permutation).
  for (const RankedList& n : sample_neighbors(base, 4, spec, rng))
    EXPECT_TRUE(n.is_permutation());

  // n > m: replacement edits appear, pulling in out-of-list candidates.
  bool saw_exchange = false;
  for (const RankedList& n : sample_neighbors(base, 8, spec, rng))
    for (int idx : n.order)
      if (idx >= 4) saw_exchange = true;
  EXPECT_TRUE(saw_exchange);
}

}  // namespace
