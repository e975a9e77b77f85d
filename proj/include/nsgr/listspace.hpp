#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "nsgr/errors.hpp"
#include "nsgr/tensor.hpp"

namespace nsgr {

using ItemId = std::int64_t;

struct Item {
  ItemId id = 0;
  std::array<int, 3> semantic_id{0, 0, 0};
  std::vector<double> features;
};

struct CandidateSet {
  std::int64_t user_id = 0;
  std::vector<Item> items;

  std::size_t size() const { return items.size(); }

  void validate() const {
    for (std::size_t i = 0; i < items.size(); ++i)
      for (std::size_t j = i + 1; j < items.size(); ++j)
        if (items[i].id == items[j].id) throw DataError("candidate set has duplicate item ids");
  }
};

// An ordering over candidate positions: order[t] is the candidate index shown
// at slot t.
struct RankedList {
  std::vector<int> order;

  RankedList() = default;
  explicit RankedList(std::vector<int> o) : order(std::move(o)) {}

  static RankedList identity(std::size_t m) {
    RankedList l;
    l.order.resize(m);
    std::iota(l.order.begin(), l.order.end(), 0);
    return l;
  }

  std::size_t size() const { return order.size(); }
  int operator[](std::size_t t) const { return order[t]; }

  bool is_permutation() const {
    std::vector<int> sorted = order;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i)
      if (sorted[i] != static_cast<int>(i)) return false;
    return true;
  }

  void check_permutation() const {
    if (!is_permutation()) throw DomainError("ranked list is not a permutation");
  }

  bool operator==(const RankedList& o) const { return order == o.order; }
  bool operator<(const RankedList& o) const { return order < o.order; }
};

inline bool is_power_of_two(std::size_t m) { return m != 0 && (m & (m - 1)) == 0; }

inline std::size_t log2_exact(std::size_t m) {
  std::size_t k = 0;
  while ((std::size_t{1} << k) < m) ++k;
  return k;
}

// Complete binary tree over list positions. Level k holds 2^k nodes, each
// covering a contiguous interval of width m / 2^k; 2m - 1 nodes in total.
struct PositionTree {
  struct Node {
    std::size_t level = 0;
    std::size_t index = 0;  // among its level, left to right
    std::size_t lo = 0, hi = 0;
  };

  std::size_t m = 0;
  std::size_t depth = 0;  // leaf level; levels run 0..depth
  std::vector<Node> nodes;

  std::size_t node_count() const { return nodes.size(); }

  std::size_t level_offset(std::size_t level) const { return (std::size_t{1} << level) - 1; }

  const Node& node(std::size_t level, std::size_t index) const {
    return nodes[level_offset(level) + index];
  }

  std::vector<Node> level_nodes(std::size_t level) const {
    if (level > depth) throw DomainError("tree level out of range");
    const std::size_t n = std::size_t{1} << level;
    std::vector<Node> out(nodes.begin() + static_cast<long>(level_offset(level)),
                          nodes.begin() + static_cast<long>(level_offset(level) + n));
    return out;
  }
};

inline PositionTree build_tree(std::size_t m) {
  if (!is_power_of_two(m) || m < 2)
    throw DomainError("build_tree: list length " + std::to_string(m) +
                      " must be a power of two >= 2; pad the list upstream");
  PositionTree tree;
  tree.m = m;
  tree.depth = log2_exact(m);
  for (std::size_t level = 0; level <= tree.depth; ++level) {
    const std::size_t count = std::size_t{1} << level;
    const std::size_t width = m / count;
    for (std::size_t i = 0; i < count; ++i)
      tree.nodes.push_back({level, i, i * width, (i + 1) * width});
  }
  return tree;
}

// Number of slots where the two lists disagree. Values land in {0, 2, 3, .., m};
// a single transposition disturbs exactly two slots.
inline std::size_t diff_count(const RankedList& a, const RankedList& b) {
  if (a.size() != b.size()) throw DomainError("diff_count: length mismatch");
  std::size_t diffs = 0;
  for (std::size_t t = 0; t < a.size(); ++t)
    if (a[t] != b[t]) ++diffs;
  return diffs;
}

// Full permutation space; guarded because it grows factorially.
inline std::vector<RankedList> enumerate_permutations(std::size_t m) {
  if (m > 8)
    throw DomainError("enumerate_permutations: m = " + std::to_string(m) +
                      " exceeds the exhaustive guard (8); use sampled hit-ratio instead");
  std::vector<int> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::vector<RankedList> out;
  do {
    out.emplace_back(order);
  } while (std::next_permutation(order.begin(), order.end()));
  return out;
}

inline void for_each_permutation(std::size_t m, const std::function<void(const RankedList&)>& fn) {
  if (m > 8)
    throw DomainError("for_each_permutation: m = " + std::to_string(m) +
                      " exceeds the exhaustive guard (8); use sampled hit-ratio instead");
  std::vector<int> order(m);
  std::iota(order.begin(), order.end(), 0);
  RankedList list;
  do {
    list.order = order;
    fn(list);
  } while (std::next_permutation(order.begin(), order.end()));
}

struct NeighborSpec {
  double beta = 2.0;          // samples per position
  bool intra_list = true;     // transposition neighbors
  bool candidate_exchange = true;  // replacement neighbors, active only when n > m

  std::size_t target_count(std::size_t m) const {
    if (beta <= 0.0) throw ConfigError("neighbor sampling: beta must be > 0");
    const auto o = static_cast<std::size_t>(std::llround(beta * static_cast<double>(m)));
    return std::max<std::size_t>(1, o);
  }
};

// One-edit neighbors of `list`, stratified over swap distances {1, 2, 4, ...,
// m/2} so every tree scale is exercised. Sampling is without replacement, so
// the realized count is min(target, distinct stratified edits); the input list
// itself is never returned. Candidate-exchange edits need a pool larger than
// the list and are inert when n == m.
inline std::vector<RankedList> sample_neighbors(const RankedList& list, std::size_t pool_size,
                                                const NeighborSpec& spec, Rng& rng) {
  list.check_permutation();
  const std::size_t m = list.size();
  if (m < 2) throw DomainError("sample_neighbors: list too short");
  const std::size_t target = spec.target_count(m);

  // Per-distance pools of left endpoints, shuffled once.
  std::vector<std::size_t> distances;
  for (std::size_t d = 1; d <= m / 2; d *= 2) distances.push_back(d);
  std::vector<std::vector<std::size_t>> pools(distances.size());
  if (spec.intra_list)
    for (std::size_t s = 0; s < distances.size(); ++s) {
      pools[s].resize(m - distances[s]);
      std::iota(pools[s].begin(), pools[s].end(), 0);
      std::shuffle(pools[s].begin(), pools[s].end(), rng);
    }

  // Unused candidates for exchange edits (valid only when the pool is larger
  // than the list; candidate indices m..pool_size-1 are outside the list).
  std::vector<std::size_t> exchange_slots;
  if (spec.candidate_exchange && pool_size > m) {
    for (std::size_t t = 0; t < m; ++t) exchange_slots.push_back(t);
    std::shuffle(exchange_slots.begin(), exchange_slots.end(), rng);
  }

  std::vector<RankedList> out;
  std::size_t stratum = 0;
  std::size_t exhausted_streak = 0;
  const std::size_t kinds = distances.size() + (exchange_slots.empty() ? 0 : 1);
  while (out.size() < target && exhausted_streak < kinds && kinds > 0) {
    if (stratum < distances.size()) {
      auto& pool = pools[stratum];
      if (pool.empty()) {
        ++exhausted_streak;
      } else {
        exhausted_streak = 0;
        const std::size_t i = pool.back();
        pool.pop_back();
        RankedList n = list;
        std::swap(n.order[i], n.order[i + distances[stratum]]);
        out.push_back(std::move(n));
      }
    } else {
      if (exchange_slots.empty()) {
        ++exhausted_streak;
      } else {
        exhausted_streak = 0;
        const std::size_t t = exchange_slots.back();
        exchange_slots.pop_back();
        std::uniform_int_distribution<std::size_t> pick(m, pool_size - 1);
        RankedList n = list;
        n.order[t] = static_cast<int>(pick(rng));
        out.push_back(std::move(n));
      }
    }
    stratum = (stratum + 1) % (distances.size() + 1);
    if (exchange_slots.empty() && stratum == distances.size()) stratum = 0;
  }
  return out;
}

}  // namespace nsgr
