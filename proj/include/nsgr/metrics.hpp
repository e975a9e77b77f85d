#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "nsgr/errors.hpp"
#include "nsgr/listspace.hpp"
#include "nsgr/tensor.hpp"

namespace nsgr {

using ListValuer = std::function<double(const RankedList&)>;

// Probability that a random positive outscores a random negative, ties
// counted half; computed via tie-averaged ranks. Exact operands (wins are
// integers, ties contribute halves) keep this bit-equal to pair counting.
inline double auc(const std::vector<double>& predictions, const std::vector<int>& labels) {
  if (predictions.size() != labels.size()) throw DomainError("auc: size mismatch");
  std::size_t n_pos = 0, n_neg = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw DataError("auc: label outside {0,1}");
    y == 1 ? ++n_pos : ++n_neg;
  }
  if (n_pos == 0 || n_neg == 0)
    throw DomainError("auc: undefined for single-class input");

  std::vector<std::size_t> idx(predictions.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return predictions[a] < predictions[b]; });

  // Sum of tie-averaged ranks (1-based) over positives, kept as 2*rank so the
  // arithmetic stays integral.
  long long rank2_pos_sum = 0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j < idx.size() && predictions[idx[j]] == predictions[idx[i]]) ++j;
    const long long rank2 = static_cast<long long>(i + 1) + static_cast<long long>(j);  // 2 * avg rank
    for (std::size_t k = i; k < j; ++k)
      if (labels[idx[k]] == 1) rank2_pos_sum += rank2;
    i = j;
  }
  const long long numer2 =
      rank2_pos_sum - static_cast<long long>(n_pos) * static_cast<long long>(n_pos + 1);
  return static_cast<double>(numer2) /
         (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// O(n^2) pair-counting oracle for auc.
inline double auc_pair_count(const std::vector<double>& predictions, const std::vector<int>& labels) {
  if (predictions.size() != labels.size()) throw DomainError("auc_pair_count: size mismatch");
  long long wins2 = 0;  // 2*wins + ties
  long long pairs = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < predictions.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (predictions[i] > predictions[j]) wins2 += 2;
      else if (predictions[i] == predictions[j]) wins2 += 1;
    }
  }
  if (pairs == 0) throw DomainError("auc_pair_count: undefined for single-class input");
  return static_cast<double>(wins2) / (2.0 * static_cast<double>(pairs));
}

struct ListLabels {
  std::vector<double> predictions;
  std::vector<int> labels;
};

struct GaucResult {
  double value = 0.0;
  std::size_t used_lists = 0;
  std::size_t skipped_lists = 0;  // uniform-label lists
};

// Impression-weighted mean of per-list AUCs; uniform-label lists are skipped
// and counted.
inline GaucResult gauc(const std::vector<ListLabels>& lists) {
  GaucResult res;
  double weighted = 0.0;
  double weight_sum = 0.0;
  for (const ListLabels& l : lists) {
    const bool has_pos = std::count(l.labels.begin(), l.labels.end(), 1) > 0;
    const bool has_neg = std::count(l.labels.begin(), l.labels.end(), 0) > 0;
    if (!has_pos || !has_neg) {
      ++res.skipped_lists;
      continue;
    }
    const double w = static_cast<double>(l.labels.size());
    weighted += w * auc(l.predictions, l.labels);
    weight_sum += w;
    ++res.used_lists;
  }
  if (res.used_lists == 0) throw DomainError("gauc: every list was single-class");
  res.value = weighted / weight_sum;
  return res;
}

enum class HitRatioMode { Exhaustive, Sampled };

// 1 iff the generated list's value reaches the top p% of the permutation
// space: against all m! values in exhaustive mode, against the empirical
// percentile of uniformly sampled permutations otherwise.
inline int hit_ratio(const RankedList& generated, const ListValuer& value, double percent,
                     HitRatioMode mode, Rng& rng, std::size_t sample_count = 1000) {
  if (percent <= 0.0 || percent > 100.0) throw DomainError("hit_ratio: p must lie in (0, 100]");
  const std::size_t m = generated.size();
  const double gen_value = value(generated);

  std::vector<double> values;
  if (mode == HitRatioMode::Exhaustive) {
    for_each_permutation(m, [&](const RankedList& l) { values.push_back(value(l)); });
  } else {
    RankedList l = RankedList::identity(m);
    values.reserve(sample_count);
    for (std::size_t s = 0; s < sample_count; ++s) {
      std::shuffle(l.order.begin(), l.order.end(), rng);
      values.push_back(value(l));
    }
  }
  std::size_t k = static_cast<std::size_t>(
      std::ceil(percent / 100.0 * static_cast<double>(values.size())));
  k = std::max<std::size_t>(1, std::min(k, values.size()));
  std::nth_element(values.begin(), values.begin() + static_cast<long>(k - 1), values.end(),
                   std::greater<double>());
  const double threshold = values[k - 1];
  return gen_value >= threshold ? 1 : 0;
}

struct ValueHistogram {
  std::vector<double> bin_edges;   // bins+1 edges over [vmin, vmax]
  std::vector<std::size_t> counts;
};

struct ValuePercentileResult {
  double normalized = 0.0;  // (V - Vmin) / (Vmax - Vmin) over the full space
  bool degenerate = false;  // Vmax == Vmin
  double vmin = 0.0, vmax = 0.0, vgen = 0.0;
  std::vector<double> percentile_markers;  // normalized values at 50/70/80/90/99%
  ValueHistogram histogram;
};

// Where the generated list's value sits inside the exhaustively enumerated
// value range, plus the distribution itself.
inline ValuePercentileResult value_percentile(const RankedList& generated, const ListValuer& value,
                                              std::size_t m, std::size_t bins = 50) {
  std::vector<double> values;
  for_each_permutation(m, [&](const RankedList& l) { values.push_back(value(l)); });
  ValuePercentileResult res;
  res.vgen = value(generated);
  res.vmin = *std::min_element(values.begin(), values.end());
  res.vmax = *std::max_element(values.begin(), values.end());
  if (res.vmax == res.vmin) {
    res.degenerate = true;
    res.normalized = 1.0;
    return res;
  }
  const double span = res.vmax - res.vmin;
  res.normalized = (res.vgen - res.vmin) / span;

  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  for (double p : {50.0, 70.0, 80.0, 90.0, 99.0}) {
    auto at = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(sorted.size()))) - 1;
    at = std::min(at, sorted.size() - 1);
    res.percentile_markers.push_back((sorted[at] - res.vmin) / span);
  }

  res.histogram.counts.assign(bins, 0);
  for (std::size_t b = 0; b <= bins; ++b)
    res.histogram.bin_edges.push_back(res.vmin + span * static_cast<double>(b) / static_cast<double>(bins));
  for (double v : values) {
    auto b = static_cast<std::size_t>((v - res.vmin) / span * static_cast<double>(bins));
    res.histogram.counts[std::min(b, bins - 1)] += 1;
  }
  return res;
}

// Empirical P(final position j | initial position i); rows sum to 1.
inline Tensor position_migration(const std::vector<std::pair<RankedList, RankedList>>& initial_final) {
  if (initial_final.empty()) throw DomainError("position_migration: no traces");
  const std::size_t m = initial_final.front().first.size();
  Tensor counts(m, m);
  for (const auto& [initial, final_list] : initial_final) {
    if (initial.size() != m || final_list.size() != m)
      throw DomainError("position_migration: inconsistent list lengths");
    std::vector<std::size_t> final_pos(m);
    for (std::size_t j = 0; j < m; ++j) final_pos[static_cast<std::size_t>(final_list[j])] = j;
    for (std::size_t i = 0; i < m; ++i)
      counts.at(i, final_pos[static_cast<std::size_t>(initial[i])]) += 1.0;
  }
  for (std::size_t i = 0; i < m; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < m; ++j) row += counts.at(i, j);
    for (std::size_t j = 0; j < m; ++j) counts.at(i, j) /= row;
  }
  return counts;
}

// Cumulative share of lists within each deviation allowance from a reference
// list: exact match, then at most 2, 3 and 4 differing slots.
struct DiffRates {
  double same = 0.0;
  double within2 = 0.0;
  double within3 = 0.0;
  double within4 = 0.0;
};

inline DiffRates diff_rates(const std::vector<std::pair<RankedList, RankedList>>& generated_vs_best) {
  if (generated_vs_best.empty()) throw DomainError("diff_rates: no pairs");
  DiffRates r;
  const auto n = static_cast<double>(generated_vs_best.size());
  for (const auto& [gen, best] : generated_vs_best) {
    const std::size_t d = diff_count(gen, best);
    if (d == 0) r.same += 1;
    if (d <= 2) r.within2 += 1;
    if (d <= 3) r.within3 += 1;
    if (d <= 4) r.within4 += 1;
  }
  r.same /= n;
  r.within2 /= n;
  r.within3 /= n;
  r.within4 /= n;
  return r;
}

struct MetricReport {
  double auc = 0.0;
  GaucResult gauc;
  double hr1 = 0.0;   // exhaustive HR@1% mean over requests
  double hr10 = 0.0;  // exhaustive HR@10% mean over requests
  double mean_normalized_value = 0.0;
  double greedy_mean_normalized_value = 0.0;
  DiffRates diff;
  Tensor migration;

  void validate() const {
    auto rate = [](double v) { return v >= -1e-12 && v <= 1.0 + 1e-12; };
    if (!rate(diff.same) || diff.same > diff.within2 + 1e-12 || diff.within2 > diff.within3 + 1e-12 ||
        diff.within3 > diff.within4 + 1e-12)
      throw IntegrityError("diff-rate vector must be non-decreasing in the allowance");
    for (std::size_t i = 0; i < migration.rows; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < migration.cols; ++j) row += migration.at(i, j);
      if (std::abs(row - 1.0) > 1e-9) throw IntegrityError("migration rows must sum to 1");
    }
  }
};

}  // namespace nsgr
