#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "nsgr/errors.hpp"
#include "nsgr/interest.hpp"
#include "nsgr/listspace.hpp"
#include "nsgr/tensor.hpp"
#include "nsgr/training.hpp"

namespace nsgr {

// Ground-truth click model over a small item vocabulary. The expected value
// of a list is available in closed form, which makes the world an exact
// oracle for every downstream metric:
//   V(L) = sum_t sigmoid(u[L[t]] + b[t] + sum_{t' in window} c[L[t']][L[t]]).
// Utilities are a noisy linear readout of item features and the pairwise
// matrix is a low-rank bilinear form, so both are learnable from features
// rather than memorized per item.
class SyntheticWorld {
 public:
  SyntheticWorld(const TrainConfig& cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed) {
    Rng rng(seed);
    const std::size_t n = cfg.vocab_items;
    const std::size_t d = cfg.embedding_dim;

    features_.resize(n, std::vector<double>(d));
    std::normal_distribution<double> unit(0.0, 1.0);
    for (auto& f : features_)
      for (double& v : f) v = unit(rng);

    std::vector<double> direction(d);
    for (double& v : direction) v = unit(rng);
    const double norm = std::sqrt(std::inner_product(direction.begin(), direction.end(),
                                                     direction.begin(), 0.0));
    for (double& v : direction) v /= norm;

    utilities_.resize(n);
    std::normal_distribution<double> unoise(0.0, cfg.utility_noise);
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += features_[i][k] * direction[k];
      utilities_[i] = cfg.utility_scale * dot + unoise(rng);
    }

    // Low-rank bilinear pairwise effects, scaled so a typical entry has
    // magnitude around pair_scale.
    Tensor mix = Tensor::normal(d, d, rng, 1.0 / std::sqrt(static_cast<double>(d)));
    pairwise_ = Tensor(n, n);
    double mag = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        double acc = 0.0;
        for (std::size_t a = 0; a < d; ++a) {
          double inner = 0.0;
          for (std::size_t b = 0; b < d; ++b) inner += mix.at(a, b) * features_[j][b];
          acc += features_[i][a] * inner;
        }
        pairwise_.at(i, j) = acc;
        mag += std::abs(acc);
      }
    mag /= static_cast<double>(n * (n - 1));
    const double rescale = mag > 0.0 ? cfg.pair_scale / mag : 0.0;
    for (double& v : pairwise_.data) v *= rescale;

    biases_.resize(cfg.m);
    for (std::size_t t = 0; t < cfg.m; ++t)
      biases_[t] = cfg.bias_top + (cfg.bias_bottom - cfg.bias_top) * static_cast<double>(t) /
                                      static_cast<double>(cfg.m - 1);

    std::normal_distribution<double> pnoise(0.0, cfg.pointwise_noise);
    pointwise_.resize(n);
    for (std::size_t i = 0; i < n; ++i) pointwise_[i] = utilities_[i] + pnoise(rng);

    semantic_ids_ = assign_semantic_ids(features_, SemanticCodebook{cfg.codebook}, seed ^ 0x5eed);
  }

  const TrainConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t vocab() const { return features_.size(); }
  double utility(std::size_t item) const { return utilities_[item]; }
  double pointwise_score(std::size_t item) const { return pointwise_[item]; }
  double pairwise(std::size_t i, std::size_t j) const { return pairwise_.at(i, j); }
  const std::vector<double>& features(std::size_t item) const { return features_[item]; }
  const std::array<int, 3>& semantic_id(std::size_t item) const { return semantic_ids_[item]; }

  Item item(std::size_t vocab_index) const {
    Item it;
    it.id = static_cast<ItemId>(vocab_index);
    it.semantic_id = semantic_ids_[vocab_index];
    it.features = features_[vocab_index];
    return it;
  }

  // Click probability of slot t when `vocab_ids[order[t]]` fills it.
  double click_probability(const std::vector<std::size_t>& vocab_ids, const RankedList& order,
                           std::size_t t) const {
    const std::size_t m = order.size();
    const std::size_t cur = vocab_ids[static_cast<std::size_t>(order[t])];
    double z = utilities_[cur] + biases_[t];
    for (std::size_t w = 1; w <= cfg_.window; ++w) {
      if (t >= w) z += pairwise_.at(vocab_ids[static_cast<std::size_t>(order[t - w])], cur);
      if (t + w < m) z += pairwise_.at(vocab_ids[static_cast<std::size_t>(order[t + w])], cur);
    }
    return sigmoid(z);
  }

  // Exact expected list value.
  double list_value(const std::vector<std::size_t>& vocab_ids, const RankedList& order) const {
    double v = 0.0;
    for (std::size_t t = 0; t < order.size(); ++t) v += click_probability(vocab_ids, order, t);
    return v;
  }

 private:
  TrainConfig cfg_;
  std::uint64_t seed_;
  std::vector<std::vector<double>> features_;
  std::vector<double> utilities_;
  std::vector<double> pointwise_;
  std::vector<double> biases_;
  Tensor pairwise_;
  std::vector<std::array<int, 3>> semantic_ids_;
};

// One logged pageview: a candidate set in its logged order with Bernoulli
// labels per slot. This is the JSONL record shape.
struct PageviewSample {
  std::int64_t user_id = 0;
  std::vector<std::size_t> vocab_ids;  // logged order
  std::vector<int> labels;
  std::vector<double> pointwise_scores;
};

struct SynthDataset {
  std::vector<PageviewSample> samples;
  std::size_t filtered_uniform = 0;  // all-0 / all-1 pageviews dropped
};

inline std::vector<std::size_t> sample_candidates(const SyntheticWorld& world, Rng& rng) {
  std::vector<std::size_t> all(world.vocab());
  std::iota(all.begin(), all.end(), 0);
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(world.config().m);
  return all;
}

inline RankedList greedy_by_pointwise(const SyntheticWorld& world,
                                      const std::vector<std::size_t>& vocab_ids) {
  std::vector<int> order(vocab_ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return world.pointwise_score(vocab_ids[static_cast<std::size_t>(a)]) >
           world.pointwise_score(vocab_ids[static_cast<std::size_t>(b)]);
  });
  return RankedList(order);
}

// Draws labeled pageviews under the given logging policy, dropping pageviews
// whose labels come out uniform.
inline SynthDataset synth_generate(const SyntheticWorld& world, std::size_t users,
                                   std::size_t lists_per_user, const std::string& policy, Rng& rng) {
  if (policy != "random" && policy != "greedy")
    throw ConfigError("synth_generate: policy must be random or greedy");
  SynthDataset ds;
  const std::size_t m = world.config().m;
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  const std::size_t max_attempts_per_list = 64;
  for (std::size_t u = 0; u < users; ++u) {
    for (std::size_t l = 0; l < lists_per_user; ++l) {
      bool produced = false;
      for (std::size_t attempt = 0; attempt < max_attempts_per_list && !produced; ++attempt) {
        std::vector<std::size_t> cands = sample_candidates(world, rng);
        RankedList order;
        if (policy == "greedy") {
          order = greedy_by_pointwise(world, cands);
        } else {
          order = RankedList::identity(m);
          std::shuffle(order.order.begin(), order.order.end(), rng);
        }
        PageviewSample s;
        s.user_id = static_cast<std::int64_t>(u);
        s.pointwise_scores.resize(m);
        s.vocab_ids.resize(m);
        s.labels.resize(m);
        int ones = 0;
        for (std::size_t t = 0; t < m; ++t) {
          const std::size_t vid = cands[static_cast<std::size_t>(order[t])];
          s.vocab_ids[t] = vid;
          s.pointwise_scores[t] = world.pointwise_score(vid);
          const double p = world.click_probability(cands, order, t);
          s.labels[t] = coin(rng) < p ? 1 : 0;
          ones += s.labels[t];
        }
        if (ones == 0 || ones == static_cast<int>(m)) {
          ++ds.filtered_uniform;
          continue;
        }
        ds.samples.push_back(std::move(s));
        produced = true;
      }
      if (!produced)
        throw DataError("synth_generate: labels stayed uniform after retries; adjust world noise");
    }
  }
  return ds;
}

// User taste vectors drive the behavior history; histories only feed the
// interest encoder, clicks stay item- and position-driven.
inline BehaviorSequence synth_behavior(const SyntheticWorld& world, std::uint64_t user_seed,
                                       std::size_t length) {
  Rng rng(user_seed);
  const std::size_t d = world.config().embedding_dim;
  std::vector<double> taste(d);
  std::normal_distribution<double> unit(0.0, 1.0);
  for (double& v : taste) v = unit(rng);

  std::vector<double> logits(world.vocab());
  for (std::size_t i = 0; i < world.vocab(); ++i) {
    double dot = 0.0;
    for (std::size_t k = 0; k < d; ++k) dot += taste[k] * world.features(i)[k];
    logits[i] = dot;
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> probs(world.vocab());
  double sum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    probs[i] = std::exp(logits[i] - mx);
    sum += probs[i];
  }
  for (double& p : probs) p /= sum;

  std::discrete_distribution<std::size_t> pick(probs.begin(), probs.end());
  BehaviorSequence seq;
  for (std::size_t t = 0; t < length; ++t) {
    BehaviorEvent e;
    e.code = world.semantic_id(pick(rng));
    e.timestamp = static_cast<double>(t);
    seq.events.push_back(e);
  }
  return seq;
}

}  // namespace nsgr
