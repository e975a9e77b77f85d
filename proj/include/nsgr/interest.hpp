#pragma once

#include <array>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "nsgr/autodiff.hpp"
#include "nsgr/errors.hpp"
#include "nsgr/listspace.hpp"
#include "nsgr/nn.hpp"
#include "nsgr/params.hpp"

namespace nsgr {

struct BehaviorEvent {
  std::array<int, 3> code{0, 0, 0};
  double timestamp = 0.0;
};

struct BehaviorSequence {
  std::vector<BehaviorEvent> events;

  std::size_t size() const { return events.size(); }

  void validate() const {
    for (std::size_t i = 1; i < events.size(); ++i)
      if (events[i].timestamp < events[i - 1].timestamp)
        throw DataError("behavior timestamps must be non-decreasing");
  }
};

// Three stacked codebooks; token ids are level-offset codes, so the flat
// vocabulary is the concatenation of the level codebooks.
struct SemanticCodebook {
  std::array<int, 3> sizes{8, 8, 8};

  int vocab() const { return sizes[0] + sizes[1] + sizes[2]; }

  int token(int level, int code) const {
    if (level < 0 || level > 2 || code < 0 || code >= sizes[level])
      throw DomainError("semantic code out of range: level " + std::to_string(level) + " code " +
                        std::to_string(code));
    int off = 0;
    for (int l = 0; l < level; ++l) off += sizes[l];
    return off + code;
  }

  std::vector<std::size_t> tokens(const BehaviorSequence& seq) const {
    std::vector<std::size_t> out;
    out.reserve(seq.events.size() * 3);
    for (const BehaviorEvent& e : seq.events)
      for (int l = 0; l < 3; ++l) out.push_back(static_cast<std::size_t>(token(l, e.code[l])));
    return out;
  }
};

// Balanced product quantization of item feature vectors: each level owns a
// contiguous slice of the feature dims, projects it onto a seeded random
// direction and buckets items by rank, so codes are uniformly used.
inline std::vector<std::array<int, 3>> assign_semantic_ids(
    const std::vector<std::vector<double>>& features, const SemanticCodebook& cb, std::uint64_t seed) {
  if (features.empty()) throw DataError("assign_semantic_ids: no items");
  const std::size_t dim = features[0].size();
  if (dim < 3) throw ConfigError("assign_semantic_ids: need at least 3 feature dims");
  Rng rng(seed);
  std::vector<std::array<int, 3>> out(features.size());
  for (int level = 0; level < 3; ++level) {
    const std::size_t lo = level * dim / 3;
    const std::size_t hi = (level + 1) * dim / 3;
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> direction(hi - lo);
    for (double& v : direction) v = dist(rng);

    std::vector<std::pair<double, std::size_t>> scored(features.size());
    for (std::size_t i = 0; i < features.size(); ++i) {
      double s = 0.0;
      for (std::size_t d = lo; d < hi; ++d) s += features[i][d] * direction[d - lo];
      scored[i] = {s, i};
    }
    std::sort(scored.begin(), scored.end());
    const auto buckets = static_cast<std::size_t>(cb.sizes[level]);
    for (std::size_t rank = 0; rank < scored.size(); ++rank) {
      auto code = static_cast<int>(rank * buckets / scored.size());
      out[scored[rank].second][level] = std::min(code, cb.sizes[level] - 1);
    }
  }
  return out;
}

struct InterestConfig {
  std::size_t dim = 8;
  std::size_t layers = 2;
  std::size_t ffn_hidden = 32;
};

struct PretrainStats {
  double heldout_ce = 0.0;
  double unigram_ce = 0.0;
  double train_ce = 0.0;
  std::size_t steps = 0;
};

// Causal self-attention encoder over semantic-id token streams, pretrained
// with next-token prediction and frozen afterwards as a feature source.
class InterestEncoder {
 public:
  InterestEncoder(SemanticCodebook cb, InterestConfig cfg, ParamStore& params, Rng& rng)
      : cb_(cb), cfg_(cfg), params_(&params) {
    const auto vocab = static_cast<std::size_t>(cb_.vocab());
    params.create_normal("interest.tok", vocab, cfg_.dim, rng);
    params.create_normal("interest.cold", 1, cfg_.dim, rng);
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      const std::string p = "interest.l" + std::to_string(l);
      init_attention(params, p + ".sa", {cfg_.dim, cfg_.dim, cfg_.dim}, rng);
      init_mlp(params, p + ".ffn", MlpSpec({cfg_.dim, cfg_.ffn_hidden, cfg_.dim}), rng);
    }
    init_mlp(params, "interest.head", MlpSpec({cfg_.dim, vocab}), rng);
  }

  // Attach to an already-populated store (e.g. a loaded checkpoint).
  InterestEncoder(SemanticCodebook cb, InterestConfig cfg, ParamStore& params)
      : cb_(cb), cfg_(cfg), params_(&params) {
    if (!params.has("interest.tok") || !params.has("interest.head.W0"))
      throw ConfigError("interest encoder: store holds no encoder parameters");
    if (params.value("interest.tok").rows != static_cast<std::size_t>(cb_.vocab()) ||
        params.value("interest.tok").cols != cfg_.dim)
      throw ConfigError("interest encoder: checkpoint shape disagrees with configuration");
  }

  const SemanticCodebook& codebook() const { return cb_; }
  std::size_t dim() const { return cfg_.dim; }

  // Per-token hidden states (T x D), causal.
  Var encode_tokens(const std::vector<std::size_t>& tokens) const {
    if (tokens.empty()) throw DomainError("encode_tokens: empty token stream");
    Var h = gather_rows(params_->var("interest.tok"), tokens);
    const Tensor mask = causal_score_bias(tokens.size());
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      const std::string p = "interest.l" + std::to_string(l);
      h = add(h, cross_attention(h, h, *params_, p + ".sa", &mask));
      h = add(h, mlp_forward(MlpSpec({cfg_.dim, cfg_.ffn_hidden, cfg_.dim}), *params_, p + ".ffn", h));
    }
    return h;
  }

  Var next_token_logits(const std::vector<std::size_t>& tokens) const {
    return mlp_forward(MlpSpec({cfg_.dim, static_cast<std::size_t>(cb_.vocab())}), *params_,
                       "interest.head", encode_tokens(tokens));
  }

  // Mean next-token cross-entropy over one sequence (positions 0..T-2 predict
  // their successor).
  Var ntp_loss(const std::vector<std::size_t>& tokens) const {
    if (tokens.size() < 2) throw DomainError("ntp_loss: sequence has no transitions");
    Var logits = next_token_logits(tokens);
    Var context = slice_rows(logits, 0, tokens.size() - 1);
    std::vector<std::size_t> targets(tokens.begin() + 1, tokens.end());
    return softmax_cross_entropy(context, targets);
  }

  // Average-pooled token states; empty histories fall back to the dedicated
  // cold-start embedding.
  Tensor interest_vector(const BehaviorSequence& seq) const {
    seq.validate();
    if (seq.events.empty()) return params_->value("interest.cold");
    return mean_rows(encode_tokens(cb_.tokens(seq))).value();
  }

  // Frozen token-table embedding of one event (mean of its three level
  // tokens); used to represent recent behaviors downstream.
  Tensor event_embedding(const BehaviorEvent& e) const {
    const Tensor& table = params_->value("interest.tok");
    Tensor out(1, cfg_.dim);
    for (int l = 0; l < 3; ++l) {
      const double* row = table.row_ptr(static_cast<std::size_t>(cb_.token(l, e.code[l])));
      for (std::size_t j = 0; j < cfg_.dim; ++j) out.data[j] += row[j] / 3.0;
    }
    return out;
  }

  Tensor recent_matrix(const BehaviorSequence& seq, std::size_t recent_len) const {
    if (seq.events.empty()) return params_->value("interest.cold");
    const std::size_t take = std::min(recent_len, seq.events.size());
    Tensor out(take, cfg_.dim);
    for (std::size_t i = 0; i < take; ++i) {
      const Tensor e = event_embedding(seq.events[seq.events.size() - take + i]);
      std::copy(e.data.begin(), e.data.end(), out.row_ptr(i));
    }
    return out;
  }

  // Next-token pretraining with a held-out split; returns the held-out
  // cross-entropy next to the add-one-smoothed unigram baseline.
  PretrainStats pretrain(const std::vector<BehaviorSequence>& corpus, std::size_t epochs, double lr,
                         Rng& rng, double holdout_frac = 0.1) {
    if (corpus.empty()) throw ConfigError("pretrain: empty corpus");
    std::vector<std::vector<std::size_t>> streams;
    for (const BehaviorSequence& seq : corpus) {
      seq.validate();
      if (seq.events.size() >= 1) streams.push_back(cb_.tokens(seq));
    }
    if (streams.empty()) throw ConfigError("pretrain: corpus has no usable sequences");

    std::size_t heldout = std::max<std::size_t>(1, static_cast<std::size_t>(holdout_frac * streams.size()));
    if (heldout >= streams.size()) heldout = streams.size() > 1 ? streams.size() - 1 : 0;
    std::shuffle(streams.begin(), streams.end(), rng);
    const std::size_t train_n = streams.size() - heldout;

    PretrainStats stats;
    std::vector<std::size_t> indices(train_n);
    std::iota(indices.begin(), indices.end(), 0);
    double last_epoch_ce = 0.0;
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
      std::shuffle(indices.begin(), indices.end(), rng);
      double epoch_ce = 0.0;
      std::size_t counted = 0;
      for (std::size_t idx : indices) {
        if (streams[idx].size() < 2) continue;
        params_->zero_grads();
        Var loss = ntp_loss(streams[idx]);
        backward(loss);
        params_->adam_step(lr);
        epoch_ce += loss.scalar();
        ++counted;
        ++stats.steps;
      }
      if (counted > 0) last_epoch_ce = epoch_ce / static_cast<double>(counted);
    }
    stats.train_ce = last_epoch_ce;

    // Held-out cross-entropy, token-weighted.
    double ce_sum = 0.0;
    std::size_t transitions = 0;
    for (std::size_t i = train_n; i < streams.size(); ++i) {
      if (streams[i].size() < 2) continue;
      const std::size_t n = streams[i].size() - 1;
      ce_sum += ntp_loss(streams[i]).scalar() * static_cast<double>(n);
      transitions += n;
    }
    stats.heldout_ce = transitions > 0 ? ce_sum / static_cast<double>(transitions) : 0.0;

    // Unigram baseline with add-one smoothing, fit on the training split.
    const auto vocab = static_cast<std::size_t>(cb_.vocab());
    std::vector<double> counts(vocab, 1.0);
    double total = static_cast<double>(vocab);
    for (std::size_t i = 0; i < train_n; ++i)
      for (std::size_t tok : streams[i]) {
        counts[tok] += 1.0;
        total += 1.0;
      }
    double base = 0.0;
    std::size_t base_n = 0;
    for (std::size_t i = train_n; i < streams.size(); ++i)
      for (std::size_t t = 1; t < streams[i].size(); ++t) {
        base -= std::log(counts[streams[i][t]] / total);
        ++base_n;
      }
    stats.unigram_ce = base_n > 0 ? base / static_cast<double>(base_n) : 0.0;
    return stats;
  }

 private:
  SemanticCodebook cb_;
  InterestConfig cfg_;
  ParamStore* params_;
};

}  // namespace nsgr
