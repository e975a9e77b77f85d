#pragma once

#include <cstdint>
#include <list>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "nsgr/autodiff.hpp"
#include "nsgr/errors.hpp"
#include "nsgr/listspace.hpp"
#include "nsgr/nn.hpp"
#include "nsgr/params.hpp"

namespace nsgr {

// Memo from a segment's item-id multiset to its context vector. Sound because
// segment vectors are invariant to order within the segment and to anything
// outside it. Entries are only reusable while the producing parameters and
// user context stay fixed, so callers scope one cache per valuation session
// (one request and its neighbor lists).
class ContextCache {
 public:
  using Key = std::vector<ItemId>;

  explicit ContextCache(std::size_t capacity = 1u << 16, bool verify_hits = false)
      : capacity_(capacity), verify_hits_(verify_hits) {}

  std::optional<Tensor> get(const Key& key) {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = map_.find(key);
    if (it == map_.end()) {
      ++misses_;
      return std::nullopt;
    }
    ++hits_;
    lru_.splice(lru_.end(), lru_, it->second.recency);
    return it->second.value;
  }

  void put(const Key& key, const Tensor& value) {
    std::lock_guard<std::mutex> lock(mu_);
    if (map_.count(key)) return;
    if (map_.size() >= capacity_ && !lru_.empty()) {
      map_.erase(lru_.front());
      lru_.pop_front();
    }
    auto rec = lru_.insert(lru_.end(), key);
    map_.emplace(key, Slot{value, rec});
  }

  bool verify_hits() const { return verify_hits_; }
  std::size_t hits() const { return hits_; }
  std::size_t misses() const { return misses_; }
  double hit_rate() const {
    const std::size_t n = hits_ + misses_;
    return n == 0 ? 0.0 : static_cast<double>(hits_) / static_cast<double>(n);
  }
  std::size_t size() const { return map_.size(); }

 private:
  struct Slot {
    Tensor value;
    std::list<Key>::iterator recency;
  };

  std::size_t capacity_;
  bool verify_hits_;
  mutable std::mutex mu_;
  std::map<Key, Slot> map_;
  std::list<Key> lru_;
  std::size_t hits_ = 0;
  std::size_t misses_ = 0;
};

// Per-request user-side inputs of the evaluator.
struct UserContext {
  Tensor interest;  // 1 x D pooled interest vector
  Tensor recent;    // s x D embedded recent behaviors (s >= 1)
  Tensor other;     // 1 x D auxiliary features
};

struct EvaluatorConfig {
  std::size_t dim = 8;
  std::size_t m = 4;
  std::size_t sem_hidden = 32;
  std::vector<std::size_t> predict_hidden = {1024, 256, 128};

  std::size_t levels() const { return log2_exact(m); }
};

// Multi-scale context for one ranked list: one vector per segment at every
// granularity, plus each position's coarse-to-fine concatenation.
struct ScaleContext {
  // segment_vecs[k][s]: level k (0 = whole list), segment s left to right.
  std::vector<std::vector<Var>> segment_vecs;
  std::size_t m = 0;
  std::size_t cache_hits = 0;

  std::size_t levels() const { return segment_vecs.size(); }

  const Var& segment_of(std::size_t level, std::size_t position) const {
    const std::size_t count = std::size_t{1} << level;
    return segment_vecs[level][position * count / m];
  }

  // K*D context features for one position, coarse to fine.
  Var position_context(std::size_t t) const {
    std::vector<Var> parts;
    parts.reserve(levels());
    for (std::size_t k = 0; k < levels(); ++k) parts.push_back(segment_of(k, t));
    return concat_cols(parts);
  }
};

struct EvaluatorOutput {
  Var probs;       // m x 1 per-position click probabilities
  Var list_value;  // 1 x 1, the exact running sum of probs

  std::vector<double> prob_values() const {
    return probs.value().data;
  }
  double value() const { return list_value.scalar(); }
};

// Scores an ordered list by pooling segment-local attention at every scale of
// the position tree and predicting a per-slot click probability.
class MultiScaleEvaluator {
 public:
  MultiScaleEvaluator(EvaluatorConfig cfg, ParamStore& params, Rng& rng) : cfg_(cfg), params_(&params) {
    if (!is_power_of_two(cfg_.m) || cfg_.m < 2)
      throw ConfigError("evaluator: list length must be a power of two >= 2");
    const std::size_t d = cfg_.dim;
    init_attention(params, "eval.sem_ta", {d, d, d}, rng);
    init_mlp(params, "eval.sem", MlpSpec({4 * d, cfg_.sem_hidden, d}), rng);
    init_attention(params, "eval.ctx_sa", {d, d, d}, rng);
    params.create_normal("eval.pos", cfg_.m, d, rng);
    std::vector<std::size_t> widths;
    widths.push_back(d + cfg_.levels() * d + d);
    for (std::size_t w : cfg_.predict_hidden) widths.push_back(w);
    widths.push_back(1);
    init_mlp(params, "eval.pred", MlpSpec(widths, Activation::Sigmoid), rng);
  }

  // Attach to an already-populated store (e.g. a loaded checkpoint).
  MultiScaleEvaluator(EvaluatorConfig cfg, ParamStore& params) : cfg_(cfg), params_(&params) {
    if (!params.has("eval.pos") || !params.has("eval.pred.W0"))
      throw ConfigError("evaluator: store holds no evaluator parameters");
    if (params.value("eval.pos").rows != cfg_.m || params.value("eval.pos").cols != cfg_.dim)
      throw ConfigError("evaluator: checkpoint shape disagrees with configuration");
  }

  const EvaluatorConfig& config() const { return cfg_; }
  ParamStore& params() const { return *params_; }

  // Itemwise semantic vectors (n x D); independent of candidate order and of
  // any list placement.
  Var semantic_embed(const UserContext& user, const CandidateSet& candidates) const {
    validate_user(user);
    if (candidates.items.empty()) throw DomainError("semantic_embed: empty candidate set");
    const std::size_t n = candidates.items.size();
    Tensor feats(n, cfg_.dim);
    for (std::size_t i = 0; i < n; ++i) {
      if (candidates.items[i].features.size() != cfg_.dim)
        throw ConfigError("semantic_embed: item feature dim " +
                          std::to_string(candidates.items[i].features.size()) + " != " +
                          std::to_string(cfg_.dim));
      std::copy(candidates.items[i].features.begin(), candidates.items[i].features.end(),
                feats.row_ptr(i));
    }
    Var x = constant(std::move(feats));
    Var behaved = cross_attention(x, constant(user.recent), *params_, "eval.sem_ta");
    Var interest = broadcast_rows(constant(user.interest), n);
    Var other = broadcast_rows(constant(user.other), n);
    return mlp_forward(MlpSpec({4 * cfg_.dim, cfg_.sem_hidden, cfg_.dim}), *params_, "eval.sem",
                       concat_cols({x, behaved, interest, other}));
  }

  // Segment vectors at every level plus cache bookkeeping. `xs` is in
  // candidate order; `list` supplies the placement.
  ScaleContext multi_scale_context(const RankedList& list, const Var& xs, const CandidateSet& candidates,
                                   ContextCache* cache = nullptr) const {
    list.check_permutation();
    if (list.size() != cfg_.m) throw DomainError("multi_scale_context: list length != configured m");
    std::vector<std::size_t> order(list.order.begin(), list.order.end());
    Var xs_perm = gather_rows(xs, order);

    ScaleContext ctx;
    ctx.m = cfg_.m;
    ctx.segment_vecs.resize(cfg_.levels());
    for (std::size_t k = 0; k < cfg_.levels(); ++k) {
      const std::size_t count = std::size_t{1} << k;
      const std::size_t width = cfg_.m / count;
      ctx.segment_vecs[k].reserve(count);
      for (std::size_t s = 0; s < count; ++s) {
        const std::size_t lo = s * width, hi = (s + 1) * width;
        ContextCache::Key key;
        if (cache != nullptr) {
          for (std::size_t t = lo; t < hi; ++t)
            key.push_back(candidates.items[static_cast<std::size_t>(list[t])].id);
          std::sort(key.begin(), key.end());
          if (auto hit = cache->get(key)) {
            if (cache->verify_hits()) {
              const Tensor fresh = segment_vector(xs_perm, lo, hi).value();
              for (std::size_t j = 0; j < fresh.data.size(); ++j)
                if (std::abs(fresh.data[j] - hit->data[j]) > 1e-12)
                  throw IntegrityError("context cache hit diverges from recomputation");
            }
            ctx.segment_vecs[k].push_back(constant(*hit));
            ++ctx.cache_hits;
            continue;
          }
        }
        Var seg = segment_vector(xs_perm, lo, hi);
        if (cache != nullptr) cache->put(key, seg.value());
        ctx.segment_vecs[k].push_back(std::move(seg));
      }
    }
    return ctx;
  }

  // Per-slot probabilities and their exact left-to-right sum.
  EvaluatorOutput predict_positions(const RankedList& list, const Var& xs, const ScaleContext& ctx) const {
    if (list.size() != cfg_.m || ctx.m != cfg_.m)
      throw DomainError("predict_positions: context built for a different list length");
    std::vector<std::size_t> order(list.order.begin(), list.order.end());
    Var xs_perm = gather_rows(xs, order);

    std::vector<Var> context_rows;
    context_rows.reserve(cfg_.m);
    for (std::size_t t = 0; t < cfg_.m; ++t) context_rows.push_back(ctx.position_context(t));
    Var inputs = concat_cols({xs_perm, concat_rows(context_rows), params_->var("eval.pos")});

    std::vector<std::size_t> widths;
    widths.push_back(cfg_.dim + cfg_.levels() * cfg_.dim + cfg_.dim);
    for (std::size_t w : cfg_.predict_hidden) widths.push_back(w);
    widths.push_back(1);
    EvaluatorOutput out;
    out.probs = clamp(mlp_forward(MlpSpec(widths, Activation::Sigmoid), *params_, "eval.pred", inputs),
                      1e-12, 1.0 - 1e-12);
    out.list_value = sum_all(out.probs);
    return out;
  }

  EvaluatorOutput evaluate(const UserContext& user, const CandidateSet& candidates, const RankedList& list,
                           ContextCache* cache = nullptr) const {
    Var xs = semantic_embed(user, candidates);
    return evaluate_with_xs(user, candidates, list, xs, cache);
  }

  EvaluatorOutput evaluate_with_xs(const UserContext&, const CandidateSet& candidates,
                                   const RankedList& list, const Var& xs,
                                   ContextCache* cache = nullptr) const {
    ScaleContext ctx = multi_scale_context(list, xs, candidates, cache);
    return predict_positions(list, xs, ctx);
  }

  double list_value(const UserContext& user, const CandidateSet& candidates, const RankedList& list,
                    ContextCache* cache = nullptr) const {
    return evaluate(user, candidates, list, cache).value();
  }

 private:
  void validate_user(const UserContext& user) const {
    if (user.interest.rows != 1 || user.interest.cols != cfg_.dim)
      throw ConfigError("user context: interest vector must be 1x" + std::to_string(cfg_.dim));
    if (user.other.rows != 1 || user.other.cols != cfg_.dim)
      throw ConfigError("user context: other-feature vector must be 1x" + std::to_string(cfg_.dim));
    if (user.recent.rows == 0 || user.recent.cols != cfg_.dim)
      throw ConfigError("user context: recent behaviors must be sx" + std::to_string(cfg_.dim) +
                        " with s >= 1");
  }

  Var segment_vector(const Var& xs_perm, std::size_t lo, std::size_t hi) const {
    return mean_rows(self_attention(slice_rows(xs_perm, lo, hi), *params_, "eval.ctx_sa"));
  }

  EvaluatorConfig cfg_;
  ParamStore* params_;
};

}  // namespace nsgr
