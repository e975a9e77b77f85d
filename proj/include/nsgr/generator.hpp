#pragma once

#include <algorithm>
#include <deque>
#include <numeric>
#include <string>
#include <vector>

#include "nsgr/autodiff.hpp"
#include "nsgr/errors.hpp"
#include "nsgr/listspace.hpp"
#include "nsgr/nn.hpp"
#include "nsgr/params.hpp"

namespace nsgr {

// Three-way classification of a directed item pair.
struct PairRelation {
  double suppress = 0.0;
  double enhance = 0.0;
  double neutral = 0.0;

  void validate() const {
    auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!in01(suppress) || !in01(enhance) || !in01(neutral) ||
        std::abs(suppress + enhance + neutral - 1.0) > 1e-9)
      throw DomainError("pair relation must be a distribution over three classes");
  }
};

// Directed influence of item i on item j: suppression flows only from the
// higher-priority item, enhancement is symmetric, neutral contributes nothing.
inline double influence_weight(const PairRelation& rel, double p_i, double p_j) {
  rel.validate();
  return -rel.suppress * std::max(0.0, p_i - p_j) + rel.enhance * 0.5 * (p_i + p_j);
}

struct GeneratorConfig {
  std::size_t dim = 8;
  std::size_t priority_hidden = 16;
  std::size_t relation_hidden = 32;
  std::size_t set_hidden = 32;
  std::size_t set_out = 16;
  std::size_t root_hidden = 32;
  std::size_t anchor_ffn_hidden = 32;
  std::vector<std::size_t> score_hidden = {64, 32};
};

struct GenNode {
  std::size_t level = 0;
  std::size_t lo = 0, hi = 0;
  std::vector<int> items;  // candidate indices, in arrival order
  Var vec;                 // node vector; root's comes from the root map, others from the parent split
  std::vector<double> scores;      // split scores, empty on leaves
  std::vector<bool> take_first;    // split flags, empty on leaves
  int parent = -1;

  std::size_t width() const { return hi - lo; }
};

struct GenerationTrace {
  std::size_t m = 0;
  std::size_t depth = 0;
  std::vector<GenNode> nodes;  // breadth-first, left-to-right within a level
  std::vector<double> priorities;
  RankedList final_list;

  // Node vectors at one tree level, in interval order. Level 0 is the root.
  std::vector<Var> level_vectors(std::size_t level) const {
    if (level > depth) throw DomainError("level_vectors: level out of range");
    std::vector<Var> out;
    for (const GenNode& n : nodes)
      if (n.level == level) out.push_back(n.vec);
    return out;
  }
};

// Emits a permutation by recursively splitting position intervals in half,
// sending half of each node's items into the earlier child.
class CoarseToFineGenerator {
 public:
  CoarseToFineGenerator(GeneratorConfig cfg, ParamStore& params, Rng& rng) : cfg_(cfg), params_(&params) {
    const std::size_t d = cfg_.dim;
    init_mlp(params, "gen.pri", MlpSpec({d, cfg_.priority_hidden, 1}), rng);
    init_mlp(params, "gen.rel", MlpSpec({4 * d, cfg_.relation_hidden, 3}, Activation::Softmax), rng);
    init_mlp(params, "gen.set", MlpSpec({3 * d, cfg_.set_hidden, cfg_.set_out}), rng);
    params.create_normal("gen.wdelta", cfg_.set_out, d, rng);
    init_mlp(params, "gen.root", MlpSpec({2 * d, cfg_.root_hidden, d}), rng);
    init_attention(params, "gen.anchor_sa", {d, d, d}, rng);
    init_mlp(params, "gen.anchor_ffn", MlpSpec({d, cfg_.anchor_ffn_hidden, d}), rng);
    init_attention(params, "gen.ta", {d, d, d}, rng);
    std::vector<std::size_t> sw;
    sw.push_back(3 * d);
    for (std::size_t w : cfg_.score_hidden) sw.push_back(w);
    sw.push_back(1);
    init_mlp(params, "gen.score", MlpSpec(sw), rng);
  }

  // Attach to an already-populated store (e.g. a loaded checkpoint).
  CoarseToFineGenerator(GeneratorConfig cfg, ParamStore& params) : cfg_(cfg), params_(&params) {
    if (!params.has("gen.wdelta") || !params.has("gen.score.W0"))
      throw ConfigError("generator: store holds no generator parameters");
    if (params.value("gen.wdelta").rows != cfg_.set_out || params.value("gen.wdelta").cols != cfg_.dim)
      throw ConfigError("generator: checkpoint shape disagrees with configuration");
  }

  const GeneratorConfig& config() const { return cfg_; }

  // One scalar per item from the shared priority head, applied to raw
  // semantic vectors; computed once per generation and reused at every level.
  Var item_priorities(const Var& xs) const {
    if (xs.rows() == 0) throw DomainError("item_priorities: no items");
    return mlp_forward(MlpSpec({cfg_.dim, cfg_.priority_hidden, 1}), *params_, "gen.pri", xs);
  }

  // Softmax relation for ordered pair features [xi ; xj ; xi - xj ; xi * xj].
  Var pair_relation(const Var& xi, const Var& xj) const {
    Var feat = concat_cols({xi, xj, sub(xi, xj), mul(xi, xj)});
    return mlp_forward(MlpSpec({4 * cfg_.dim, cfg_.relation_hidden, 3}, Activation::Softmax), *params_,
                       "gen.rel", feat);
  }

  PairRelation pair_relation_values(const Var& xi, const Var& xj) const {
    const Tensor t = pair_relation(xi, xj).value();
    return PairRelation{t.data[0], t.data[1], t.data[2]};
  }

  // Residual set-conditioned update of the node's item vectors. The influence
  // sum over the other items is order-free, so each refinement is invariant
  // to how the rest of the node is arranged.
  Var refine_items(const std::vector<int>& items, const Var& xs, const Var& priorities,
                   const Var& node_vec) const {
    const std::size_t n = items.size();
    std::vector<std::size_t> rows(items.begin(), items.end());
    Var xs_node = gather_rows(xs, rows);
    if (n == 1) return xs_node;  // identity refinement on singletons

    // Ordered pairs (i, j), i != j, batched through the relation head.
    std::vector<std::size_t> pair_i, pair_j;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) {
          pair_i.push_back(rows[i]);
          pair_j.push_back(rows[j]);
        }
    Var xi = gather_rows(xs, pair_i);
    Var xj = gather_rows(xs, pair_j);
    Var rel = mlp_forward(MlpSpec({4 * cfg_.dim, cfg_.relation_hidden, 3}, Activation::Softmax), *params_,
                          "gen.rel", concat_cols({xi, xj, sub(xi, xj), mul(xi, xj)}));
    Var pi = gather_rows(priorities, pair_i);
    Var pj = gather_rows(priorities, pair_j);
    Var weights = add(scale(mul(slice_cols(rel, 0, 1), relu(sub(pi, pj))), -1.0),
                      scale(mul(slice_cols(rel, 1, 2), add(pi, pj)), 0.5));

    // weights rows follow pair order: for target j, sum w_ij * x_i over i != j.
    std::vector<Var> set_rows;
    set_rows.reserve(n);
    std::size_t pair_idx = 0;
    std::vector<std::vector<std::size_t>> incoming(n);  // incoming[j] = pair rows with target j
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) incoming[j].push_back(pair_idx++);
    for (std::size_t j = 0; j < n; ++j) {
      Var w_in = gather_rows(weights, incoming[j]);
      std::vector<std::size_t> src;
      for (std::size_t i = 0; i < n; ++i)
        if (i != j) src.push_back(rows[i]);
      Var influence =
          scale(mean_rows(scale_rows(gather_rows(xs, src), w_in)), static_cast<double>(n - 1));
      set_rows.push_back(concat_cols({slice_rows(xs_node, j, j + 1), influence, node_vec}));
    }
    Var delta = matmul(mlp_forward(MlpSpec({3 * cfg_.dim, cfg_.set_hidden, cfg_.set_out}), *params_,
                                   "gen.set", concat_rows(set_rows)),
                       params_->var("gen.wdelta"));
    return add(xs_node, delta);
  }

  struct SplitResult {
    std::vector<double> scores;
    std::vector<bool> take_first;
    Var first_vec;
    Var second_vec;
  };

  // Ranks the node's refined items against the user-plus-ancestor context and
  // flags the top half for the earlier child; ties break toward the lower
  // current index. Child vectors are the means of each half's refined rows.
  SplitResult score_and_split(const Var& refined, const Var& user_vec, const std::vector<Var>& path,
                              const std::vector<bool>* forced = nullptr) const {
    const std::size_t n = refined.rows();
    if (n < 2 || n % 2 != 0)
      throw IntegrityError("score_and_split: node width must be even and >= 2");

    std::vector<Var> seq{user_vec};
    seq.insert(seq.end(), path.begin(), path.end());
    Var context = concat_rows(seq);
    Var anchor = mlp_forward(MlpSpec({cfg_.dim, cfg_.anchor_ffn_hidden, cfg_.dim}), *params_,
                             "gen.anchor_ffn",
                             mean_rows(self_attention(context, *params_, "gen.anchor_sa")));
    Var item_ctx = cross_attention(refined, context, *params_, "gen.ta");
    std::vector<std::size_t> sw;
    sw.push_back(3 * cfg_.dim);
    for (std::size_t w : cfg_.score_hidden) sw.push_back(w);
    sw.push_back(1);
    Var sim = mlp_forward(MlpSpec(sw), *params_, "gen.score",
                          concat_cols({refined, item_ctx, broadcast_rows(anchor, n)}));

    SplitResult res;
    res.scores = sim.value().data;
    if (forced != nullptr) {
      if (forced->size() != n) throw DomainError("score_and_split: forced flag size mismatch");
      res.take_first = *forced;
    } else {
      std::vector<std::size_t> idx(n);
      std::iota(idx.begin(), idx.end(), 0);
      std::stable_sort(idx.begin(), idx.end(),
                       [&](std::size_t a, std::size_t b) { return res.scores[a] > res.scores[b]; });
      res.take_first.assign(n, false);
      for (std::size_t r = 0; r < n / 2; ++r) res.take_first[idx[r]] = true;
    }

    std::vector<std::size_t> first_rows, second_rows;
    for (std::size_t i = 0; i < n; ++i) (res.take_first[i] ? first_rows : second_rows).push_back(i);
    if (first_rows.size() != n / 2)
      throw IntegrityError("score_and_split: flag balance violated");
    res.first_vec = mean_rows(gather_rows(refined, first_rows));
    res.second_vec = mean_rows(gather_rows(refined, second_rows));
    return res;
  }

  // Full coarse-to-fine generation. `xs` holds the candidates' semantic
  // vectors in candidate order; `forced_flags`, when given, overrides the
  // split decision per breadth-first node index (used to pin selections while
  // auditing gradients).
  GenerationTrace generate(const Tensor& user_vec, const Var& xs,
                           const std::vector<std::vector<bool>>* forced_flags = nullptr) const {
    const std::size_t m = xs.rows();
    if (!is_power_of_two(m) || m < 2)
      throw DomainError("generate: candidate count must be a power of two >= 2");
    if (user_vec.rows != 1 || user_vec.cols != cfg_.dim)
      throw ConfigError("generate: user vector must be 1x" + std::to_string(cfg_.dim));

    GenerationTrace trace;
    trace.m = m;
    trace.depth = log2_exact(m);
    trace.final_list.order.assign(m, -1);

    Var user = constant(user_vec);
    Var priorities = item_priorities(xs);
    trace.priorities = priorities.value().data;

    GenNode root;
    root.level = 0;
    root.lo = 0;
    root.hi = m;
    root.items.resize(m);
    std::iota(root.items.begin(), root.items.end(), 0);
    root.vec = mlp_forward(MlpSpec({2 * cfg_.dim, cfg_.root_hidden, cfg_.dim}), *params_, "gen.root",
                           concat_cols({user, mean_rows(xs)}));
    trace.nodes.push_back(std::move(root));

    // Ancestor vector paths, root to node, per trace index.
    std::vector<std::vector<Var>> paths(1, std::vector<Var>{trace.nodes[0].vec});

    for (std::size_t cur = 0; cur < trace.nodes.size(); ++cur) {
      if (trace.nodes[cur].width() == 1) {
        trace.final_list.order[trace.nodes[cur].lo] = trace.nodes[cur].items[0];
        continue;
      }
      const std::vector<bool>* forced = nullptr;
      if (forced_flags != nullptr && cur < forced_flags->size() && !(*forced_flags)[cur].empty())
        forced = &(*forced_flags)[cur];

      Var refined =
          refine_items(trace.nodes[cur].items, xs, priorities, trace.nodes[cur].vec);
      SplitResult split = score_and_split(refined, user, paths[cur], forced);
      trace.nodes[cur].scores = split.scores;
      trace.nodes[cur].take_first = split.take_first;

      GenNode first, second;
      first.level = second.level = trace.nodes[cur].level + 1;
      first.lo = trace.nodes[cur].lo;
      first.hi = (trace.nodes[cur].lo + trace.nodes[cur].hi) / 2;
      second.lo = first.hi;
      second.hi = trace.nodes[cur].hi;
      for (std::size_t i = 0; i < trace.nodes[cur].items.size(); ++i)
        (split.take_first[i] ? first.items : second.items).push_back(trace.nodes[cur].items[i]);
      first.vec = split.first_vec;
      second.vec = split.second_vec;
      first.parent = second.parent = static_cast<int>(cur);

      std::vector<Var> child_path = paths[cur];
      child_path.push_back(first.vec);
      paths.push_back(child_path);
      child_path.back() = second.vec;
      paths.push_back(std::move(child_path));
      trace.nodes.push_back(std::move(first));
      trace.nodes.push_back(std::move(second));
    }

    trace.final_list.check_permutation();
    return trace;
  }

  // Split-produced node vectors at one granularity: the children created at
  // tree level k, left to right (2^k vectors; all non-root vectors over
  // levels 1..depth).
  std::vector<Var> node_vectors(const GenerationTrace& trace, std::size_t k) const {
    if (k < 1 || k > trace.depth) throw DomainError("node_vectors: level out of range");
    return trace.level_vectors(k);
  }

 private:
  GeneratorConfig cfg_;
  ParamStore* params_;
};

}  // namespace nsgr
