#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <vector>

#include "nsgr/generator.hpp"
#include "nsgr/params.hpp"

namespace {

using nsgr::CoarseToFineGenerator;
using nsgr::GenerationTrace;
using nsgr::GeneratorConfig;
using nsgr::PairRelation;
using nsgr::ParamStore;
using nsgr::RankedList;
using nsgr::Rng;
using nsgr::Tensor;
using nsgr::Var;

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

Mat to_mat(const Tensor& t) {
  Mat m(t.rows, Vec(t.cols));
  for (std::size_t i = 0; i < t.rows; ++i)
    for (std::size_t j = 0; j < t.cols; ++j) m[i][j] = t.at(i, j);
  return m;
}

Mat ref_matmul(const Mat& a, const Mat& b) {
  Mat out(a.size(), Vec(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j)
      for (std::size_t k = 0; k < b.size(); ++k) out[i][j] += a[i][k] * b[k][j];
  return out;
}

Mat ref_mlp_relu(const Mat& input, const std::vector<Mat>& ws, const std::vector<Vec>& bs,
                 bool softmax_out) {
  Mat h = input;
  for (std::size_t l = 0; l < ws.size(); ++l) {
    h = ref_matmul(h, ws[l]);
    for (auto& row : h)
      for (std::size_t j = 0; j < row.size(); ++j) row[j] += bs[l][j];
    if (l + 1 < ws.size())
      for (auto& row : h)
        for (double& v : row) v = std::max(0.0, v);
  }
  if (softmax_out)
    for (auto& row : h) {
      double mx = row[0];
      for (double v : row) mx = std::max(mx, v);
      double sum = 0.0;
      for (double& v : row) {
        v = std::exp(v - mx);
        sum += v;
      }
      for (double& v : row) v /= sum;
    }
  return h;
}

struct Fixture {
  ParamStore params;
  GeneratorConfig cfg;
  CoarseToFineGenerator* gen = nullptr;
  Tensor user;
  Tensor xs_value;

  explicit Fixture(std::size_t m, std::uint64_t seed, double init_std = 0.01) {
    cfg.dim = 8;
    Rng rng(seed);
    ParamStore tmp;
    gen = new CoarseToFineGenerator(cfg, params, rng);
    if (init_std != 0.01)
      for (const auto& name : params.names()) {
        Tensor& t = params.value(name);
        for (double& v : t.data) v *= init_std / 0.01;
      }
    user = Tensor::uniform(1, 8, rng, -0.5, 0.5);
    xs_value = Tensor::uniform(m, 8, rng, -1.0, 1.0);
  }
  ~Fixture() { delete gen; }

  Var xs() const { return nsgr::constant(xs_value); }
};

TEST(ItemPriority, IdenticalItemsGetIdenticalPriorities) {
  Fixture fx(4, 1);
  Tensor same(4, 8);
  for (int r = 0; r < 4; ++r)
    std::copy(fx.xs_value.row_ptr(0), fx.xs_value.row_ptr(0) + 8, same.row_ptr(r));
  Tensor p = fx.gen->item_priorities(nsgr::constant(same)).value();
  for (int r = 1; r < 4; ++r) EXPECT_DOUBLE_EQ(p.data[0], p.data[r]);
}

TEST(ItemPriority, ZeroWeightsCollapseToBias) {
  Fixture fx(4, 2);
  std::fill(fx.params.value("gen.pri.W0").data.begin(), fx.params.value("gen.pri.W0").data.end(), 0.0);
  std::fill(fx.params.value("gen.pri.b0").data.begin(), fx.params.value("gen.pri.b0").data.end(), 0.0);
  std::fill(fx.params.value("gen.pri.W1").data.begin(), fx.params.value("gen.pri.W1").data.end(), 0.0);
  fx.params.value("gen.pri.b1").data[0] = 0.37;
  Tensor p = fx.gen->item_priorities(fx.xs()).value();
  for (double v : p.data) EXPECT_DOUBLE_EQ(v, 0.37);
}

TEST(ItemPriority, MatchesNaiveForward) {
  Fixture fx(4, 3, 0.5);
  Tensor p = fx.gen->item_priorities(fx.xs()).value();
  Mat expected = ref_mlp_relu(to_mat(fx.xs_value),
                              {to_mat(fx.params.value("gen.pri.W0")), to_mat(fx.params.value("gen.pri.W1"))},
                              {fx.params.value("gen.pri.b0").data, fx.params.value("gen.pri.b1").data},
                              false);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(p.data[i], expected[i][0], 1e-12);
}

TEST(PairRelations, SymmetricInputGivesSymmetricRelation) {
  Fixture fx(4, 4);
  Var xi = nsgr::constant(Tensor::uniform(1, 8, *std::make_unique<Rng>(5)));
  Tensor rel_ii = fx.gen->pair_relation(xi, xi).value();
  // i = j: the difference feature is zero; r_ij == r_ji trivially.
  Tensor rel_ii2 = fx.gen->pair_relation(xi, xi).value();
  EXPECT_EQ(rel_ii.data, rel_ii2.data);
  double sum = 0.0;
  for (double v : rel_ii.data) sum += v;
  EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(PairRelations, ComponentsFormADistribution) {
  Fixture fx(4, 6, 0.5);
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Var xi = nsgr::constant(Tensor::uniform(1, 8, rng));
    Var xj = nsgr::constant(Tensor::uniform(1, 8, rng));
    PairRelation rel = fx.gen->pair_relation_values(xi, xj);
    EXPECT_NO_THROW(rel.validate());
    EXPECT_NEAR(rel.suppress + rel.enhance + rel.neutral, 1.0, 1e-9);
  }
}

TEST(PairRelations, MatchesNaiveForward) {
  Fixture fx(4, 8, 0.5);
  Rng rng(9);
  Tensor a = Tensor::uniform(1, 8, rng);
  Tensor b = Tensor::uniform(1, 8, rng);
  Tensor rel = fx.gen->pair_relation(nsgr::constant(a), nsgr::constant(b)).value();

  Vec feat = a.data;
  feat.insert(feat.end(), b.data.begin(), b.data.end());
  for (std::size_t j = 0; j < 8; ++j) feat.push_back(a.data[j] - b.data[j]);
  for (std::size_t j = 0; j < 8; ++j) feat.push_back(a.data[j] * b.data[j]);
  Mat expected = ref_mlp_relu({feat},
                              {to_mat(fx.params.value("gen.rel.W0")), to_mat(fx.params.value("gen.rel.W1"))},
                              {fx.params.value("gen.rel.b0").data, fx.params.value("gen.rel.b1").data},
                              true);
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(rel.data[c], expected[0][c], 1e-12);
}

TEST(InfluenceWeight, MatchesClosedFormCases) {
  // pure neutral contributes nothing
  EXPECT_DOUBLE_EQ(nsgr::influence_weight({0.0, 0.0, 1.0}, 0.9, 0.1), 0.0);
  // suppression is gated: a lower-priority item cannot suppress a higher one
  EXPECT_DOUBLE_EQ(nsgr::influence_weight({1.0, 0.0, 0.0}, 0.2, 0.7), 0.0);
  // frozen plug-in values
  EXPECT_DOUBLE_EQ(nsgr::influence_weight({1.0, 0.0, 0.0}, 0.7, 0.2), -0.5);
  EXPECT_NEAR(nsgr::influence_weight({0.0, 1.0, 0.0}, 0.7, 0.2), 0.45, 1e-15);
  EXPECT_THROW(nsgr::influence_weight({0.5, 0.2, 0.1}, 0.0, 0.0), nsgr::DomainError);
}

TEST(RefineItems, ZeroSetHeadIsIdentity) {
  Fixture fx(4, 10);
  for (const std::string& name : {"gen.set.W0", "gen.set.b0", "gen.set.W1", "gen.set.b1"}) {
    auto& t = fx.params.value(name);
    std::fill(t.data.begin(), t.data.end(), 0.0);
  }
  Var pri = fx.gen->item_priorities(fx.xs());
  Var refined = fx.gen->refine_items({0, 1, 2, 3}, fx.xs(), pri, nsgr::constant(Tensor(1, 8)));
  for (std::size_t i = 0; i < fx.xs_value.data.size(); ++i)
    EXPECT_DOUBLE_EQ(refined.value().data[i], fx.xs_value.data[i]);
}

TEST(RefineItems, InvariantToOrderingOfTheOtherItems) {
  Fixture fx(4, 11, 0.5);
  Var pri = fx.gen->item_priorities(fx.xs());
  Var node_vec = nsgr::constant(Tensor::uniform(1, 8, *std::make_unique<Rng>(12)));
  Var a = fx.gen->refine_items({0, 1, 2, 3}, fx.xs(), pri, node_vec);
  Var b = fx.gen->refine_items({0, 3, 2, 1}, fx.xs(), pri, node_vec);
  // item 0 leads both arrangements; its refined vector must agree
  for (std::size_t j = 0; j < 8; ++j)
    EXPECT_NEAR(a.value().at(0, j), b.value().at(0, j), 1e-12);
  // item 2 sits at row 2 in both
  for (std::size_t j = 0; j < 8; ++j)
    EXPECT_NEAR(a.value().at(2, j), b.value().at(2, j), 1e-12);
}

TEST(RefineItems, SingletonIsIdentity) {
  Fixture fx(4, 13, 0.5);
  Var pri = fx.gen->item_priorities(fx.xs());
  Var refined = fx.gen->refine_items({2}, fx.xs(), pri, nsgr::constant(Tensor(1, 8)));
  for (std::size_t j = 0; j < 8; ++j)
    EXPECT_DOUBLE_EQ(refined.value().at(0, j), fx.xs_value.at(2, j));
}

TEST(RefineItems, MatchesNaiveForward) {
  Fixture fx(4, 14, 0.5);
  Rng rng(15);
  Tensor node_vec = Tensor::uniform(1, 8, rng);
  Var pri_var = fx.gen->item_priorities(fx.xs());
  Var refined = fx.gen->refine_items({0, 1, 2, 3}, fx.xs(), pri_var, nsgr::constant(node_vec));

  const Mat xs = to_mat(fx.xs_value);
  Mat pri = ref_mlp_relu(xs,
                         {to_mat(fx.params.value("gen.pri.W0")), to_mat(fx.params.value("gen.pri.W1"))},
                         {fx.params.value("gen.pri.b0").data, fx.params.value("gen.pri.b1").data}, false);
  const std::vector<Mat> rel_w = {to_mat(fx.params.value("gen.rel.W0")),
                                  to_mat(fx.params.value("gen.rel.W1"))};
  const std::vector<Vec> rel_b = {fx.params.value("gen.rel.b0").data, fx.params.value("gen.rel.b1").data};
  const std::vector<Mat> set_w = {to_mat(fx.params.value("gen.set.W0")),
                                  to_mat(fx.params.value("gen.set.W1"))};
  const std::vector<Vec> set_b = {fx.params.value("gen.set.b0").data, fx.params.value("gen.set.b1").data};
  const Mat wdelta = to_mat(fx.params.value("gen.wdelta"));

  for (std::size_t j = 0; j < 4; ++j) {
    Vec influence(8, 0.0);
    for (std::size_t i = 0; i < 4; ++i) {
      if (i == j) continue;
      Vec feat = xs[i];
      feat.insert(feat.end(), xs[j].begin(), xs[j].end());
      for (std::size_t d = 0; d < 8; ++d) feat.push_back(xs[i][d] - xs[j][d]);
      for (std::size_t d = 0; d < 8; ++d) feat.push_back(xs[i][d] * xs[j][d]);
      Mat rel = ref_mlp_relu({feat}, rel_w, rel_b, true);
      const double w = -rel[0][0] * std::max(0.0, pri[i][0] - pri[j][0]) +
                       rel[0][1] * 0.5 * (pri[i][0] + pri[j][0]);
      for (std::size_t d = 0; d < 8; ++d) influence[d] += w * xs[i][d];
    }
    Vec row = xs[j];
    row.insert(row.end(), influence.begin(), influence.end());
    row.insert(row.end(), node_vec.data.begin(), node_vec.data.end());
    Mat delta = ref_matmul(ref_mlp_relu({row}, set_w, set_b, false), wdelta);
    for (std::size_t d = 0; d < 8; ++d)
      EXPECT_NEAR(refined.value().at(j, d), xs[j][d] + delta[0][d], 1e-12);
  }
}

TEST(ScoreAndSplit, WidthTwoFollowsTheScores) {
  Fixture fx(2, 16, 0.5);
  GenerationTrace trace = fx.gen->generate(fx.user, fx.xs());
  const auto& root = trace.nodes[0];
  ASSERT_EQ(root.scores.size(), 2u);
  ASSERT_EQ(root.take_first.size(), 2u);
  if (root.scores[0] > root.scores[1]) {
    EXPECT_TRUE(root.take_first[0]);
    EXPECT_EQ(trace.final_list, RankedList({0, 1}));
  } else if (root.scores[1] > root.scores[0]) {
    EXPECT_TRUE(root.take_first[1]);
    EXPECT_EQ(trace.final_list, RankedList({1, 0}));
  } else {
    EXPECT_TRUE(root.take_first[0]);  // tie: lower current index wins
  }
}

TEST(ScoreAndSplit, EqualScoresBreakTiesByIndex) {
  Fixture fx(4, 17);
  // Zero the scoring head entirely: every score is identical.
  for (const std::string& name :
       {"gen.score.W0", "gen.score.b0", "gen.score.W1", "gen.score.b1", "gen.score.W2", "gen.score.b2"}) {
    auto& t = fx.params.value(name);
    std::fill(t.data.begin(), t.data.end(), 0.0);
  }
  GenerationTrace trace = fx.gen->generate(fx.user, fx.xs());
  EXPECT_EQ(trace.final_list, RankedList({0, 1, 2, 3}));
  for (const auto& node : trace.nodes)
    if (node.width() >= 2) {
      for (std::size_t i = 0; i < node.width() / 2; ++i) EXPECT_TRUE(node.take_first[i]);
      for (std::size_t i = node.width() / 2; i < node.width(); ++i) EXPECT_FALSE(node.take_first[i]);
    }
}

TEST(ScoreAndSplit, KnownScorePatternSplitsAsSorted) {
  Fixture fx(4, 18);
  std::vector<bool> forced = {false, true, false, true};  // what Sim (0.1,0.8,0.3,0.7) forces
  std::vector<std::vector<bool>> flags(1);
  flags[0] = forced;
  GenerationTrace trace = fx.gen->generate(fx.user, fx.xs(), &flags);
  EXPECT_EQ(trace.nodes[0].take_first, forced);
  // items 1 and 3 occupy the first interval, order preserved
  EXPECT_EQ(trace.nodes[1].items, (std::vector<int>{1, 3}));
  EXPECT_EQ(trace.nodes[2].items, (std::vector<int>{0, 2}));
}

TEST(Generate, FlagSemanticsComposeAcrossLevels) {
  Fixture fx(4, 19);
  // level-1: keep {a=0, c=2} first; level-2 splits order (c before a), (d before b)
  std::vector<std::vector<bool>> flags(3);
  flags[0] = {true, false, true, false};   // root: items {0,2} -> first half
  flags[1] = {false, true};                // [0,2) holds items {0,2}: send 2 first
  flags[2] = {false, true};                // [2,4) holds items {1,3}: send 3 first
  GenerationTrace trace = fx.gen->generate(fx.user, fx.xs(), &flags);
  EXPECT_EQ(trace.final_list, RankedList({2, 0, 3, 1}));
}

TEST(Generate, TraceShapeAndNodeVectors) {
  Fixture fx(8, 20);
  GenerationTrace trace = fx.gen->generate(fx.user, fx.xs());
  EXPECT_EQ(trace.m, 8u);
  EXPECT_EQ(trace.depth, 3u);
  EXPECT_EQ(trace.nodes.size(), 15u);  // 2m - 1 tree nodes

  std::size_t non_root = 0;
  for (std::size_t k = 1; k <= trace.depth; ++k) {
    auto vecs = fx.gen->node_vectors(trace, k);
    EXPECT_EQ(vecs.size(), std::size_t{1} << k);
    non_root += vecs.size();
  }
  EXPECT_EQ(non_root, 2 * trace.m - 2);
  EXPECT_EQ(trace.level_vectors(0).size(), 1u);
  EXPECT_THROW(fx.gen->node_vectors(trace, 0), nsgr::DomainError);
  EXPECT_THROW(fx.gen->node_vectors(trace, 4), nsgr::DomainError);
}

TEST(Generate, LengthTwoIsASingleSplit) {
  Fixture fx(2, 21);
  GenerationTrace trace = fx.gen->generate(fx.user, fx.xs());
  EXPECT_EQ(trace.nodes.size(), 3u);
  EXPECT_TRUE(trace.final_list.is_permutation());
  auto vecs = fx.gen->node_vectors(trace, 1);
  EXPECT_EQ(vecs.size(), 2u);
}

TEST(Generate, FlagBalanceHoldsEverywhere) {
  Rng rng(22);
  for (std::size_t m : {2u, 4u, 8u}) {
    for (int trial = 0; trial < 40; ++trial) {
      Fixture fx(m, rng());
      GenerationTrace trace = fx.gen->generate(fx.user, fx.xs());
      EXPECT_TRUE(trace.final_list.is_permutation());
      for (const auto& node : trace.nodes) {
        if (node.width() < 2) continue;
        std::size_t first = 0;
        for (bool f : node.take_first) first += f ? 1 : 0;
        EXPECT_EQ(first, node.width() / 2);
      }
    }
  }
}

TEST(Generate, DeterministicGivenInputs) {
  Fixture fx(4, 23);
  GenerationTrace a = fx.gen->generate(fx.user, fx.xs());
  GenerationTrace b = fx.gen->generate(fx.user, fx.xs());
  EXPECT_EQ(a.final_list, b.final_list);
  EXPECT_EQ(a.priorities, b.priorities);
  for (std::size_t i = 0; i < a.nodes.size(); ++i)
    EXPECT_EQ(a.nodes[i].scores, b.nodes[i].scores);
}

TEST(Generate, MonotoneResponseAtWidthTwo) {
  // Under any positive monotone transform of the scores the argsort, and so
  // the emitted list, is unchanged; directly flipping the order flips flags.
  Fixture fx(2, 24, 0.5);
  GenerationTrace base = fx.gen->generate(fx.user, fx.xs());
  const auto& scores = base.nodes[0].scores;
  const bool zero_first = scores[0] > scores[1];
  std::vector<std::vector<bool>> forced_same(1);
  forced_same[0] = {zero_first, !zero_first};
  GenerationTrace same = fx.gen->generate(fx.user, fx.xs(), &forced_same);
  EXPECT_EQ(base.final_list, same.final_list);

  std::vector<std::vector<bool>> forced_flip(1);
  forced_flip[0] = {!zero_first, zero_first};
  GenerationTrace flipped = fx.gen->generate(fx.user, fx.xs(), &forced_flip);
  EXPECT_NE(base.final_list, flipped.final_list);
}

TEST(Generate, RejectsBadWidths) {
  Fixture fx(4, 25);
  Rng rng(26);
  EXPECT_THROW(fx.gen->generate(fx.user, nsgr::constant(Tensor::uniform(3, 8, rng))),
               nsgr::DomainError);
  EXPECT_THROW(fx.gen->generate(fx.user, nsgr::constant(Tensor::uniform(1, 8, rng))),
               nsgr::DomainError);
  EXPECT_THROW(fx.gen->generate(Tensor(1, 4), fx.xs()), nsgr::ConfigError);
}

}  // namespace
