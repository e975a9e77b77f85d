#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "nsgr/evaluator.hpp"
#include "nsgr/params.hpp"

namespace {

using nsgr::CandidateSet;
using nsgr::ContextCache;
using nsgr::EvaluatorConfig;
using nsgr::Item;
using nsgr::MultiScaleEvaluator;
using nsgr::ParamStore;
using nsgr::RankedList;
using nsgr::Rng;
using nsgr::Tensor;
using nsgr::UserContext;

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

Mat ref_attention(const Mat& q_in, const Mat& k_in, const Mat& wq, const Mat& wk, const Mat& wv) {
  Mat q = ref_matmul(q_in, wq), k = ref_matmul(k_in, wk), v = ref_matmul(k_in, wv);
  const double inv = 1.0 / std::sqrt(static_cast<double>(q[0].size()));
  Mat out(q.size(), Vec(v[0].size(), 0.0));
  for (std::size_t i = 0; i < q.size(); ++i) {
    Vec s(k.size(), 0.0);
    for (std::size_t j = 0; j < k.size(); ++j)
      for (std::size_t d = 0; d < q[0].size(); ++d) s[j] += q[i][d] * k[j][d] * inv;
    double mx = s[0];
    for (double x : s) mx = std::max(mx, x);
    double sum = 0.0;
    for (double& x : s) {
      x = std::exp(x - mx);
      sum += x;
    }
    for (double& x : s) x /= sum;
    for (std::size_t j = 0; j < k.size(); ++j)
      for (std::size_t d = 0; d < v[0].size(); ++d) out[i][d] += s[j] * v[j][d];
  }
  return out;
}

Mat ref_mlp_relu(const Mat& input, const std::vector<Mat>& ws, const std::vector<Vec>& bs,
                 bool sigmoid_out) {
  Mat h = input;
  for (std::size_t l = 0; l < ws.size(); ++l) {
    h = ref_matmul(h, ws[l]);
    for (auto& row : h)
      for (std::size_t j = 0; j < row.size(); ++j) row[j] += bs[l][j];
    if (l + 1 < ws.size())
      for (auto& row : h)
        for (double& v : row) v = std::max(0.0, v);
  }
  if (sigmoid_out)
    for (auto& row : h)
      for (double& v : row) v = 1.0 / (1.0 + std::exp(-v));
  return h;
}

struct Fixture {
  ParamStore params;
  EvaluatorConfig cfg;
  MultiScaleEvaluator* evaluator = nullptr;
  UserContext user;
  CandidateSet candidates;

  Fixture(std::size_t m, std::uint64_t seed, std::size_t n_items = 0) {
    cfg.m = m;
    cfg.dim = 8;
    cfg.sem_hidden = 16;
    cfg.predict_hidden = {32, 16};
    Rng rng(seed);
    evaluator = new MultiScaleEvaluator(cfg, params, rng);
    user.interest = Tensor::uniform(1, 8, rng, -0.5, 0.5);
    user.recent = Tensor::uniform(3, 8, rng, -0.5, 0.5);
    user.other = Tensor::uniform(1, 8, rng, -0.5, 0.5);
    const std::size_t n = n_items == 0 ? m : n_items;
    for (std::size_t i = 0; i < n; ++i) {
      Item it;
      it.id = static_cast<nsgr::ItemId>(100 + i);
      Tensor f = Tensor::uniform(1, 8, rng, -1.0, 1.0);
      it.features = f.data;
      candidates.items.push_back(it);
    }
  }
  ~Fixture() { delete evaluator; }
};

TEST(SemanticEmbed, ItemwiseMapCommutesWithPermutation) {
  Fixture fx(4, 11);
  Tensor xs = fx.evaluator->semantic_embed(fx.user, fx.candidates).value();

  CandidateSet shuffled = fx.candidates;
  std::swap(shuffled.items[0], shuffled.items[3]);
  std::swap(shuffled.items[1], shuffled.items[2]);
  Tensor xs2 = fx.evaluator->semantic_embed(fx.user, shuffled).value();
  const std::size_t perm[] = {3, 2, 1, 0};
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 8; ++j)
      EXPECT_NEAR(xs.at(i, j), xs2.at(perm[i], j), 1e-13);
}

TEST(SemanticEmbed, ZeroWeightsCollapseToBias) {
  Fixture fx(4, 12);
  for (const std::string& name : {"eval.sem.W0", "eval.sem.b0", "eval.sem.W1"})
    std::fill(fx.params.value(name).data.begin(), fx.params.value(name).data.end(), 0.0);
  Rng bias_rng(5);
  fx.params.value("eval.sem.b1") = Tensor::uniform(1, 8, bias_rng, -1.0, 1.0);
  Tensor xs = fx.evaluator->semantic_embed(fx.user, fx.candidates).value();
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 8; ++j)
      EXPECT_DOUBLE_EQ(xs.at(i, j), fx.params.value("eval.sem.b1").data[j]);
}

TEST(SemanticEmbed, MatchesIndependentReference) {
  Fixture fx(4, 13);
  Tensor xs = fx.evaluator->semantic_embed(fx.user, fx.candidates).value();

  const Mat wq = to_mat(fx.params.value("eval.sem_ta.Wq"));
  const Mat wk = to_mat(fx.params.value("eval.sem_ta.Wk"));
  const Mat wv = to_mat(fx.params.value("eval.sem_ta.Wv"));
  const std::vector<Mat> ws = {to_mat(fx.params.value("eval.sem.W0")),
                               to_mat(fx.params.value("eval.sem.W1"))};
  const std::vector<Vec> bs = {fx.params.value("eval.sem.b0").data, fx.params.value("eval.sem.b1").data};
  for (std::size_t i = 0; i < 4; ++i) {
    Mat xi = {fx.candidates.items[i].features};
    Mat ta = ref_attention(xi, to_mat(fx.user.recent), wq, wk, wv);
    Vec row = xi[0];
    row.insert(row.end(), ta[0].begin(), ta[0].end());
    row.insert(row.end(), fx.user.interest.data.begin(), fx.user.interest.data.end());
    row.insert(row.end(), fx.user.other.data.begin(), fx.user.other.data.end());
    Mat expected = ref_mlp_relu({row}, ws, bs, false);
    for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(xs.at(i, j), expected[0][j], 1e-12);
  }
}

TEST(SemanticEmbed, MissingUserFeaturesIsConfigError) {
  Fixture fx(4, 14);
  UserContext bad = fx.user;
  bad.interest = Tensor(1, 4);
  EXPECT_THROW(fx.evaluator->semantic_embed(bad, fx.candidates), nsgr::ConfigError);
  bad = fx.user;
  bad.recent = Tensor(0, 8);
  EXPECT_THROW(fx.evaluator->semantic_embed(bad, fx.candidates), nsgr::ConfigError);
}

TEST(MultiScaleContext, LengthTwoSharesTheWholeListVector) {
  Fixture fx(2, 15);
  auto xs = fx.evaluator->semantic_embed(fx.user, fx.candidates);
  auto ctx = fx.evaluator->multi_scale_context(RankedList({0, 1}), xs, fx.candidates);
  EXPECT_EQ(ctx.levels(), 1u);
  const Tensor a = ctx.position_context(0).value();
  const Tensor b = ctx.position_context(1).value();
  EXPECT_EQ(a.cols, 8u);  // K*D with K=1
  EXPECT_EQ(a.data, b.data);
}

TEST(MultiScaleContext, InSegmentSwapLeavesCoarserVectorsUntouched) {
  Fixture fx(4, 16);
  auto xs = fx.evaluator->semantic_embed(fx.user, fx.candidates);
  auto base = fx.evaluator->multi_scale_context(RankedList({0, 1, 2, 3}), xs, fx.candidates);
  auto swapped = fx.evaluator->multi_scale_context(RankedList({0, 1, 3, 2}), xs, fx.candidates);
  // level 1 segment [2,4) holds the same item multiset, level 0 the whole list
  for (std::size_t j = 0; j < 8; ++j) {
    EXPECT_NEAR(base.segment_vecs[1][1].value().data[j], swapped.segment_vecs[1][1].value().data[j],
                1e-12);
    EXPECT_NEAR(base.segment_vecs[0][0].value().data[j], swapped.segment_vecs[0][0].value().data[j],
                1e-12);
  }
}

TEST(MultiScaleContext, PositionContextHasLogMTimesDColumns) {
  for (std::size_t m : {2u, 4u, 8u}) {
    Fixture fx(m, 17 + m);
    auto xs = fx.evaluator->semantic_embed(fx.user, fx.candidates);
    auto ctx = fx.evaluator->multi_scale_context(RankedList::identity(m), xs, fx.candidates);
    EXPECT_EQ(ctx.position_context(0).cols(), nsgr::log2_exact(m) * 8);
  }
}

TEST(MultiScaleContext, CacheOnOffIdenticalAndSecondCallHits) {
  Fixture fx(4, 18);
  auto xs = fx.evaluator->semantic_embed(fx.user, fx.candidates);
  RankedList list({2, 0, 3, 1});
  auto plain = fx.evaluator->multi_scale_context(list, xs, fx.candidates);

  ContextCache cache(1024);
  auto first = fx.evaluator->multi_scale_context(list, xs, fx.candidates, &cache);
  EXPECT_EQ(first.cache_hits, 0u);
  auto second = fx.evaluator->multi_scale_context(list, xs, fx.candidates, &cache);
  EXPECT_GE(second.cache_hits, 2u);  // at least K hits

  for (std::size_t k = 0; k < plain.levels(); ++k)
    for (std::size_t s = 0; s < plain.segment_vecs[k].size(); ++s) {
      EXPECT_EQ(plain.segment_vecs[k][s].value().data, first.segment_vecs[k][s].value().data);
      EXPECT_EQ(first.segment_vecs[k][s].value().data, second.segment_vecs[k][s].value().data);
    }
}

TEST(ContextCache, HitsAreBitIdenticalAndVerifyCatchesCorruption) {
  Fixture fx(4, 19);
  auto xs = fx.evaluator->semantic_embed(fx.user, fx.candidates);
  RankedList list({0, 1, 2, 3});

  ContextCache verify_cache(1024, true);
  fx.evaluator->multi_scale_context(list, xs, fx.candidates, &verify_cache);
  EXPECT_NO_THROW(fx.evaluator->multi_scale_context(list, xs, fx.candidates, &verify_cache));

  // Poison one entry beyond the tolerance; the verifying get must notice.
  ContextCache poisoned(1024, true);
  ContextCache::Key key;
  for (const Item& it : fx.candidates.items) key.push_back(it.id);
  std::sort(key.begin(), key.end());
  Tensor bogus(1, 8, 123.456);
  poisoned.put(key, bogus);
  EXPECT_THROW(fx.evaluator->multi_scale_context(list, xs, fx.candidates, &poisoned),
               nsgr::IntegrityError);
}

TEST(ContextCache, LruEvictsOldestAtCapacity) {
  ContextCache cache(2);
  cache.put({1}, Tensor(1, 1, 1.0));
  cache.put({2}, Tensor(1, 1, 2.0));
  EXPECT_TRUE(cache.get({1}).has_value());  // refresh {1}
  cache.put({3}, Tensor(1, 1, 3.0));        // evicts {2}
  EXPECT_TRUE(cache.get({1}).has_value());
  EXPECT_FALSE(cache.get({2}).has_value());
  EXPECT_TRUE(cache.get({3}).has_value());
  EXPECT_EQ(cache.size(), 2u);
}

TEST(PredictPositions, ZeroWeightsGiveHalfEverywhere) {
  Fixture fx(4, 20);
  for (const std::string& suffix : {"W0", "b0", "W1", "b1", "W2", "b2"})
    if (fx.params.has("eval.pred." + suffix)) {
      auto& t = fx.params.value("eval.pred." + suffix);
      std::fill(t.data.begin(), t.data.end(), 0.0);
    }
  auto out = fx.evaluator->evaluate(fx.user, fx.candidates, RankedList({0, 1, 2, 3}));
  for (double p : out.prob_values()) EXPECT_DOUBLE_EQ(p, 0.5);
  EXPECT_DOUBLE_EQ(out.value(), 2.0);  // m/2
}

TEST(PredictPositions, ListValueIsTheExactRunningSum) {
  Fixture fx(8, 21);
  auto out = fx.evaluator->evaluate(fx.user, fx.candidates, RankedList::identity(8));
  const auto probs = out.prob_values();
  double acc = 0.0;
  for (double p : probs) acc += p;
  EXPECT_EQ(acc, out.value());  // bitwise: same left-to-right summation
  for (double p : probs) {
    EXPECT_GT(p, 0.0);
    EXPECT_LT(p, 1.0);
  }
}

TEST(PredictPositions, MatchesIndependentReferenceEndToEnd) {
  Fixture fx(4, 22);
  RankedList list({1, 3, 0, 2});
  auto out = fx.evaluator->evaluate(fx.user, fx.candidates, list);

  // Independent full recomputation: semantic vectors, per-level pooled
  // attention, position-aware head.
  const Mat sq = to_mat(fx.params.value("eval.sem_ta.Wq"));
  const Mat sk = to_mat(fx.params.value("eval.sem_ta.Wk"));
  const Mat sv = to_mat(fx.params.value("eval.sem_ta.Wv"));
  const std::vector<Mat> sem_w = {to_mat(fx.params.value("eval.sem.W0")),
                                  to_mat(fx.params.value("eval.sem.W1"))};
  const std::vector<Vec> sem_b = {fx.params.value("eval.sem.b0").data,
                                  fx.params.value("eval.sem.b1").data};
  Mat xs;
  for (std::size_t i = 0; i < 4; ++i) {
    Mat xi = {fx.candidates.items[i].features};
    Mat ta = ref_attention(xi, to_mat(fx.user.recent), sq, sk, sv);
    Vec row = xi[0];
    row.insert(row.end(), ta[0].begin(), ta[0].end());
    row.insert(row.end(), fx.user.interest.data.begin(), fx.user.interest.data.end());
    row.insert(row.end(), fx.user.other.data.begin(), fx.user.other.data.end());
    xs.push_back(ref_mlp_relu({row}, sem_w, sem_b, false)[0]);
  }

  Mat xs_perm;
  for (int idx : list.order) xs_perm.push_back(xs[static_cast<std::size_t>(idx)]);
  const Mat cq = to_mat(fx.params.value("eval.ctx_sa.Wq"));
  const Mat ck = to_mat(fx.params.value("eval.ctx_sa.Wk"));
  const Mat cv = to_mat(fx.params.value("eval.ctx_sa.Wv"));
  auto segment_vec = [&](std::size_t lo, std::size_t hi) {
    Mat seg(xs_perm.begin() + static_cast<long>(lo), xs_perm.begin() + static_cast<long>(hi));
    Mat att = ref_attention(seg, seg, cq, ck, cv);
    Vec mean(att[0].size(), 0.0);
    for (const Vec& r : att)
      for (std::size_t j = 0; j < r.size(); ++j) mean[j] += r[j] / static_cast<double>(att.size());
    return mean;
  };
  const Vec whole = segment_vec(0, 4);
  const Vec left = segment_vec(0, 2);
  const Vec right = segment_vec(2, 4);

  const std::vector<Mat> pw = {to_mat(fx.params.value("eval.pred.W0")),
                               to_mat(fx.params.value("eval.pred.W1")),
                               to_mat(fx.params.value("eval.pred.W2"))};
  const std::vector<Vec> pb = {fx.params.value("eval.pred.b0").data,
                               fx.params.value("eval.pred.b1").data,
                               fx.params.value("eval.pred.b2").data};
  const Mat pos = to_mat(fx.params.value("eval.pos"));
  double value = 0.0;
  for (std::size_t t = 0; t < 4; ++t) {
    Vec row = xs_perm[t];
    row.insert(row.end(), whole.begin(), whole.end());
    const Vec& half = t < 2 ? left : right;
    row.insert(row.end(), half.begin(), half.end());
    row.insert(row.end(), pos[t].begin(), pos[t].end());
    const double expected = ref_mlp_relu({row}, pw, pb, true)[0][0];
    EXPECT_NEAR(out.prob_values()[t], expected, 1e-12);
    value += expected;
  }
  EXPECT_NEAR(out.value(), value, 1e-12);
}

TEST(EvaluateList, DeterministicAndOrderSensitive) {
  Fixture fx(4, 23);
  RankedList list({0, 1, 2, 3});
  auto a = fx.evaluator->evaluate(fx.user, fx.candidates, list);
  auto b = fx.evaluator->evaluate(fx.user, fx.candidates, list);
  EXPECT_EQ(a.prob_values(), b.prob_values());
  EXPECT_EQ(a.value(), b.value());

  auto reversed = fx.evaluator->evaluate(fx.user, fx.candidates, RankedList({3, 2, 1, 0}));
  EXPECT_NE(a.value(), reversed.value());
}

TEST(EvaluateList, ExhaustiveEnumerationFindsTheArgmax) {
  Fixture fx(4, 24);
  double best = -1e300;
  RankedList best_list;
  std::size_t count = 0;
  nsgr::for_each_permutation(4, [&](const RankedList& l) {
    const double v = fx.evaluator->list_value(fx.user, fx.candidates, l);
    if (v > best) {
      best = v;
      best_list = l;
    }
    ++count;
  });
  EXPECT_EQ(count, 24u);
  nsgr::for_each_permutation(4, [&](const RankedList& l) {
    EXPECT_LE(fx.evaluator->list_value(fx.user, fx.candidates, l), best);
  });
  EXPECT_TRUE(best_list.is_permutation());
}

TEST(EvaluateList, RejectsWrongLengthOrBadPermutation) {
  Fixture fx(4, 25);
  auto xs = fx.evaluator->semantic_embed(fx.user, fx.candidates);
  EXPECT_THROW(fx.evaluator->multi_scale_context(RankedList({0, 1}), xs, fx.candidates),
               nsgr::DomainError);
  EXPECT_THROW(fx.evaluator->multi_scale_context(RankedList({0, 1, 2, 2}), xs, fx.candidates),
               nsgr::DomainError);
}

TEST(SegmentLocality, InvariantUnderInsideShuffleAndOutsideSubstitution) {
  Rng rng(77);
  for (std::size_t m : {4u, 8u}) {
    for (int trial = 0; trial < 25; ++trial) {
      Fixture fx(m, 1000 + trial * 31 + m, m + 4);
      RankedList list = RankedList::identity(m);
      std::shuffle(list.order.begin(), list.order.end(), rng);
      // candidate pool larger than m: generate over the first m candidates
      CandidateSet pool = fx.candidates;
      pool.items.resize(m);
      auto xs = fx.evaluator->semantic_embed(fx.user, pool);
      auto ctx = fx.evaluator->multi_scale_context(list, xs, pool);

      const std::size_t levels = ctx.levels();
      std::uniform_int_distribution<std::size_t> pick_level(1, levels - 1 == 0 ? 0 : levels - 1);
      const std::size_t k = levels == 1 ? 0 : pick_level(rng);
      const std::size_t count = std::size_t{1} << k;
      const std::size_t width = m / count;
      std::uniform_int_distribution<std::size_t> pick_seg(0, count - 1);
      const std::size_t seg = pick_seg(rng);
      const std::size_t lo = seg * width, hi = (seg + 1) * width;

      // (a) permute inside the segment
      RankedList shuffled = list;
      if (width >= 2) {
        std::reverse(shuffled.order.begin() + static_cast<long>(lo),
                     shuffled.order.begin() + static_cast<long>(hi));
        auto ctx2 = fx.evaluator->multi_scale_context(shuffled, xs, pool);
        for (std::size_t j = 0; j < 8; ++j)
          EXPECT_NEAR(ctx.segment_vecs[k][seg].value().data[j],
                      ctx2.segment_vecs[k][seg].value().data[j], 1e-12);
      }

      // (b) substitute an item outside the segment
      CandidateSet swapped_pool = pool;
      const std::size_t outside_pos = hi < m ? hi : lo - 1;
      const auto cand = static_cast<std::size_t>(list[outside_pos]);
      swapped_pool.items[cand] = fx.candidates.items[m + (trial % 4)];
      auto xs3 = fx.evaluator->semantic_embed(fx.user, swapped_pool);
      auto ctx3 = fx.evaluator->multi_scale_context(list, xs3, swapped_pool);
      for (std::size_t j = 0; j < 8; ++j)
        EXPECT_NEAR(ctx.segment_vecs[k][seg].value().data[j],
                    ctx3.segment_vecs[k][seg].value().data[j], 1e-12);
    }
  }
}

}  // namespace
