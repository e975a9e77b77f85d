#pragma once

#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "nsgr/dataset.hpp"
#include "nsgr/evaluator.hpp"
#include "nsgr/generator.hpp"
#include "nsgr/interest.hpp"
#include "nsgr/listspace.hpp"
#include "nsgr/metrics.hpp"
#include "nsgr/params.hpp"
#include "nsgr/synthworld.hpp"
#include "nsgr/training.hpp"

namespace nsgr {

// Artifact layout inside one output directory. Phases communicate only
// through these files, so each CLI subcommand can run in its own process.
struct OutPaths {
  std::string dir;

  explicit OutPaths(std::string d) : dir(std::move(d)) {}

  std::string items() const { return dir + "/items.json"; }
  std::string behaviors() const { return dir + "/behaviors.jsonl"; }
  std::string train_set() const { return dir + "/train.jsonl"; }
  std::string test_set() const { return dir + "/test.jsonl"; }
  std::string interest_ckpt() const { return dir + "/interest.ckpt"; }
  std::string interest_store() const { return dir + "/interest_store.jsonl"; }
  std::string evaluator_ckpt() const { return dir + "/evaluator.ckpt"; }
  std::string generator_ckpt() const { return dir + "/generator.ckpt"; }
  std::string pretrain_log() const { return dir + "/pretrain_log.csv"; }
  std::string evaluator_log() const { return dir + "/train_evaluator_log.csv"; }
  std::string generator_log() const { return dir + "/train_generator_log.csv"; }
  std::string metrics() const { return dir + "/metrics.csv"; }
  std::string migration() const { return dir + "/migration.csv"; }
  std::string eval_rows() const { return dir + "/eval_rows.csv"; }
  std::string histogram() const { return dir + "/value_histogram.csv"; }
  std::string oracle() const { return dir + "/oracle.csv"; }
  std::string sweep() const { return dir + "/sweep.csv"; }
  std::string summary() const { return dir + "/summary.csv"; }
  std::string traces() const { return dir + "/traces.jsonl"; }
};

inline void ensure_dir(const std::string& dir) { std::filesystem::create_directories(dir); }

// ---- synth ----

struct SynthSummary {
  std::size_t train_samples = 0;
  std::size_t test_samples = 0;
  std::size_t filtered = 0;
  std::size_t users = 0;
};

inline SynthSummary run_synth(const TrainConfig& cfg, const std::string& outdir) {
  cfg.validate();
  ensure_dir(outdir);
  OutPaths paths(outdir);
  SyntheticWorld world(cfg, cfg.seed);

  std::vector<Item> items;
  for (std::size_t i = 0; i < world.vocab(); ++i) items.push_back(world.item(i));
  write_items(paths.items(), items, cfg.embedding_dim);

  Rng train_rng(cfg.seed ^ 0x7261696eull);
  SynthDataset train = synth_generate(world, cfg.users, cfg.lists_per_user, cfg.policy, train_rng);
  write_pageviews(paths.train_set(), train.samples);

  Rng test_rng(cfg.seed ^ 0x74657374ull);
  const std::size_t per_user = (cfg.heldout_requests + cfg.users - 1) / cfg.users;
  SynthDataset test = synth_generate(world, cfg.users, per_user, cfg.policy, test_rng);
  if (test.samples.size() > cfg.heldout_requests) test.samples.resize(cfg.heldout_requests);
  write_pageviews(paths.test_set(), test.samples);

  std::map<std::int64_t, BehaviorSequence> behaviors;
  for (std::size_t u = 0; u < cfg.users; ++u)
    behaviors[static_cast<std::int64_t>(u)] =
        synth_behavior(world, cfg.seed * 1000003ull + u, cfg.behavior_len);
  write_behaviors(paths.behaviors(), behaviors);

  return {train.samples.size(), test.samples.size(), train.filtered_uniform + test.filtered_uniform,
          cfg.users};
}

// ---- pretrain ----

inline PretrainStats run_pretrain(const TrainConfig& cfg, const std::string& outdir) {
  cfg.validate();
  OutPaths paths(outdir);
  const auto behaviors = read_behaviors(paths.behaviors());
  if (behaviors.empty()) throw DataError("pretrain: no behavior sequences in " + paths.behaviors());

  std::vector<BehaviorSequence> corpus;
  for (const auto& [user, seq] : behaviors) corpus.push_back(seq);

  ParamStore params;
  Rng init_rng(cfg.seed ^ 0xa111ceull);
  InterestEncoder encoder(SemanticCodebook{cfg.codebook},
                          InterestConfig{cfg.embedding_dim, cfg.interest_layers, cfg.interest_ffn_hidden},
                          params, init_rng);
  Rng train_rng(cfg.seed ^ 0x917e41ull);
  PretrainStats stats = encoder.pretrain(corpus, cfg.ntp_epochs, cfg.learning_rate, train_rng);
  params.save(paths.interest_ckpt());

  std::map<std::int64_t, std::vector<double>> store;
  for (const auto& [user, seq] : behaviors) store[user] = encoder.interest_vector(seq).data;
  write_interest_store(paths.interest_store(), store);

  CsvWriter log(paths.pretrain_log());
  log.row({"heldout_ce", "unigram_ce", "train_ce", "steps"});
  log.row({fmt_double(stats.heldout_ce), fmt_double(stats.unigram_ce), fmt_double(stats.train_ce),
           std::to_string(stats.steps)});
  return stats;
}

// ---- shared loading ----

struct Cohort {
  std::map<std::int64_t, UserContext> contexts;

  const UserContext& context(std::int64_t user) const {
    auto it = contexts.find(user);
    if (it == contexts.end())
      throw DataError("no interest vector for user " + std::to_string(user));
    return it->second;
  }
};

inline Cohort build_cohort(const TrainConfig& cfg, const OutPaths& paths,
                           const InterestEncoder& encoder) {
  Cohort cohort;
  const auto store = read_interest_store(paths.interest_store());
  const auto behaviors = read_behaviors(paths.behaviors());
  for (const auto& [user, vec] : store) {
    UserContext ctx;
    if (vec.size() != cfg.embedding_dim)
      throw DataError("interest store entry has wrong dimension");
    ctx.interest = Tensor::row_vector(vec);
    ctx.other = Tensor(1, cfg.embedding_dim);
    auto bit = behaviors.find(user);
    ctx.recent = bit == behaviors.end() ? encoder.recent_matrix(BehaviorSequence{}, cfg.recent_len)
                                        : encoder.recent_matrix(bit->second, cfg.recent_len);
    cohort.contexts.emplace(user, std::move(ctx));
  }
  return cohort;
}

inline std::vector<Item> load_catalog(const OutPaths& paths) {
  std::vector<Item> raw = read_items(paths.items());
  std::vector<Item> catalog(raw.size());
  for (Item& it : raw) {
    const auto idx = static_cast<std::size_t>(it.id);
    if (idx >= catalog.size()) catalog.resize(idx + 1);
    catalog[idx] = std::move(it);
  }
  return catalog;
}

inline CandidateSet to_candidates(const PageviewSample& s, const std::vector<Item>& catalog) {
  CandidateSet set;
  set.user_id = s.user_id;
  for (std::size_t vid : s.vocab_ids) {
    if (vid >= catalog.size()) throw DataError("pageview references unknown item " + std::to_string(vid));
    set.items.push_back(catalog[vid]);
  }
  set.validate();
  return set;
}

// ---- evaluator training ----

inline EvaluatorTrainStats run_train_evaluator(const TrainConfig& cfg, const std::string& outdir) {
  cfg.validate();
  OutPaths paths(outdir);
  const auto catalog = load_catalog(paths);
  ParamStore interest_params;
  interest_params.load(paths.interest_ckpt());
  InterestEncoder encoder(SemanticCodebook{cfg.codebook},
                          InterestConfig{cfg.embedding_dim, cfg.interest_layers, cfg.interest_ffn_hidden},
                          interest_params);
  const Cohort cohort = build_cohort(cfg, paths, encoder);

  std::vector<EvalSample> samples;
  for (const PageviewSample& s : read_pageviews(paths.train_set())) {
    EvalSample es;
    es.user = cohort.context(s.user_id);
    es.candidates = to_candidates(s, catalog);
    es.logged = RankedList::identity(s.vocab_ids.size());
    es.labels = s.labels;
    samples.push_back(std::move(es));
  }

  ParamStore eval_params;
  Rng init_rng(cfg.seed ^ 0xe7a1ull);
  MultiScaleEvaluator evaluator(cfg.evaluator_config(), eval_params, init_rng);
  Rng train_rng(cfg.seed ^ 0x7e41ull);
  EvaluatorTrainStats stats = train_evaluator(evaluator, std::move(samples), cfg, train_rng);
  eval_params.save(paths.evaluator_ckpt());
  write_train_log(paths.evaluator_log(), stats.log, {"phase=train-evaluator"});
  return stats;
}

// ---- generator training ----

inline GeneratorTrainStats run_train_generator(const TrainConfig& cfg, const std::string& outdir) {
  cfg.validate();
  OutPaths paths(outdir);
  const auto catalog = load_catalog(paths);
  ParamStore interest_params;
  interest_params.load(paths.interest_ckpt());
  interest_params.freeze_all();
  InterestEncoder encoder(SemanticCodebook{cfg.codebook},
                          InterestConfig{cfg.embedding_dim, cfg.interest_layers, cfg.interest_ffn_hidden},
                          interest_params);
  const Cohort cohort = build_cohort(cfg, paths, encoder);

  ParamStore eval_params;
  eval_params.load(paths.evaluator_ckpt());
  eval_params.freeze_all();
  MultiScaleEvaluator evaluator(cfg.evaluator_config(), eval_params);

  std::vector<GenRequest> requests;
  for (const PageviewSample& s : read_pageviews(paths.train_set())) {
    if (requests.size() >= cfg.gen_requests) break;
    GenRequest r;
    r.user = cohort.context(s.user_id);
    r.candidates = to_candidates(s, catalog);
    requests.push_back(std::move(r));
  }

  ParamStore gen_params;
  Rng init_rng(cfg.seed ^ 0x6e41ull);
  CoarseToFineGenerator generator(cfg.generator_config(), gen_params, init_rng);
  Rng train_rng(cfg.seed ^ 0x764ull);
  GeneratorTrainStats stats =
      train_generator(generator, gen_params, evaluator, interest_params, requests, cfg, train_rng);
  gen_params.save(paths.generator_ckpt());

  char buf[64];
  std::vector<std::string> comments = {"phase=train-generator"};
  std::snprintf(buf, sizeof buf, "evaluator_checksum_before=%016llx",
                static_cast<unsigned long long>(stats.evaluator_checksum_before));
  comments.emplace_back(buf);
  std::snprintf(buf, sizeof buf, "evaluator_checksum_after=%016llx",
                static_cast<unsigned long long>(stats.evaluator_checksum_after));
  comments.emplace_back(buf);
  std::snprintf(buf, sizeof buf, "interest_checksum_before=%016llx",
                static_cast<unsigned long long>(stats.interest_checksum_before));
  comments.emplace_back(buf);
  std::snprintf(buf, sizeof buf, "interest_checksum_after=%016llx",
                static_cast<unsigned long long>(stats.interest_checksum_after));
  comments.emplace_back(buf);
  write_train_log(paths.generator_log(), stats.log, comments);
  return stats;
}

// ---- evaluation ----

struct EvaluateResult {
  MetricReport report;
  std::size_t requests_scored = 0;
};

inline EvaluateResult run_evaluate(const TrainConfig& cfg, const std::string& outdir) {
  cfg.validate();
  OutPaths paths(outdir);
  const auto catalog = load_catalog(paths);
  SyntheticWorld world(cfg, cfg.seed);
  if (world.vocab() != catalog.size() ||
      (world.vocab() > 0 && world.features(0) != catalog[0].features))
    throw DataError("evaluate: dataset was produced by a different world (config/seed mismatch)");

  ParamStore interest_params;
  interest_params.load(paths.interest_ckpt());
  InterestEncoder encoder(SemanticCodebook{cfg.codebook},
                          InterestConfig{cfg.embedding_dim, cfg.interest_layers, cfg.interest_ffn_hidden},
                          interest_params);
  const Cohort cohort = build_cohort(cfg, paths, encoder);

  ParamStore eval_params;
  eval_params.load(paths.evaluator_ckpt());
  MultiScaleEvaluator evaluator(cfg.evaluator_config(), eval_params);
  ParamStore gen_params;
  gen_params.load(paths.generator_ckpt());
  CoarseToFineGenerator generator(cfg.generator_config(), gen_params);

  const auto test = read_pageviews(paths.test_set());
  if (test.empty()) throw DataError("evaluate: empty test set");

  // Evaluator quality on logged orderings.
  std::vector<double> all_preds;
  std::vector<int> all_labels;
  std::vector<ListLabels> per_list;
  CsvWriter rows(paths.eval_rows());
  rows.row({"user_id", "item_ids", "probs", "list_value"});
  for (const PageviewSample& s : test) {
    const CandidateSet candidates = to_candidates(s, catalog);
    EvaluatorOutput out =
        evaluator.evaluate(cohort.context(s.user_id), candidates, RankedList::identity(s.vocab_ids.size()));
    const std::vector<double> probs = out.prob_values();
    ListLabels ll;
    ll.predictions = probs;
    ll.labels = s.labels;
    per_list.push_back(ll);
    all_preds.insert(all_preds.end(), probs.begin(), probs.end());
    all_labels.insert(all_labels.end(), s.labels.begin(), s.labels.end());

    json ids = json::array();
    for (std::size_t vid : s.vocab_ids) ids.push_back(vid);
    std::string prob_str;
    for (std::size_t t = 0; t < probs.size(); ++t)
      prob_str += (t ? ";" : "") + fmt_double(probs[t]);
    rows.row({std::to_string(s.user_id), ids.dump(), prob_str, fmt_double(out.value())});
  }

  EvaluateResult res;
  res.report.auc = auc(all_preds, all_labels);
  res.report.gauc = gauc(per_list);

  // Generator quality against the ground-truth world.
  const std::size_t n_req = std::min<std::size_t>(cfg.heldout_requests, test.size());
  double hr1 = 0.0, hr10 = 0.0, gen_pct = 0.0, greedy_pct = 0.0;
  std::vector<std::pair<RankedList, RankedList>> vs_best;
  std::vector<std::pair<RankedList, RankedList>> migration_pairs;
  std::vector<double> mean_hist;
  std::vector<double> marker_sums(5, 0.0);
  Rng hr_rng(cfg.seed ^ 0x4242ull);
  std::ofstream traces(paths.traces());
  for (std::size_t i = 0; i < n_req; ++i) {
    const PageviewSample& s = test[i];
    const CandidateSet candidates = to_candidates(s, catalog);
    const UserContext& user = cohort.context(s.user_id);
    Var xs = evaluator.semantic_embed(user, candidates);
    GenerationTrace trace = generator.generate(user.interest, xs);
    traces << trace_to_json(trace, candidates).dump() << "\n";

    ListValuer world_value = [&](const RankedList& l) { return world.list_value(s.vocab_ids, l); };
    hr1 += hit_ratio(trace.final_list, world_value, 1.0, HitRatioMode::Exhaustive, hr_rng);
    hr10 += hit_ratio(trace.final_list, world_value, 10.0, HitRatioMode::Exhaustive, hr_rng);

    ValuePercentileResult vp =
        value_percentile(trace.final_list, world_value, cfg.m, cfg.histogram_bins);
    gen_pct += vp.normalized;
    const RankedList greedy = greedy_by_pointwise(world, s.vocab_ids);
    greedy_pct += value_percentile(greedy, world_value, cfg.m, cfg.histogram_bins).normalized;

    RankedList best;
    double best_v = -1e300;
    for_each_permutation(cfg.m, [&](const RankedList& l) {
      const double v = world_value(l);
      if (v > best_v) {
        best_v = v;
        best = l;
      }
    });
    vs_best.emplace_back(trace.final_list, best);
    migration_pairs.emplace_back(greedy, trace.final_list);

    if (mean_hist.empty()) mean_hist.assign(vp.histogram.counts.size(), 0.0);
    for (std::size_t b = 0; b < vp.histogram.counts.size(); ++b)
      mean_hist[b] += static_cast<double>(vp.histogram.counts[b]);
    for (std::size_t p = 0; p < vp.percentile_markers.size(); ++p)
      marker_sums[p] += vp.percentile_markers[p];
  }
  res.requests_scored = n_req;
  res.report.hr1 = hr1 / static_cast<double>(n_req);
  res.report.hr10 = hr10 / static_cast<double>(n_req);
  res.report.mean_normalized_value = gen_pct / static_cast<double>(n_req);
  res.report.greedy_mean_normalized_value = greedy_pct / static_cast<double>(n_req);
  res.report.diff = diff_rates(vs_best);
  res.report.migration = position_migration(migration_pairs);
  res.report.validate();

  CsvWriter metrics(paths.metrics());
  metrics.comment("held-out requests scored: " + std::to_string(n_req));
  metrics.row({"metric", "value"});
  metrics.row({"auc", fmt_double(res.report.auc)});
  metrics.row({"gauc", fmt_double(res.report.gauc.value)});
  metrics.row({"gauc_used_lists", std::to_string(res.report.gauc.used_lists)});
  metrics.row({"gauc_skipped_lists", std::to_string(res.report.gauc.skipped_lists)});
  metrics.row({"hr_at_1pct", fmt_double(res.report.hr1)});
  metrics.row({"hr_at_10pct", fmt_double(res.report.hr10)});
  metrics.row({"mean_normalized_value", fmt_double(res.report.mean_normalized_value)});
  metrics.row({"greedy_mean_normalized_value", fmt_double(res.report.greedy_mean_normalized_value)});
  metrics.row({"diff_same", fmt_double(res.report.diff.same)});
  metrics.row({"diff_within2", fmt_double(res.report.diff.within2)});
  metrics.row({"diff_within3", fmt_double(res.report.diff.within3)});
  metrics.row({"diff_within4", fmt_double(res.report.diff.within4)});

  write_matrix_csv(paths.migration(), res.report.migration,
                   {"row = initial position (pointwise-score descending), col = final position",
                    "entry (i,j) = P(final j | initial i)"});

  ValueHistogram hist;
  hist.counts.resize(mean_hist.size());
  for (std::size_t b = 0; b <= mean_hist.size(); ++b)
    hist.bin_edges.push_back(static_cast<double>(b) / static_cast<double>(mean_hist.size()));
  for (std::size_t b = 0; b < mean_hist.size(); ++b)
    hist.counts[b] = static_cast<std::size_t>(mean_hist[b] / static_cast<double>(n_req) * 1000.0);
  std::vector<std::string> hist_comments = {
      "normalized list-value distribution over the exhaustive permutation space",
      "counts are per-mille, averaged over requests"};
  for (std::size_t p = 0; p < marker_sums.size(); ++p) {
    static const char* names[] = {"p50", "p70", "p80", "p90", "p99"};
    hist_comments.push_back(std::string(names[p]) + "=" +
                            fmt_double(marker_sums[p] / static_cast<double>(n_req)));
  }
  hist_comments.push_back("generated_mean=" + fmt_double(res.report.mean_normalized_value));
  hist_comments.push_back("greedy_mean=" + fmt_double(res.report.greedy_mean_normalized_value));
  write_histogram_csv(paths.histogram(), hist, hist_comments);
  return res;
}

// ---- oracle ----

struct OracleSummary {
  std::size_t requests = 0;
  double greedy_mean_normalized = 0.0;
};

inline OracleSummary run_oracle(const TrainConfig& cfg, const std::string& outdir) {
  cfg.validate();
  OutPaths paths(outdir);
  SyntheticWorld world(cfg, cfg.seed);
  const auto test = read_pageviews(paths.test_set());
  if (test.empty()) throw DataError("oracle: empty test set");

  CsvWriter out(paths.oracle());
  out.comment("exhaustive permutation oracle under the ground-truth world");
  out.row({"user_id", "item_ids", "best_order", "best_value", "worst_value", "greedy_value",
           "greedy_normalized"});
  OracleSummary summary;
  const std::size_t n_req = std::min<std::size_t>(cfg.heldout_requests, test.size());
  for (std::size_t i = 0; i < n_req; ++i) {
    const PageviewSample& s = test[i];
    ListValuer world_value = [&](const RankedList& l) { return world.list_value(s.vocab_ids, l); };
    RankedList best;
    double best_v = -1e300, worst_v = 1e300;
    for_each_permutation(cfg.m, [&](const RankedList& l) {
      const double v = world_value(l);
      if (v > best_v) {
        best_v = v;
        best = l;
      }
      worst_v = std::min(worst_v, v);
    });
    const RankedList greedy = greedy_by_pointwise(world, s.vocab_ids);
    const double greedy_v = world_value(greedy);
    const double normalized = best_v > worst_v ? (greedy_v - worst_v) / (best_v - worst_v) : 1.0;
    summary.greedy_mean_normalized += normalized;

    json ids = json::array();
    for (std::size_t vid : s.vocab_ids) ids.push_back(vid);
    json border = json::array();
    for (int idx : best.order) border.push_back(idx);
    out.row({std::to_string(s.user_id), ids.dump(), border.dump(), fmt_double(best_v),
             fmt_double(worst_v), fmt_double(greedy_v), fmt_double(normalized)});
  }
  summary.requests = n_req;
  summary.greedy_mean_normalized /= static_cast<double>(n_req);
  return summary;
}

// ---- sweep ----

struct SweepRow {
  std::string knob;
  double value = 0.0;
  double tau = 0.0;
  double beta = 0.0;
  std::size_t o_requested = 0;
  std::size_t o_realized = 0;
  std::size_t steps = 0;
  double mean_gen_value = 0.0;
  double hr1 = 0.0;
  double hr10 = 0.0;
};

// Trains a fresh generator per knob setting against the already-trained
// frozen evaluator, then scores a slice of held-out requests with the exact
// world oracle. Run budgets are deliberately tiny; the point is the shape of
// the table, not the numbers.
inline std::vector<SweepRow> run_sweep(const TrainConfig& base_cfg, const std::string& outdir,
                                       const std::vector<double>& taus = {0.01, 0.1, 0.5, 1.0, 2.0},
                                       const std::vector<double>& betas = {0.1, 0.5, 1.0, 2.0, 5.0}) {
  base_cfg.validate();
  OutPaths paths(outdir);
  const auto catalog = load_catalog(paths);
  SyntheticWorld world(base_cfg, base_cfg.seed);

  ParamStore interest_params;
  interest_params.load(paths.interest_ckpt());
  interest_params.freeze_all();
  InterestEncoder encoder(SemanticCodebook{base_cfg.codebook},
                          InterestConfig{base_cfg.embedding_dim, base_cfg.interest_layers,
                                         base_cfg.interest_ffn_hidden},
                          interest_params);
  const Cohort cohort = build_cohort(base_cfg, paths, encoder);

  ParamStore eval_params;
  eval_params.load(paths.evaluator_ckpt());
  eval_params.freeze_all();
  MultiScaleEvaluator evaluator(base_cfg.evaluator_config(), eval_params);

  std::vector<GenRequest> requests;
  for (const PageviewSample& s : read_pageviews(paths.train_set())) {
    if (requests.size() >= std::min<std::size_t>(base_cfg.gen_requests, 64)) break;
    GenRequest r;
    r.user = cohort.context(s.user_id);
    r.candidates = to_candidates(s, catalog);
    requests.push_back(std::move(r));
  }
  const auto test = read_pageviews(paths.test_set());
  const std::size_t score_n = std::min<std::size_t>(50, test.size());

  std::vector<std::pair<std::string, double>> runs;
  for (double t : taus) runs.emplace_back("tau", t);
  for (double b : betas) runs.emplace_back("beta", b);

  std::vector<SweepRow> rows;
  std::size_t run_id = 0;
  for (const auto& [knob, value] : runs) {
    TrainConfig cfg = base_cfg;
    cfg.gen_epochs = 1;
    if (knob == "tau") cfg.tau = value;
    else cfg.beta = value;

    SweepRow row;
    row.knob = knob;
    row.value = value;
    row.tau = cfg.tau;
    row.beta = cfg.beta;

    NeighborSpec nspec;
    nspec.beta = cfg.beta;
    row.o_requested = nspec.target_count(cfg.m);
    Rng probe_rng(cfg.seed ^ 0x9999ull);
    row.o_realized =
        sample_neighbors(RankedList::identity(cfg.m), cfg.m, nspec, probe_rng).size();

    ParamStore gen_params;
    Rng init_rng(cfg.seed ^ (0x6e4100ull + run_id));
    CoarseToFineGenerator generator(cfg.generator_config(), gen_params, init_rng);
    Rng train_rng(cfg.seed ^ (0x764000ull + run_id));
    GeneratorTrainStats stats =
        train_generator(generator, gen_params, evaluator, interest_params, requests, cfg, train_rng);
    row.steps = stats.log.size();
    row.mean_gen_value = stats.epoch_mean_gen_value.empty() ? 0.0 : stats.epoch_mean_gen_value.back();

    Rng hr_rng(cfg.seed ^ (0x484200ull + run_id));
    for (std::size_t i = 0; i < score_n; ++i) {
      const PageviewSample& s = test[i];
      const CandidateSet candidates = to_candidates(s, catalog);
      const UserContext& user = cohort.context(s.user_id);
      Var xs = evaluator.semantic_embed(user, candidates);
      GenerationTrace trace = generator.generate(user.interest, xs);
      ListValuer world_value = [&](const RankedList& l) { return world.list_value(s.vocab_ids, l); };
      row.hr1 += hit_ratio(trace.final_list, world_value, 1.0, HitRatioMode::Exhaustive, hr_rng);
      row.hr10 += hit_ratio(trace.final_list, world_value, 10.0, HitRatioMode::Exhaustive, hr_rng);
    }
    row.hr1 /= static_cast<double>(score_n);
    row.hr10 /= static_cast<double>(score_n);
    rows.push_back(row);
    ++run_id;
  }

  CsvWriter out(paths.sweep());
  out.row({"knob", "value", "tau", "beta", "o_requested", "o_realized", "steps", "mean_gen_value",
           "hr_at_1pct", "hr_at_10pct"});
  for (const SweepRow& r : rows)
    out.row({r.knob, fmt_double(r.value), fmt_double(r.tau), fmt_double(r.beta),
             std::to_string(r.o_requested), std::to_string(r.o_realized), std::to_string(r.steps),
             fmt_double(r.mean_gen_value), fmt_double(r.hr1), fmt_double(r.hr10)});
  return rows;
}

// ---- report ----

// Folds the phase logs and metric files into one key/value summary.
inline std::map<std::string, std::string> run_report(const TrainConfig& cfg,
                                                     const std::string& outdir) {
  cfg.validate();
  OutPaths paths(outdir);
  std::map<std::string, std::string> summary;

  auto last_csv_row = [](const std::string& path) -> std::vector<std::string> {
    std::ifstream in(path);
    if (!in) return {};
    std::string line, last;
    while (std::getline(in, line))
      if (!line.empty() && line[0] != '#' && line.find_first_not_of(" \t\r") != std::string::npos)
        last = line;
    std::vector<std::string> cells;
    std::stringstream ss(last);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    return cells;
  };

  if (auto row = last_csv_row(paths.pretrain_log()); row.size() >= 2) {
    summary["pretrain.heldout_ce"] = row[0];
    summary["pretrain.unigram_ce"] = row[1];
  }
  if (auto row = last_csv_row(paths.evaluator_log()); row.size() >= 2)
    summary["evaluator.final_loss"] = row[1];
  if (auto row = last_csv_row(paths.generator_log()); row.size() >= 3) {
    summary["generator.final_loss"] = row[1];
    summary["generator.final_gen_value"] = row[2];
  }
  {
    std::ifstream in(paths.metrics());
    std::string line;
    bool header = true;
    while (in && std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      if (header) {
        header = false;
        continue;
      }
      const auto comma = line.find(',');
      if (comma != std::string::npos)
        summary["metrics." + line.substr(0, comma)] = line.substr(comma + 1);
    }
  }

  CsvWriter out(paths.summary());
  out.row({"key", "value"});
  for (const auto& [k, v] : summary) out.row({k, v});
  return summary;
}

}  // namespace nsgr
