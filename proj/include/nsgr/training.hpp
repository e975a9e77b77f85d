#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "nsgr/autodiff.hpp"
#include "nsgr/errors.hpp"
#include "nsgr/evaluator.hpp"
#include "nsgr/generator.hpp"
#include "nsgr/listspace.hpp"
#include "nsgr/params.hpp"

namespace nsgr {

// Flat key=value configuration covering every phase. Unknown keys are
// rejected so typos fail fast.
struct TrainConfig {
  // optimization
  double learning_rate = 0.001;
  std::size_t batch_size = 512;
  std::size_t embedding_dim = 8;
  std::vector<std::size_t> predict_hidden = {1024, 256, 128};
  double tau = 0.1;
  double beta = 2.0;
  double reward_threshold = 0.0;
  std::uint64_t seed = 42;

  // synthetic world
  std::size_t m = 4;
  std::size_t vocab_items = 50;
  std::size_t users = 120;
  std::size_t lists_per_user = 40;
  double bias_top = 1.0;
  double bias_bottom = -1.0;
  double utility_scale = 1.2;
  double utility_noise = 0.1;
  double pair_scale = 0.8;
  double pointwise_noise = 0.05;
  std::size_t window = 1;
  std::string policy = "random";
  std::size_t behavior_len = 24;
  std::size_t recent_len = 8;
  std::array<int, 3> codebook = {8, 8, 8};

  // interest encoder
  std::size_t interest_layers = 2;
  std::size_t interest_ffn_hidden = 32;
  std::size_t ntp_epochs = 6;

  // evaluator
  std::size_t sem_hidden = 32;
  std::size_t eval_epochs = 3;

  // generator
  std::size_t gen_epochs = 4;
  std::size_t gen_requests = 500;
  std::size_t priority_hidden = 16;
  std::size_t relation_hidden = 32;
  std::size_t set_hidden = 32;
  std::size_t set_out = 16;
  std::size_t root_hidden = 32;
  std::size_t anchor_ffn_hidden = 32;
  std::vector<std::size_t> score_hidden = {64, 32};

  // harness
  std::size_t heldout_requests = 500;
  std::size_t hr_samples = 1000;
  std::size_t hr_trials = 200;
  std::size_t cache_capacity = 1u << 16;
  std::size_t histogram_bins = 50;

  void validate() const {
    if (learning_rate <= 0.0) throw ConfigError("learning_rate must be > 0");
    if (tau <= 0.0) throw ConfigError("tau must be > 0");
    if (beta <= 0.0) throw ConfigError("beta must be > 0");
    if (reward_threshold < 0.0) throw ConfigError("reward_threshold must be >= 0");
    if (!is_power_of_two(m) || m < 2) throw ConfigError("m must be a power of two >= 2");
    if (vocab_items < m) throw ConfigError("vocab_items must be >= m");
    if (embedding_dim < 3) throw ConfigError("embedding_dim must be >= 3");
    if (policy != "random" && policy != "greedy") throw ConfigError("policy must be random or greedy");
  }

  EvaluatorConfig evaluator_config() const {
    EvaluatorConfig c;
    c.dim = embedding_dim;
    c.m = m;
    c.sem_hidden = sem_hidden;
    c.predict_hidden = predict_hidden;
    return c;
  }

  GeneratorConfig generator_config() const {
    GeneratorConfig c;
    c.dim = embedding_dim;
    c.priority_hidden = priority_hidden;
    c.relation_hidden = relation_hidden;
    c.set_hidden = set_hidden;
    c.set_out = set_out;
    c.root_hidden = root_hidden;
    c.anchor_ffn_hidden = anchor_ffn_hidden;
    c.score_hidden = score_hidden;
    return c;
  }
};

namespace detail_cfg {

inline std::vector<std::size_t> parse_size_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) out.push_back(static_cast<std::size_t>(std::stoull(tok)));
  if (out.empty()) throw ConfigError("empty list value: " + s);
  return out;
}

}  // namespace detail_cfg

inline void apply_config_entry(TrainConfig& cfg, const std::string& key, const std::string& value) {
  try {
    if (key == "learning_rate") cfg.learning_rate = std::stod(value);
    else if (key == "batch_size") cfg.batch_size = std::stoull(value);
    else if (key == "embedding_dim") cfg.embedding_dim = std::stoull(value);
    else if (key == "predict_hidden") cfg.predict_hidden = detail_cfg::parse_size_list(value);
    else if (key == "tau") cfg.tau = std::stod(value);
    else if (key == "beta") cfg.beta = std::stod(value);
    else if (key == "reward_threshold") cfg.reward_threshold = std::stod(value);
    else if (key == "seed") cfg.seed = std::stoull(value);
    else if (key == "m") cfg.m = std::stoull(value);
    else if (key == "vocab_items") cfg.vocab_items = std::stoull(value);
    else if (key == "users") cfg.users = std::stoull(value);
    else if (key == "lists_per_user") cfg.lists_per_user = std::stoull(value);
    else if (key == "bias_top") cfg.bias_top = std::stod(value);
    else if (key == "bias_bottom") cfg.bias_bottom = std::stod(value);
    else if (key == "utility_scale") cfg.utility_scale = std::stod(value);
    else if (key == "utility_noise") cfg.utility_noise = std::stod(value);
    else if (key == "pair_scale") cfg.pair_scale = std::stod(value);
    else if (key == "pointwise_noise") cfg.pointwise_noise = std::stod(value);
    else if (key == "window") cfg.window = std::stoull(value);
    else if (key == "policy") cfg.policy = value;
    else if (key == "behavior_len") cfg.behavior_len = std::stoull(value);
    else if (key == "recent_len") cfg.recent_len = std::stoull(value);
    else if (key == "codebook") {
      auto v = detail_cfg::parse_size_list(value);
      if (v.size() != 3) throw ConfigError("codebook needs exactly 3 sizes");
      for (int l = 0; l < 3; ++l) cfg.codebook[l] = static_cast<int>(v[l]);
    } else if (key == "interest_layers") cfg.interest_layers = std::stoull(value);
    else if (key == "interest_ffn_hidden") cfg.interest_ffn_hidden = std::stoull(value);
    else if (key == "ntp_epochs") cfg.ntp_epochs = std::stoull(value);
    else if (key == "sem_hidden") cfg.sem_hidden = std::stoull(value);
    else if (key == "eval_epochs") cfg.eval_epochs = std::stoull(value);
    else if (key == "gen_epochs") cfg.gen_epochs = std::stoull(value);
    else if (key == "gen_requests") cfg.gen_requests = std::stoull(value);
    else if (key == "priority_hidden") cfg.priority_hidden = std::stoull(value);
    else if (key == "relation_hidden") cfg.relation_hidden = std::stoull(value);
    else if (key == "set_hidden") cfg.set_hidden = std::stoull(value);
    else if (key == "set_out") cfg.set_out = std::stoull(value);
    else if (key == "root_hidden") cfg.root_hidden = std::stoull(value);
    else if (key == "anchor_ffn_hidden") cfg.anchor_ffn_hidden = std::stoull(value);
    else if (key == "score_hidden") cfg.score_hidden = detail_cfg::parse_size_list(value);
    else if (key == "heldout_requests") cfg.heldout_requests = std::stoull(value);
    else if (key == "hr_samples") cfg.hr_samples = std::stoull(value);
    else if (key == "hr_trials") cfg.hr_trials = std::stoull(value);
    else if (key == "cache_capacity") cfg.cache_capacity = std::stoull(value);
    else if (key == "histogram_bins") cfg.histogram_bins = std::stoull(value);
    else throw ConfigError("unknown config key: " + key);
  } catch (const std::invalid_argument&) {
    throw ConfigError("bad value for " + key + ": " + value);
  } catch (const std::out_of_range&) {
    throw ConfigError("value out of range for " + key + ": " + value);
  }
}

inline TrainConfig parse_config_text(const std::string& text) {
  TrainConfig cfg;
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + " is not key=value: " + line);
    apply_config_entry(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  cfg.validate();
  return cfg;
}

inline TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

// ---- losses ----

// Summed binary cross-entropy over one list's positions; probabilities are
// clamped to [1e-7, 1 - 1e-7] so the loss stays finite.
inline Var bce_loss(const Var& probs, const std::vector<int>& labels) {
  if (probs.cols() != 1 || probs.rows() != labels.size())
    throw DomainError("bce_loss: probs must be " + std::to_string(labels.size()) + "x1");
  Tensor y(labels.size(), 1);
  for (std::size_t t = 0; t < labels.size(); ++t) {
    if (labels[t] != 0 && labels[t] != 1)
      throw DataError("bce_loss: label outside {0,1} at position " + std::to_string(t));
    y.data[t] = static_cast<double>(labels[t]);
  }
  Var p = clamp(probs, 1e-7, 1.0 - 1e-7);
  Var yv = constant(y);
  Var ones = constant(Tensor(labels.size(), 1, 1.0));
  Var ll = add(mul(yv, log(p)), mul(sub(ones, yv), log(sub(ones, p))));
  return scale(sum_all(ll), -1.0);
}

inline std::vector<double> relative_rewards(const std::vector<double>& neighbor_values,
                                            double generated_value) {
  std::vector<double> out(neighbor_values.size());
  for (std::size_t o = 0; o < out.size(); ++o) out[o] = neighbor_values[o] - generated_value;
  return out;
}

// A generated list, its one-edit neighbors, their frozen evaluator views and
// the generator's own node vectors, ready for the alignment loss.
struct NeighborBatch {
  RankedList generated;
  double generated_value = 0.0;
  std::vector<RankedList> neighbors;
  std::vector<double> neighbor_values;
  std::vector<double> rewards;  // neighbor value minus generated value
  // neighbor_segments[o][k][s]: neighbor o's segment vector at tree level k,
  // segment s; detached from the frozen evaluator.
  std::vector<std::vector<std::vector<Tensor>>> neighbor_segments;
  // gen_levels[k]: the generator's node vectors at tree level k (level 0 is
  // the root vector); these carry gradient.
  std::vector<std::vector<Var>> gen_levels;
  std::size_t requested_count = 0;
};

struct MsnlResult {
  Var loss;                     // defined only when has_loss
  bool has_loss = false;
  std::size_t skipped_levels = 0;
  double value() const { return has_loss ? loss.scalar() : 0.0; }
};

// Contrastive alignment of generator node vectors toward the evaluator views
// of better neighbors, per tree scale. Positives are neighbors with reward
// above the threshold, negatives below; a scale with either side empty
// contributes nothing and bumps the skip counter.
inline MsnlResult multiscale_neighbor_loss(const NeighborBatch& batch, double tau, double threshold) {
  if (tau <= 0.0) throw ConfigError("multiscale_neighbor_loss: tau must be > 0");
  if (threshold < 0.0) throw ConfigError("multiscale_neighbor_loss: threshold must be >= 0");
  const std::size_t levels = batch.gen_levels.size();
  const std::size_t O = batch.neighbors.size();
  if (batch.rewards.size() != O || batch.neighbor_segments.size() != O)
    throw DomainError("multiscale_neighbor_loss: inconsistent neighbor batch");

  std::vector<std::size_t> positives, negatives;
  for (std::size_t o = 0; o < O; ++o) {
    if (batch.rewards[o] > threshold) positives.push_back(o);
    else if (batch.rewards[o] < threshold) negatives.push_back(o);
  }

  MsnlResult res;
  if (positives.empty() || negatives.empty()) {
    res.skipped_levels = levels;
    return res;
  }

  std::vector<Var> level_terms;
  for (std::size_t k = 0; k < levels; ++k) {
    // Alignment score of each neighbor at this scale: sum over interval-matched
    // node pairs of <generator vector, neighbor's evaluator vector>.
    std::vector<Var> scores(O);
    for (std::size_t o = 0; o < O; ++o) {
      if (batch.neighbor_segments[o].size() != levels ||
          batch.neighbor_segments[o][k].size() != batch.gen_levels[k].size())
        throw DomainError("multiscale_neighbor_loss: tree shapes do not match at level " +
                          std::to_string(k));
      Var s;
      for (std::size_t seg = 0; seg < batch.gen_levels[k].size(); ++seg) {
        Var d = dot(batch.gen_levels[k][seg], constant(batch.neighbor_segments[o][k][seg]));
        s = s.defined() ? add(s, d) : d;
      }
      scores[o] = s;
    }

    // log-sum-exp over negatives with max subtraction
    double max_scaled = -1e300;
    for (std::size_t o : negatives) max_scaled = std::max(max_scaled, scores[o].scalar() / tau);
    Var exp_sum;
    for (std::size_t o : negatives) {
      Var e = exp(add_scalar(scale(scores[o], 1.0 / tau), -max_scaled));
      exp_sum = exp_sum.defined() ? add(exp_sum, e) : e;
    }
    Var lse = add_scalar(log(exp_sum), max_scaled);

    Var term;
    double log_reward_sum = 0.0;
    for (std::size_t o : positives) {
      log_reward_sum += std::log(batch.rewards[o]);
      Var t = sub(scale(scores[o], 1.0 / tau), lse);
      term = term.defined() ? add(term, t) : t;
    }
    level_terms.push_back(scale(add_scalar(term, log_reward_sum), -1.0));
  }

  Var total = level_terms[0];
  for (std::size_t k = 1; k < level_terms.size(); ++k) total = add(total, level_terms[k]);
  res.loss = total;
  res.has_loss = true;
  return res;
}

// ---- trainers ----

struct EvalSample {
  UserContext user;
  CandidateSet candidates;
  RankedList logged;
  std::vector<int> labels;
};

struct GenRequest {
  UserContext user;
  CandidateSet candidates;
};

struct TrainLogRow {
  std::size_t step = 0;
  double loss = 0.0;
  double mean_gen_value = 0.0;
  std::size_t skipped_levels = 0;
  double cache_hit_rate = 0.0;
};

inline void write_train_log(const std::string& path, const std::vector<TrainLogRow>& rows,
                            const std::vector<std::string>& header_comments = {}) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write training log: " + path);
  for (const std::string& c : header_comments) out << "# " << c << "\n";
  out << "step,loss,mean_gen_value,skipped_levels,cache_hit_rate\n";
  for (const TrainLogRow& r : rows)
    out << r.step << "," << r.loss << "," << r.mean_gen_value << "," << r.skipped_levels << ","
        << r.cache_hit_rate << "\n";
}

struct EvaluatorTrainStats {
  std::vector<TrainLogRow> log;
  double final_epoch_loss = 0.0;
};

inline EvaluatorTrainStats train_evaluator(const MultiScaleEvaluator& evaluator,
                                           std::vector<EvalSample> samples, const TrainConfig& cfg,
                                           Rng& rng) {
  if (samples.empty()) throw DataError("train_evaluator: no samples");
  EvaluatorTrainStats stats;
  ParamStore& params = evaluator.params();
  std::size_t step = 0;
  std::vector<std::size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t epoch = 0; epoch < cfg.eval_epochs; ++epoch) {
    std::shuffle(idx.begin(), idx.end(), rng);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < idx.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(idx.size(), start + cfg.batch_size);
      params.zero_grads();
      Var batch_loss;
      for (std::size_t i = start; i < end; ++i) {
        const EvalSample& s = samples[idx[i]];
        EvaluatorOutput out = evaluator.evaluate(s.user, s.candidates, s.logged);
        Var l = bce_loss(out.probs, s.labels);
        batch_loss = batch_loss.defined() ? add(batch_loss, l) : l;
      }
      batch_loss = scale(batch_loss, 1.0 / static_cast<double>(end - start));
      backward(batch_loss);
      params.adam_step(cfg.learning_rate);
      ++step;
      ++batches;
      epoch_loss += batch_loss.scalar();
      stats.log.push_back({step, batch_loss.scalar(), 0.0, 0, 0.0});
    }
    if (batches > 0) stats.final_epoch_loss = epoch_loss / static_cast<double>(batches);
  }
  return stats;
}

struct GeneratorTrainStats {
  std::vector<TrainLogRow> log;
  std::vector<double> epoch_mean_gen_value;
  std::uint64_t evaluator_checksum_before = 0;
  std::uint64_t evaluator_checksum_after = 0;
  std::uint64_t interest_checksum_before = 0;
  std::uint64_t interest_checksum_after = 0;
};

// One training step per request: generate, sample neighbors, value everything
// through the frozen evaluator behind a per-request context cache, then step
// on the alignment loss.
inline GeneratorTrainStats train_generator(const CoarseToFineGenerator& generator,
                                           ParamStore& gen_params,
                                           const MultiScaleEvaluator& evaluator,
                                           const ParamStore& interest_params,
                                           const std::vector<GenRequest>& requests,
                                           const TrainConfig& cfg, Rng& rng) {
  if (requests.empty()) throw DataError("train_generator: no requests");
  GeneratorTrainStats stats;
  stats.evaluator_checksum_before = evaluator.params().checksum();
  stats.interest_checksum_before = interest_params.checksum();

  NeighborSpec nspec;
  nspec.beta = cfg.beta;
  const std::size_t levels = log2_exact(cfg.m);

  std::size_t step = 0;
  std::vector<std::size_t> idx(requests.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t epoch = 0; epoch < cfg.gen_epochs; ++epoch) {
    std::shuffle(idx.begin(), idx.end(), rng);
    double value_sum = 0.0;
    for (std::size_t i : idx) {
      const GenRequest& req = requests[i];
      Var xs = evaluator.semantic_embed(req.user, req.candidates);
      GenerationTrace trace = generator.generate(req.user.interest, xs);

      ContextCache cache(cfg.cache_capacity);
      NeighborBatch batch;
      batch.generated = trace.final_list;
      batch.generated_value =
          evaluator.evaluate_with_xs(req.user, req.candidates, trace.final_list, xs, &cache).value();
      batch.requested_count = nspec.target_count(cfg.m);
      batch.neighbors = sample_neighbors(trace.final_list, req.candidates.size(), nspec, rng);
      for (const RankedList& nb : batch.neighbors) {
        ScaleContext ctx = evaluator.multi_scale_context(nb, xs, req.candidates, &cache);
        EvaluatorOutput out = evaluator.predict_positions(nb, xs, ctx);
        batch.neighbor_values.push_back(out.value());
        std::vector<std::vector<Tensor>> segs(levels);
        for (std::size_t k = 0; k < levels; ++k)
          for (const Var& v : ctx.segment_vecs[k]) segs[k].push_back(v.value());
        batch.neighbor_segments.push_back(std::move(segs));
      }
      batch.rewards = relative_rewards(batch.neighbor_values, batch.generated_value);
      for (std::size_t k = 0; k < levels; ++k) batch.gen_levels.push_back(trace.level_vectors(k));

      MsnlResult loss = multiscale_neighbor_loss(batch, cfg.tau, cfg.reward_threshold);
      if (loss.has_loss) {
        gen_params.zero_grads();
        backward(loss.loss);
        gen_params.adam_step(cfg.learning_rate);
      }
      ++step;
      value_sum += batch.generated_value;
      stats.log.push_back({step, loss.value(), batch.generated_value, loss.skipped_levels,
                           cache.hit_rate()});
    }
    stats.epoch_mean_gen_value.push_back(value_sum / static_cast<double>(idx.size()));
  }

  stats.evaluator_checksum_after = evaluator.params().checksum();
  stats.interest_checksum_after = interest_params.checksum();
  if (stats.evaluator_checksum_after != stats.evaluator_checksum_before)
    throw IntegrityError("evaluator parameters changed during generator training");
  if (stats.interest_checksum_after != stats.interest_checksum_before)
    throw IntegrityError("interest parameters changed during generator training");
  return stats;
}

}  // namespace nsgr
