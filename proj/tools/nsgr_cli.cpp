// Command-line driver for the reranking pipeline. Every subcommand reads and
// writes one output directory so the phases compose:
//   nsgr synth | pretrain | train-evaluator | train-generator | evaluate |
//        oracle | report, each with --config <path> --seed <u64> --out <dir>.
// Exit codes: 0 success, 2 configuration error, 3 data error.

#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "nsgr/pipeline.hpp"

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  bool seed_set = false;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "flat key=value config file");
  cmd->add_option("--out", opts.out_dir, "output directory shared by all phases");
  cmd->add_option("--seed", opts.seed, "seed override")->each([&opts](const std::string&) {
    opts.seed_set = true;
  });
}

nsgr::TrainConfig resolve_config(const CommonOpts& opts) {
  nsgr::TrainConfig cfg =
      opts.config_path.empty() ? nsgr::TrainConfig{} : nsgr::load_config(opts.config_path);
  if (opts.seed_set) cfg.seed = opts.seed;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tree-based generative reranking: synthetic pipeline driver"};
  app.require_subcommand(1);

  CommonOpts opts;
  auto* synth = app.add_subcommand("synth", "emit the synthetic world's datasets");
  auto* pretrain = app.add_subcommand("pretrain", "pretrain the interest encoder (next-token)");
  auto* train_eval = app.add_subcommand("train-evaluator", "fit the multi-scale evaluator");
  auto* train_gen = app.add_subcommand("train-generator", "align the generator to the frozen evaluator");
  auto* evaluate = app.add_subcommand("evaluate", "score held-out requests into metric CSVs");
  auto* oracle = app.add_subcommand("oracle", "exhaustive enumeration report per request");
  auto* report = app.add_subcommand("report", "aggregate phase outputs into summary.csv");
  for (CLI::App* cmd : {synth, pretrain, train_eval, train_gen, evaluate, oracle, report})
    add_common(cmd, opts);

  CLI11_PARSE(app, argc, argv);

  try {
    const nsgr::TrainConfig cfg = resolve_config(opts);
    if (synth->parsed()) {
      const auto s = nsgr::run_synth(cfg, opts.out_dir);
      std::cout << "synth: " << s.train_samples << " train, " << s.test_samples << " test pageviews ("
                << s.filtered << " uniform-label pageviews filtered)\n";
    } else if (pretrain->parsed()) {
      const auto s = nsgr::run_pretrain(cfg, opts.out_dir);
      std::cout << "pretrain: held-out ce " << s.heldout_ce << " vs unigram " << s.unigram_ce << " over "
                << s.steps << " steps\n";
    } else if (train_eval->parsed()) {
      const auto s = nsgr::run_train_evaluator(cfg, opts.out_dir);
      std::cout << "train-evaluator: final epoch loss " << s.final_epoch_loss << " after "
                << s.log.size() << " steps\n";
    } else if (train_gen->parsed()) {
      const auto s = nsgr::run_train_generator(cfg, opts.out_dir);
      std::cout << "train-generator: mean generated value "
                << (s.epoch_mean_gen_value.empty() ? 0.0 : s.epoch_mean_gen_value.back())
                << " in the last epoch; evaluator checksum "
                << (s.evaluator_checksum_before == s.evaluator_checksum_after ? "unchanged"
                                                                              : "CHANGED")
                << "\n";
    } else if (evaluate->parsed()) {
      const auto r = nsgr::run_evaluate(cfg, opts.out_dir);
      std::cout << "evaluate: auc " << r.report.auc << ", gauc " << r.report.gauc.value << ", hr@1% "
                << r.report.hr1 << ", hr@10% " << r.report.hr10 << ", mean normalized value "
                << r.report.mean_normalized_value << " (greedy "
                << r.report.greedy_mean_normalized_value << ") over " << r.requests_scored
                << " requests\n";
    } else if (oracle->parsed()) {
      const auto s = nsgr::run_oracle(cfg, opts.out_dir);
      std::cout << "oracle: " << s.requests << " requests enumerated; greedy mean normalized value "
                << s.greedy_mean_normalized << "\n";
    } else if (report->parsed()) {
      const auto s = nsgr::run_report(cfg, opts.out_dir);
      std::cout << "report: " << s.size() << " summary rows written\n";
    }
  } catch (const nsgr::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const nsgr::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
