#include <cstdio>
#include <cstdlib>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "fmms/config.hpp"
#include "fmms/data.hpp"
#include "fmms/error.hpp"
#include "fmms/eval.hpp"
#include "fmms/model.hpp"

namespace {

struct Options {
  std::string config_path;
  bool has_seed = false;
  uint64_t seed = 0;
  bool verbose = false;
};

fmms::Config load(const Options& opt) {
  fmms::Config cfg = fmms::load_config(opt.config_path);
  if (opt.has_seed) cfg.global_seed = opt.seed;
  return cfg;
}

int cmd_gen_data(const Options& opt) {
  const fmms::Config cfg = load(opt);
  const fmms::Dataset d =
      fmms::generate_dataset(cfg.data, cfg.effective_data_seed());
  fmms::save_dataset(d, cfg.data_path);
  std::printf("wrote %s (%zu images, %zu captions)\n", cfg.data_path.c_str(),
              d.num_images(), d.num_captions());
  return 0;
}

int cmd_train(const Options& opt) {
  const fmms::Config cfg = load(opt);
  if (cfg.models.empty())
    throw fmms::ConfigError("train.models",
                            "missing required config key: train.models");
  const fmms::Dataset d = fmms::load_dataset(cfg.data_path);
  for (size_t i = 0; i < cfg.models.size(); ++i) {
    const auto& spec = cfg.models[i];
    const uint64_t seed = cfg.effective_train_seed(i);
    fmms::RetrievalModel init =
        fmms::init_model(spec.kind, cfg.model_dims(), seed);
    const fmms::TrainResult result =
        fmms::train_contrastive(init, d, cfg.train, seed);
    fmms::save_model(result.model, spec.checkpoint);
    std::printf("trained %s (%s): loss %.4f, clean TR R@1 %.4f, IR R@1 %.4f -> %s\n",
                spec.id.c_str(),
                spec.kind == fmms::ModelKind::Fused ? "fused" : "aligned",
                result.final_loss, result.tr_r1, result.ir_r1,
                spec.checkpoint.c_str());
    if (result.tr_r1 < 0.90 || result.ir_r1 < 0.90)
      std::fprintf(stderr,
                   "warning: %s clean R@1 below 0.90; attack metrics will be "
                   "unreliable\n",
                   spec.id.c_str());
  }
  return 0;
}

int cmd_attack(const Options& opt) {
  const fmms::Config cfg = load(opt);
  if (cfg.experiment.report.empty())
    throw fmms::ConfigError("experiment.report",
                            "missing required config key: experiment.report");
  const fmms::Report report =
      fmms::run_experiment(cfg, cfg.experiment.report, opt.verbose);
  std::printf("wrote %s (%zu rows)\n", cfg.experiment.report.c_str(),
              report.rows.size());
  return 0;
}

int cmd_report(const Options& opt) {
  const fmms::Config cfg = load(opt);
  if (cfg.experiment.report.empty())
    throw fmms::ConfigError("experiment.report",
                            "missing required config key: experiment.report");
  const fmms::Report report = fmms::read_report_csv(cfg.experiment.report);

  std::printf("%-10s %-10s %-6s %-6s %3s %6s %8s %8s %8s\n", "surrogate",
              "target", "method", "strat", "T", "seed", "TR_ASR", "IR_ASR",
              "queries");
  for (const auto& r : report.rows) {
    std::printf("%-10s %-10s %-6s %-6s %3d %6llu %8.4f %8.4f %8.1f\n",
                r.surrogate.c_str(), r.target.c_str(), r.method.c_str(),
                r.strategy.c_str(), r.rounds,
                static_cast<unsigned long long>(r.seed), r.tr_asr, r.ir_asr,
                r.mean_target_queries);
  }

  // Seed-averaged summary per cell.
  struct Acc {
    double tr = 0.0, ir = 0.0;
    int n = 0;
  };
  std::map<std::string, Acc> cells;
  for (const auto& r : report.rows) {
    auto& acc = cells[r.surrogate + "->" + r.target + " " + r.method + "/" +
                      r.strategy + " T=" + std::to_string(r.rounds)];
    acc.tr += r.tr_asr;
    acc.ir += r.ir_asr;
    acc.n += 1;
  }
  std::printf("\nmean over seeds:\n");
  for (const auto& [key, acc] : cells)
    std::printf("  %-46s TR %.4f  IR %.4f\n", key.c_str(), acc.tr / acc.n,
                acc.ir / acc.n);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FMMS lab: adversarial attacks on toy image-text retrieval"};
  app.require_subcommand(1);

  Options opt;
  const char* env_config = std::getenv("FMMS_CONFIG");
  if (env_config) opt.config_path = env_config;
  app.add_option("-c,--config", opt.config_path, "Path to the JSON config")
      ->required(env_config == nullptr);
  auto* seed_opt =
      app.add_option("--seed", opt.seed, "Override the global seed");
  app.add_flag("-v,--verbose", opt.verbose, "Log per-row progress to stderr");

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset");
  auto* train = app.add_subcommand("train", "Train the configured models");
  auto* attack = app.add_subcommand("attack", "Run the experiment grid");
  auto* report = app.add_subcommand("report", "Summarize an existing report");

  CLI11_PARSE(app, argc, argv);
  opt.has_seed = seed_opt->count() > 0;

  try {
    if (gen->parsed()) return cmd_gen_data(opt);
    if (train->parsed()) return cmd_train(opt);
    if (attack->parsed()) return cmd_attack(opt);
    if (report->parsed()) return cmd_report(opt);
  } catch (const fmms::ConfigError& e) {
    std::fprintf(stderr, "config error [%s]: %s\n", e.key.c_str(), e.what());
    return 2;
  } catch (const fmms::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
