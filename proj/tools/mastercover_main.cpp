// Command line front end: runs configured attack experiments on synthetic
// worlds, resumes checkpointed runs and prints resolved configurations.

#include <CLI11.hpp>
#include <iostream>

#include "mastercover/config.hpp"
#include "mastercover/experiment.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"master-sample dictionary attacks on embedding verification, on synthetic worlds"};
  app.require_subcommand(1);

  std::string config_path;
  std::string output_override;
  std::uint64_t seed_override = 0;
  bool has_seed_override = false;
  std::int64_t halt_after = 0;
  int verbosity = 1;

  auto* run = app.add_subcommand("run", "run the configured experiment");
  run->add_option("-c,--config", config_path, "config file (defaults apply when omitted)");
  run->add_option("-o,--out", output_override, "output directory override");
  auto* seed_opt = run->add_option("-s,--seed", seed_override, "root seed override");
  run->add_option("--halt-after-iters", halt_after,
                  "stop after this many optimizer iterations, leaving a resumable checkpoint");
  run->add_flag_function("-v,--verbose", [&](std::int64_t) { verbosity = 2; }, "verbose progress");
  run->add_flag_function("-q,--quiet", [&](std::int64_t) { verbosity = 0; }, "errors only");

  std::string checkpoint_path;
  auto* resume = app.add_subcommand("resume", "continue a checkpointed experiment");
  resume->add_option("checkpoint", checkpoint_path, "checkpoint file written by 'run'")
      ->required();
  resume->add_flag_function("-v,--verbose", [&](std::int64_t) { verbosity = 2; },
                            "verbose progress");
  resume->add_flag_function("-q,--quiet", [&](std::int64_t) { verbosity = 0; }, "errors only");

  std::string dump_config_path;
  auto* dump = app.add_subcommand("dump-config", "print the fully resolved configuration");
  dump->add_option("-c,--config", dump_config_path, "config file (defaults apply when omitted)");

  CLI11_PARSE(app, argc, argv);
  has_seed_override = seed_opt->count() > 0;

  try {
    if (dump->parsed()) {
      mastercover::ExperimentConfig cfg;
      if (!dump_config_path.empty()) cfg = mastercover::load_config_file(dump_config_path);
      mastercover::validate(cfg);
      std::cout << mastercover::dump_config(cfg);
      return kExitOk;
    }

    mastercover::RunOptions opts;
    opts.verbosity = verbosity;
    opts.halt_after_iterations = halt_after;

    if (run->parsed()) {
      mastercover::ExperimentConfig cfg;
      if (!config_path.empty()) cfg = mastercover::load_config_file(config_path);
      if (has_seed_override) cfg.root_seed = seed_override;
      if (!output_override.empty()) cfg.output_dir = output_override;
      mastercover::validate(cfg);
      const auto outcome = mastercover::run_experiment(cfg, opts, std::cerr);
      if (outcome.halted) std::cerr << "run halted before completion\n";
      return kExitOk;
    }

    const auto outcome = mastercover::resume_experiment(checkpoint_path, opts, std::cerr);
    if (outcome.halted) std::cerr << "run halted before completion\n";
    return kExitOk;
  } catch (const mastercover::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
