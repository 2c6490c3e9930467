#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mastercover/config.hpp"
#include "mastercover/coverage.hpp"
#include "mastercover/synthworld.hpp"

namespace mastercover {

struct SplitIdentities {
  std::vector<int> train;
  std::vector<int> test;
};

/// Seeded shuffle, then a floor split at ratio num:den (train share is
/// n*num/(num+den), rounded down).
SplitIdentities split_identities(int n, std::int64_t ratio_num, std::int64_t ratio_den,
                                 std::uint64_t seed);

/// Keeps only pairs whose identities all fall in the training split.
PairScores select_train_pairs(const PairScores& scores, const std::vector<int>& genuine_identity,
                              const std::vector<int>& impostor_a,
                              const std::vector<int>& impostor_b,
                              const std::vector<bool>& in_train);

/// One single-master optimization run: all artifacts derived from one seed
/// via fixed substreams (strategy, predictor init, auxiliary sampling).
struct SingleRunResult {
  Eigen::VectorXd best_x;
  double best_fitness = 0.0;
  std::vector<std::string> trace_lines;  // newline-delimited structured records
  std::int64_t evaluations = 0;
  std::int64_t iterations = 0;
  bool halted = false;
};

/// Optional persistence hooks for resumable runs. `restore` supplies a blob
/// captured by an earlier `save`; the engine then continues bit-identically.
struct SingleRunHooks {
  std::function<std::optional<std::string>()> restore;
  std::function<void(const std::string& blob)> save;
  std::int64_t checkpoint_every = 0;       // iterations between saves; 0 = only on halt
  std::function<bool()> keep_going;        // return false to halt after the current iteration
};

SingleRunResult run_single_master(const VerificationProblem& problem, OptimizerChoice choice,
                                  std::int64_t budget, int population, double sigma0,
                                  const FilterConfig& filter, std::uint64_t seed,
                                  const SingleRunHooks* hooks = nullptr);

SingleRunResult run_single_master(const PairedVerificationProblem& problem,
                                  OptimizerChoice choice, std::int64_t budget, int population,
                                  double sigma0, const FilterConfig& filter, std::uint64_t seed,
                                  const SingleRunHooks* hooks = nullptr);

struct SummaryRow {
  CoverageMode mode;
  OptimizerChoice optimizer;
  double train_msc = 0.0;
  double test_msc = 0.0;
};

struct ExperimentOutcome {
  std::vector<SummaryRow> rows;
  bool halted = false;
  std::string checkpoint_path;
};

struct RunOptions {
  std::int64_t halt_after_iterations = 0;  // 0: run to completion
  int verbosity = 1;
};

/// Runs the configured experiment and writes all artifacts under the output
/// directory: resolved config snapshot, calibration record, per-run traces,
/// coverage reports, master latents and the summary table. Throws
/// ConfigError for configuration problems and std::runtime_error for
/// runtime failures; exit-code mapping happens in the CLI.
ExperimentOutcome run_experiment(const ExperimentConfig& cfg, const RunOptions& opts,
                                 std::ostream& log);

/// Continues a checkpointed experiment bit-identically. The configuration is
/// taken from the checkpoint itself. A checkpoint of a finished run rewrites
/// the final artifacts and succeeds as a no-op.
ExperimentOutcome resume_experiment(const std::string& checkpoint_path, const RunOptions& opts,
                                    std::ostream& log);

/// FNV-1a over the raw bytes, hex-encoded; used to fingerprint latents in
/// coverage reports.
std::string latent_checksum(const Eigen::VectorXd& v);

}  // namespace mastercover
