#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "mastercover/predictor.hpp"
#include "mastercover/synthworld.hpp"

namespace mastercover {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class OptimizerChoice { kLmmaEs, kLmmaEsPredictor, kRandom };
enum class ThresholdPolicy { kFarTarget, kEer, kCombinedGrid };
enum class CoverageMode { kSingle, kGreedy, kClustered, kCombined };

std::string to_string(OptimizerChoice c);
std::string to_string(ThresholdPolicy p);
std::string to_string(CoverageMode m);

/// Filesystem-safe tag used in artifact names.
std::string file_tag(OptimizerChoice c);

struct ExperimentConfig {
  WorldConfig world;

  std::vector<OptimizerChoice> optimizers = {OptimizerChoice::kLmmaEsPredictor};
  std::int64_t budget = 26400;
  int population = 0;  // 0: 4 + floor(3 ln n)
  double initial_sigma = 1.0;

  FilterConfig filter;

  ThresholdPolicy threshold_policy = ThresholdPolicy::kEer;
  double far_target = 0.001;
  int grid_resolution = 100;

  CoverageMode mode = CoverageMode::kSingle;
  int coverage_iterations = 9;
  int coverage_clusters = 9;

  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::uint64_t root_seed = 1;
  std::string output_dir = "out";
  std::int64_t checkpoint_every = 200;  // iterations; 0 disables checkpoints
  std::int64_t train_ratio_num = 4038;
  std::int64_t train_ratio_den = 1711;
  bool write_traces = true;

  int resolved_population() const;
};

/// Parses the flat sectioned key=value format. Unknown sections or keys are
/// errors; every value is validated. Throws ConfigError.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);

/// Canonical resolved snapshot: derived values (population) are made
/// explicit. parse_config(dump_config(c)) reproduces c.
std::string dump_config(const ExperimentConfig& cfg);

/// Cross-field validation (budget vs population, split sizes, filter
/// consistency). Throws ConfigError.
void validate(const ExperimentConfig& cfg);

}  // namespace mastercover
