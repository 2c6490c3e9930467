#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mastercover/rng.hpp"

namespace mastercover {

/// Thrown when a run must stop with a diagnostic (step-size underflow,
/// non-finite objective value) instead of silently propagating NaNs.
class EvolutionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A black-box fitness function over R^n with an exact evaluation counter.
class ObjectiveHandle {
 public:
  using Fn = std::function<double(const Eigen::VectorXd&)>;

  ObjectiveHandle(int dimension, Fn fn);

  int dimension() const { return dimension_; }
  std::int64_t evaluation_count() const { return count_; }

  /// Counts exactly one evaluation per call. Throws EvolutionError on a
  /// non-finite result.
  double evaluate(const Eigen::VectorXd& z);

 private:
  int dimension_;
  Fn fn_;
  std::int64_t count_ = 0;
};

struct RunBudget {
  std::int64_t max_evaluations;
  std::uint64_t seed;
};

/// One sampled candidate: the search-space point and the raw standard-normal
/// draw it was built from. The raw draw must travel with the point so that a
/// filtered subset of an oversampled batch can still drive the strategy
/// update.
struct Candidate {
  Eigen::VectorXd x;
  Eigen::VectorXd z;
};

struct EvaluatedCandidate {
  Eigen::VectorXd x;
  Eigen::VectorXd z;
  double fitness;
};

/// Full strategy state of the limited-memory matrix adaptation ES.
/// Storage is O(m*n) with m = lambda direction vectors; there is no n x n
/// covariance anywhere.
struct EvolutionState {
  Eigen::VectorXd mean;
  double sigma = 1.0;
  Eigen::MatrixXd direction_vectors;  // m x n, row j is the j-th vector
  Eigen::VectorXd path_sigma;
  Eigen::VectorXd weights;            // mu recombination weights, sum 1
  int lambda = 0;
  int mu = 0;
  std::int64_t iteration = 0;
  GaussianRng rng;

  int dimension() const { return static_cast<int>(mean.size()); }

  // Learning rates, fixed by (dimension, lambda).
  double c_sigma = 0.0;
  double d_sigma = 2.0;
  double mu_w = 0.0;
  Eigen::VectorXd c_d;  // per-vector sampling rate, geometric decay 1.5^-j
  Eigen::VectorXd c_c;  // per-vector update rate, geometric decay 4^-j

  void save(std::ostream& os) const;
  static EvolutionState load(std::istream& is);
  bool equals(const EvolutionState& other) const;
};

/// Default population size 4 + floor(3 ln n); sigma floor that turns silent
/// step-size collapse into a diagnostic.
int default_lambda(int dimension);
inline constexpr double kSigmaFloor = 1e-20;
inline constexpr double kSigmaCeil = 1e20;

EvolutionState lmmaes_init(int dimension, std::uint64_t seed,
                           const std::optional<Eigen::VectorXd>& initial_mean = std::nullopt,
                           double initial_sigma = 1.0,
                           std::optional<int> lambda_override = std::nullopt);

/// Samples `count` candidates from the current search distribution. Does not
/// advance the iteration or touch distribution parameters; it does consume
/// random draws, so repeating a batch requires an explicit state copy.
std::vector<Candidate> lmmaes_ask(EvolutionState& state, int count);

/// Consumes exactly lambda evaluated candidates: stable-sorts by fitness,
/// recombines the mean over the mu best, adapts the step size by cumulative
/// path length, and updates the direction vectors at their per-vector rates.
void lmmaes_tell(EvolutionState& state, const std::vector<EvaluatedCandidate>& batch);

/// Baseline sampler: i.i.d. standard-normal candidates.
std::vector<Eigen::VectorXd> random_search_step(int dimension, GaussianRng& rng, int count);
std::vector<Eigen::VectorXd> random_search_step(int dimension, std::uint64_t seed, int count);

/// Ask/tell interface shared by all optimizers, so baselines can be added
/// without touching the runner or the coverage search.
class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual int population_size() const = 0;
  virtual std::vector<Candidate> ask() = 0;
  virtual void tell(const std::vector<EvaluatedCandidate>& batch) = 0;
  virtual std::int64_t iteration() const = 0;
};

class LmmaEsOptimizer final : public Optimizer {
 public:
  explicit LmmaEsOptimizer(EvolutionState state) : state_(std::move(state)) {}

  int population_size() const override { return state_.lambda; }
  std::vector<Candidate> ask() override { return lmmaes_ask(state_, state_.lambda); }
  void tell(const std::vector<EvaluatedCandidate>& batch) override { lmmaes_tell(state_, batch); }
  std::int64_t iteration() const override { return state_.iteration; }

  EvolutionState& state() { return state_; }
  const EvolutionState& state() const { return state_; }

 private:
  EvolutionState state_;
};

class RandomSearchOptimizer final : public Optimizer {
 public:
  RandomSearchOptimizer(int dimension, std::uint64_t seed, int batch_size)
      : dimension_(dimension), batch_(batch_size), rng_(seed) {
    if (dimension < 1 || batch_size < 1)
      throw std::invalid_argument("RandomSearchOptimizer: dimension and batch size must be positive");
  }

  int population_size() const override { return batch_; }
  std::vector<Candidate> ask() override;
  void tell(const std::vector<EvaluatedCandidate>&) override { ++iteration_; }
  std::int64_t iteration() const override { return iteration_; }

  GaussianRng& rng() { return rng_; }
  void set_iteration(std::int64_t it) { iteration_ = it; }

 private:
  int dimension_;
  int batch_;
  GaussianRng rng_;
  std::int64_t iteration_ = 0;
};

struct RunResult {
  Eigen::VectorXd best_x;
  double best_fitness = 0.0;
  std::vector<double> best_trace;  // best-so-far after each iteration
  std::int64_t evaluations = 0;
  bool halted = false;
};

/// Resumable-run support: seed the best-so-far from an earlier leg and get a
/// callback after every generation; returning false stops the run cleanly.
struct RunControl {
  double initial_best = std::numeric_limits<double>::infinity();
  Eigen::VectorXd initial_best_x;
  std::function<bool(std::int64_t generations_done, const RunResult& so_far)> on_iteration;
};

/// Runs full generations until the next one would exceed the budget. The
/// evaluation counter never exceeds max_evaluations.
RunResult run_optimizer(Optimizer& opt, ObjectiveHandle& objective, const RunBudget& budget,
                        const RunControl* control = nullptr);

}  // namespace mastercover
