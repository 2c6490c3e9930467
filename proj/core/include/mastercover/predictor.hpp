#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <vector>

#include "mastercover/evolution.hpp"
#include "mastercover/rng.hpp"

namespace mastercover {

/// Bounded store of evaluated candidates. Eviction is uniform over the
/// non-best entries, so the best candidate seen so far always survives.
class ReplayMemory {
 public:
  struct Entry {
    Eigen::VectorXd z;
    double fitness;
  };

  explicit ReplayMemory(std::int64_t capacity);

  void insert(Eigen::VectorXd z, double fitness, GaussianRng& rng);

  std::int64_t size() const { return static_cast<std::int64_t>(entries_.size()); }
  std::int64_t capacity() const { return capacity_; }
  bool empty() const { return entries_.empty(); }
  const Entry& entry(std::int64_t i) const { return entries_[static_cast<std::size_t>(i)]; }
  const Entry& best_entry() const;

  /// Nearest-rank percentile of the stored fitness values: the value at rank
  /// ceil(p/100 * N) of the ascending sort.
  double percentile_fitness(double p) const;

  void save(std::ostream& os) const;
  static ReplayMemory load(std::istream& is);

 private:
  std::int64_t capacity_;
  std::vector<Entry> entries_;
  std::size_t best_index_ = 0;
};

/// Labels every entry against the current p-percentile: 1 for strictly lower
/// fitness, 0 otherwise. Labels are relative to the memory state and are
/// recomputed from scratch on every call.
std::vector<int> relabel(const ReplayMemory& memory, double p);

double nearest_rank_percentile(std::vector<double> values, double p);

/// What the generation loop needs from a candidate scorer. PredictorNet is
/// the real implementation; tests can plug in adversarial stand-ins.
class SuccessPredictor {
 public:
  virtual ~SuccessPredictor() = default;
  /// Inference-mode scores in (0,1), one per pool row.
  virtual Eigen::VectorXd score_batch(const Eigen::MatrixXd& pool) = 0;
  /// One epoch of minibatch updates over the labeled set; returns mean loss.
  virtual double train_epoch(const Eigen::MatrixXd& samples,
                             const std::vector<int>& labels, GaussianRng& rng) = 0;
  /// Fresh parameters and optimizer state from the seeded initializer.
  virtual void reinitialize() = 0;
};

/// Offsets into the flat parameter vector, for serialization and for the
/// finite-difference tests.
struct NetLayout {
  int input_dim, h1, h2;
  std::size_t w1, b1, gamma, beta, w2, b2, w3, b3, total;
};

/// Three dense layers (256, 128, 1): batch norm after the first affine, ELU
/// on both hidden layers, sigmoid output. Trained with Adam (lr 1e-3) on
/// minibatches of 32 under binary cross entropy. Scalar is float in
/// production; the double instantiation exists for gradient verification.
template <typename Scalar>
class PredictorNetT {
 public:
  using Vec = Eigen::Vector<Scalar, Eigen::Dynamic>;
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  PredictorNetT(int input_dim, std::uint64_t init_seed);

  const NetLayout& layout() const { return layout_; }
  std::uint64_t init_seed() const { return init_seed_; }
  int reinit_count() const { return reinit_count_; }

  /// Seed the n-th reinitialization draws from; reinitialize() is equivalent
  /// to constructing a fresh net with this seed.
  static std::uint64_t reinit_seed(std::uint64_t base_seed, int count);

  /// Inference-mode forward (running statistics), clamped to (0,1).
  Vec score(const Mat& inputs) const;

  /// One epoch over a shuffled copy of the labeled set. Returns the mean of
  /// the per-batch mean losses.
  double train_epoch(const Mat& inputs, const std::vector<int>& labels, GaussianRng& rng);

  void reinitialize();

  // Hooks for the gradient tests: training-mode loss and analytic gradient
  // with no side effects on parameters or running statistics.
  double loss_on_batch(const Mat& inputs, const std::vector<int>& labels) const;
  Vec gradient_on_batch(const Mat& inputs, const std::vector<int>& labels) const;

  const Vec& parameters() const { return params_; }
  void set_parameters(const Vec& p);
  const Vec& running_mean() const { return running_mean_; }
  const Vec& running_var() const { return running_var_; }

  std::uint64_t parameter_checksum() const;

  void save(std::ostream& os) const;
  static PredictorNetT load(std::istream& is);

 private:
  struct ForwardCache;
  void init_params(std::uint64_t seed);
  void forward(const Mat& inputs, bool training, ForwardCache& cache, bool update_running);
  double backward(const ForwardCache& cache, const std::vector<int>& labels, Vec& grad) const;

  NetLayout layout_;
  std::uint64_t init_seed_;
  int reinit_count_ = 0;
  Vec params_;
  Vec adam_m_, adam_v_;
  std::int64_t adam_t_ = 0;
  Vec running_mean_, running_var_;
};

using PredictorNet = PredictorNetT<float>;

extern template class PredictorNetT<float>;
extern template class PredictorNetT<double>;

/// Adapter that lets the double-precision loop machinery drive the float net.
class NetSuccessPredictor final : public SuccessPredictor {
 public:
  explicit NetSuccessPredictor(PredictorNet net) : net_(std::move(net)) {}

  Eigen::VectorXd score_batch(const Eigen::MatrixXd& pool) override;
  double train_epoch(const Eigen::MatrixXd& samples, const std::vector<int>& labels,
                     GaussianRng& rng) override;
  void reinitialize() override { net_.reinitialize(); }

  PredictorNet& net() { return net_; }
  const PredictorNet& net() const { return net_; }

 private:
  PredictorNet net_;
};

struct FilterConfig {
  int oversample = 1000;           // lambda'
  double percentile = 5.0;         // p, promising-class threshold
  double accuracy_threshold = 0.6; // tau_acc
  int patience = 20;               // T consecutive low-accuracy iterations
  double warmup_fraction = 0.05;
  std::int64_t memory_capacity = 5000;
};

void validate(const FilterConfig& cfg);

struct SelectedCandidate {
  int pool_index;
  double score;
};

/// Softmax over the raw scores, then `take` draws without replacement
/// proportional to the softmax weights.
std::vector<SelectedCandidate> sample_by_softmax(const Eigen::VectorXd& scores, int take,
                                                 GaussianRng& rng);

/// Scores the pool in inference mode and samples `take` distinct candidates.
std::vector<SelectedCandidate> filter_candidates(SuccessPredictor& predictor,
                                                 const std::vector<Candidate>& pool, int take,
                                                 GaussianRng& rng);

/// Fraction of candidates whose predictor score agrees with where their
/// fitness landed relative to the memory's p-percentile.
double audit_accuracy(const std::vector<double>& scores, const std::vector<double>& fitnesses,
                      const ReplayMemory& memory, double p);

struct AssistedIterationRecord {
  std::int64_t iteration;
  double best_fitness;
  std::int64_t memory_size;
  double accuracy;  // NaN when not audited (warm-up)
  bool reinitialized;
  double train_loss;
  bool filtered;
};

struct AssistedRunResult {
  Eigen::VectorXd best_x;
  double best_fitness = 0.0;
  std::vector<double> best_trace;
  std::vector<AssistedIterationRecord> records;
  std::int64_t evaluations = 0;
  int reinit_count = 0;
  int consecutive_low = 0;
  bool halted = false;
};

/// End-of-iteration view for checkpointing callbacks.
struct LoopSnapshot {
  const AssistedIterationRecord& record;
  const Eigen::VectorXd& best_x;
  double best_fitness;
  int consecutive_low;
  int reinit_count;
};

/// Resume/halt support: start at a later iteration with carried-over
/// counters; the callback may return false to stop after the current
/// iteration.
struct LoopControl {
  std::int64_t start_iteration = 0;
  double initial_best = std::numeric_limits<double>::infinity();
  Eigen::VectorXd initial_best_x;
  int initial_consecutive_low = 0;
  int initial_reinit_count = 0;
  std::function<bool(const LoopSnapshot&)> on_iteration;
};

/// The filtered generation loop. Warm-up iterations ask lambda candidates
/// directly and only train the predictor; afterwards each iteration asks for
/// `oversample` candidates, keeps lambda of them by predictor-guided
/// sampling, audits the predictor on the evaluated batch, trains one epoch
/// over the relabeled memory, and reinitializes the predictor after
/// `patience` consecutive low-accuracy audits. Only true objective
/// evaluations count against the budget: lambda per iteration, exactly as in
/// the unassisted strategy.
AssistedRunResult assisted_generation_loop(EvolutionState& state, SuccessPredictor& predictor,
                                           ReplayMemory& memory, const FilterConfig& cfg,
                                           ObjectiveHandle& objective, const RunBudget& budget,
                                           GaussianRng& aux_rng,
                                           const LoopControl* control = nullptr);

}  // namespace mastercover
