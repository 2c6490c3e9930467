#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace mastercover {

enum class Metric { kEuclidean, kCosine };

std::string to_string(Metric m);
Metric metric_from_string(const std::string& s);

/// Cosine distance is 1 - cos(a, b); zero vectors are rejected.
double metric_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b, Metric metric);

/// The match predicate: 1 iff distance(a, b) < theta, strictly. Symmetric.
bool matches(const Eigen::VectorXd& a, const Eigen::VectorXd& b, Metric metric, double theta);

/// Frozen enrollment set: one embedding row per subject.
class EmbeddingGallery {
 public:
  EmbeddingGallery() = default;
  EmbeddingGallery(Eigen::MatrixXd embeddings, Metric metric, std::vector<int> subject_ids);

  int subject_count() const { return static_cast<int>(embeddings_.rows()); }
  int dim() const { return static_cast<int>(embeddings_.cols()); }
  Metric metric() const { return metric_; }
  const Eigen::MatrixXd& embeddings() const { return embeddings_; }
  const std::vector<int>& subject_ids() const { return subject_ids_; }

  /// Distance from a probe embedding to every enrolled subject.
  Eigen::VectorXd distances_to(const Eigen::VectorXd& embedding) const;

  /// Row indices matched by the probe at threshold theta.
  std::vector<int> matched_rows(const Eigen::VectorXd& embedding, double theta) const;

  EmbeddingGallery subset(const std::vector<int>& rows) const;
  EmbeddingGallery without_rows(const std::vector<int>& rows) const;

 private:
  Eigen::MatrixXd embeddings_;
  Metric metric_ = Metric::kEuclidean;
  std::vector<int> subject_ids_;
  Eigen::VectorXd sq_norms_;  // cached per-row squared norms
  Eigen::VectorXd norms_;
};

using Encoder = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

/// Everything the attack objective needs: gallery, decision threshold and
/// the latent-to-embedding black box.
struct VerificationProblem {
  EmbeddingGallery gallery;
  double theta = 0.0;
  Encoder encoder;
  int latent_dim = 0;
};

/// Normalized minimization objective: 1 - matched/n, in [0, 1]. Zero means
/// the candidate is accepted as every enrolled subject.
double coverage_fitness(const Eigen::VectorXd& z, const VerificationProblem& problem);

/// Percentage of the gallery incorrectly matched by an embedding.
/// msc == 100 * (1 - coverage_fitness) holds exactly for the same candidate.
double msc(const Eigen::VectorXd& embedding, const EmbeddingGallery& gallery, double theta);

struct PairScores {
  std::vector<double> genuine;   // same-subject pair distances
  std::vector<double> impostor;  // cross-subject pair distances
};

struct FarFrr {
  double far;
  double frr;
};

/// far = fraction of impostor distances < theta, frr = fraction of genuine
/// distances >= theta.
FarFrr far_frr(const PairScores& scores, double theta);

struct FarThreshold {
  double theta;
  bool attainable;  // false when fewer impostor pairs than 1/target exist
};

/// Largest cut point (impostor distances, their midpoints, and a point just
/// above the maximum) whose recomputed FAR stays at or below the target.
FarThreshold threshold_at_far(const PairScores& scores, double target_far);

struct EerThreshold {
  double theta;
  double eer;
  double far;
  double frr;
};

/// Cut point minimizing |FAR - FRR|, ties toward the smaller threshold.
EerThreshold threshold_at_eer(const PairScores& scores);

/// Rescales distances into [0,1] for the combined grid: cosine by /2,
/// euclidean by the observed maximum. `scale` maps normalized thresholds
/// back to raw distances.
struct NormalizedScores {
  PairScores scores;
  double scale;
};
NormalizedScores normalize_unit_range(const PairScores& scores, Metric metric);

struct CombinedThreshold {
  double theta_a;
  double theta_b;
  double eer;
  double far;
  double frr;
};

/// Exhaustive grid over [0,1]^2 at the given resolution; a pair must pass
/// both models to be accepted. Pair lists of the two models must be aligned
/// per subject pair. Ties toward lexicographically smaller thresholds.
CombinedThreshold combined_threshold_grid(const PairScores& scores_a, const PairScores& scores_b,
                                          int grid_resolution);

struct MasterEntry {
  Eigen::VectorXd latent;
  Eigen::VectorXd embedding;
  double marginal_msc;            // percentage of the original gallery
  std::vector<int> covered_ids;   // disjoint across entries
};

struct CoverageReport {
  std::vector<MasterEntry> masters;
  double cumulative_coverage = 0.0;  // == sum of marginals
};

using InnerOptimizer = std::function<Eigen::VectorXd(const VerificationProblem&, std::uint64_t)>;

/// Iterated master-sample search: optimize against the subjects not yet
/// covered, record the matched set, remove it, repeat. Each iteration keeps
/// the best of `seeds_per_iter` independently seeded inner runs, judged by
/// coverage of the current reduced gallery. Iterations that cover nothing
/// contribute an empty entry and are kept in the report.
CoverageReport greedy_coverage(const VerificationProblem& problem, int max_iter,
                               const InnerOptimizer& inner, int seeds_per_iter,
                               std::uint64_t seed_base);

struct KmeansResult {
  Eigen::MatrixXd centroids;     // k x d
  std::vector<int> assignments;  // per input row
  int rounds = 0;
};

/// Lloyd iterations with k-means++ seeding. The cosine variant is spherical:
/// rows and centroids are unit-normalized, assignment is by maximal dot
/// product and centroids are normalized means. Empty clusters are re-seeded
/// at the point farthest from its assigned centroid.
KmeansResult kmeans(const Eigen::MatrixXd& points, int k, Metric metric, std::uint64_t seed,
                    int max_rounds = 100);

/// Percentage of gallery subjects within theta of at least one centroid: the
/// embedding-space upper-bound estimate of dictionary coverage.
double centroid_coverage(const EmbeddingGallery& gallery, const Eigen::MatrixXd& centroids,
                         double theta);

/// Per-cluster baseline: split the gallery into k clusters, optimize one
/// master per cluster against that cluster only, then report marginals
/// against the full gallery with double counting removed in cluster order.
CoverageReport clustered_coverage_search(const VerificationProblem& problem, int k,
                                         const InnerOptimizer& inner, int seeds_per_iter,
                                         std::uint64_t seed_base);

/// Conjunctive two-model target: a probe must match under both encoders.
struct PairedVerificationProblem {
  EmbeddingGallery gallery_a;  // rows aligned with gallery_b per subject
  EmbeddingGallery gallery_b;
  double theta_a = 0.0;
  double theta_b = 0.0;
  Encoder encoder_a;
  Encoder encoder_b;
  int latent_dim = 0;
};

double combined_coverage_fitness(const Eigen::VectorXd& z, const PairedVerificationProblem& problem);
double combined_msc(const Eigen::VectorXd& embedding_a, const Eigen::VectorXd& embedding_b,
                    const PairedVerificationProblem& problem);

using PairedInnerOptimizer =
    std::function<Eigen::VectorXd(const PairedVerificationProblem&, std::uint64_t)>;

CoverageReport greedy_coverage(const PairedVerificationProblem& problem, int max_iter,
                               const PairedInnerOptimizer& inner, int seeds_per_iter,
                               std::uint64_t seed_base);

}  // namespace mastercover
