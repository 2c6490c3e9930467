#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <memory>
#include <vector>

#include "mastercover/coverage.hpp"

namespace mastercover {

/// Fixed random nonlinear map from latent space to embedding space: a stack
/// of seeded affine layers with tanh between them, optionally projected onto
/// the unit sphere for cosine-metric worlds. Deterministic per seed and
/// immutable after construction, so it is safe to evaluate from many threads.
class SyntheticEncoder {
 public:
  /// `gain` sets the hidden pre-activation scale for unit-variance latents.
  /// Small gains keep the reachable population in the near-linear zone of
  /// tanh, so saturated corners sit far from every enrolled embedding and
  /// leaving the prior shell costs fitness instead of freezing it.
  SyntheticEncoder(int latent_dim, int embedding_dim, int layers, int hidden_dim,
                   bool normalize_output, std::uint64_t weight_seed, double gain = 0.35);

  Eigen::VectorXd operator()(const Eigen::VectorXd& z) const;

  int latent_dim() const { return latent_dim_; }
  int embedding_dim() const { return embedding_dim_; }
  bool normalized() const { return normalize_; }

  /// Product of layer Frobenius norms: an upper bound on the Lipschitz
  /// constant of the un-normalized map (tanh is 1-Lipschitz).
  double lipschitz_bound() const;

 private:
  int latent_dim_;
  int embedding_dim_;
  bool normalize_;
  std::vector<Eigen::MatrixXd> weights_;
  std::vector<Eigen::VectorXd> biases_;
};

/// Defaults are calibrated so the attack is meaningful at desk scale: the
/// hidden layer is a narrow bottleneck (identities live on a low-dimensional
/// manifold, like faces do), anchor scales keep the population inside the
/// latent prior's shell, and the intra-cluster spread leaves the verification
/// threshold covering sub-cluster neighborhoods rather than nothing or
/// everything.
struct WorldConfig {
  int n_identities = 500;
  int cluster_count = 10;
  int latent_dim = 512;
  int embedding_dim = 128;
  int encoder_layers = 2;   // 2 or 3 affine maps
  int encoder_hidden = 8;   // bottleneck width: the effective manifold dimension
  double encoder_gain = 0.35;
  double cluster_separation = 0.8;  // per-coordinate scale of cluster centers
  double cluster_spread = 0.6;      // per-coordinate intra-cluster anchor spread
  double noise_scale = 0.25;        // intra-identity probe noise
  int genuine_probes = 2;           // probes per identity for calibration
  int impostor_pairs = 20000;
  Metric metric = Metric::kEuclidean;
  bool normalize_embeddings = false;
  std::uint64_t seed = 1;
};

void validate(const WorldConfig& cfg);

/// One enrollment embedding per identity plus calibration pair distances.
struct World {
  SyntheticEncoder encoder;
  EmbeddingGallery gallery;
  PairScores scores;
  Eigen::MatrixXd anchors;          // n_identities x latent_dim
  Eigen::MatrixXd cluster_centers;  // cluster_count x latent_dim
  std::vector<int> impostor_a, impostor_b;  // identity pair behind each impostor distance
  std::vector<int> genuine_identity;        // identity behind each genuine distance
  bool degenerate_genuine = false;  // noise scale 0: every genuine distance is 0
};

World build_world(const WorldConfig& cfg);

/// Two encoders with independent weights over the same identity anchors;
/// pair lists are aligned index-by-index so a combined threshold search can
/// require both models to accept the same pair.
struct PairedWorld {
  SyntheticEncoder encoder_a;
  SyntheticEncoder encoder_b;
  EmbeddingGallery gallery_a;
  EmbeddingGallery gallery_b;
  PairScores scores_a;
  PairScores scores_b;
  Eigen::MatrixXd anchors;
  Eigen::MatrixXd cluster_centers;
  std::vector<int> impostor_a, impostor_b;
  std::vector<int> genuine_identity;
  bool degenerate_genuine = false;
};

PairedWorld paired_world(const WorldConfig& cfg);

/// Problem wrappers; the encoder is shared, not copied, so the greedy
/// search can shrink galleries cheaply.
VerificationProblem make_problem(const World& world, double theta);
VerificationProblem make_problem(std::shared_ptr<const SyntheticEncoder> encoder,
                                 EmbeddingGallery gallery, double theta);
PairedVerificationProblem make_paired_problem(const PairedWorld& world, double theta_a,
                                              double theta_b);

}  // namespace mastercover
