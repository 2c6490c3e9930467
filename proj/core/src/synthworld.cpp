#include "mastercover/synthworld.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "mastercover/rng.hpp"

namespace mastercover {

namespace {

// Substream tags under the world seed.
enum : std::uint64_t {
  kCentersStream = 1,
  kAssignStream = 2,
  kAnchorsStream = 3,
  kProbesStream = 4,
  kImpostorStream = 5,
  kEncoderStream = 6,
  kEncoderBStream = 7,
};

Eigen::MatrixXd gaussian_matrix(int rows, int cols, GaussianRng& rng) {
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

}  // namespace

SyntheticEncoder::SyntheticEncoder(int latent_dim, int embedding_dim, int layers, int hidden_dim,
                                   bool normalize_output, std::uint64_t weight_seed, double gain)
    : latent_dim_(latent_dim), embedding_dim_(embedding_dim), normalize_(normalize_output) {
  if (latent_dim < 1 || embedding_dim < 1 || hidden_dim < 1)
    throw std::invalid_argument("SyntheticEncoder: dimensions must be positive");
  if (layers < 2 || layers > 3)
    throw std::invalid_argument("SyntheticEncoder: layers must be 2 or 3");
  if (!(gain > 0.0)) throw std::invalid_argument("SyntheticEncoder: gain must be positive");

  std::vector<int> sizes;
  sizes.push_back(latent_dim);
  for (int l = 0; l < layers - 1; ++l) sizes.push_back(hidden_dim);
  sizes.push_back(embedding_dim);

  GaussianRng rng(weight_seed);
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const int fan_in = sizes[l];
    const int fan_out = sizes[l + 1];
    // Hidden pre-activations get the gain; the output layer stays at unit
    // fan-in scaling.
    const double scale =
        (l + 2 < sizes.size() ? gain : 1.0) / std::sqrt(static_cast<double>(fan_in));
    Eigen::MatrixXd w = gaussian_matrix(fan_out, fan_in, rng) * scale;
    Eigen::VectorXd b(fan_out);
    const double bias_scale = l + 2 < sizes.size() ? 0.1 * gain : 0.1;
    for (int i = 0; i < fan_out; ++i) b[i] = bias_scale * rng.normal();
    weights_.push_back(std::move(w));
    biases_.push_back(std::move(b));
  }
}

Eigen::VectorXd SyntheticEncoder::operator()(const Eigen::VectorXd& z) const {
  if (z.size() != latent_dim_)
    throw std::invalid_argument("SyntheticEncoder: wrong latent dimension");
  Eigen::VectorXd h = z;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    h = weights_[l] * h + biases_[l];
    if (l + 1 < weights_.size()) h = h.array().tanh().matrix();
  }
  if (normalize_) {
    const double norm = h.norm();
    if (norm == 0.0) throw std::domain_error("SyntheticEncoder: zero embedding cannot be normalized");
    h /= norm;
  }
  return h;
}

double SyntheticEncoder::lipschitz_bound() const {
  double l = 1.0;
  for (const auto& w : weights_) l *= w.norm();  // Frobenius norm bounds the operator norm
  return l;
}

void validate(const WorldConfig& cfg) {
  if (cfg.n_identities < 2) throw std::invalid_argument("WorldConfig: need at least 2 identities");
  if (cfg.cluster_count < 1) throw std::invalid_argument("WorldConfig: need at least 1 cluster");
  if (cfg.cluster_count > cfg.n_identities)
    throw std::invalid_argument("WorldConfig: more clusters than identities");
  if (cfg.latent_dim < 2 || cfg.embedding_dim < 1)
    throw std::invalid_argument("WorldConfig: bad dimensions");
  if (cfg.encoder_layers < 2 || cfg.encoder_layers > 3)
    throw std::invalid_argument("WorldConfig: encoder layers must be 2 or 3");
  if (cfg.encoder_hidden < 1) throw std::invalid_argument("WorldConfig: encoder hidden size");
  if (cfg.cluster_separation < 0.0 || cfg.cluster_spread < 0.0 || cfg.noise_scale < 0.0)
    throw std::invalid_argument("WorldConfig: scales must be non-negative");
  if (cfg.genuine_probes < 1) throw std::invalid_argument("WorldConfig: need >= 1 genuine probe");
  if (cfg.impostor_pairs < 1) throw std::invalid_argument("WorldConfig: need >= 1 impostor pair");
}

namespace {

struct PopulationDraw {
  Eigen::MatrixXd centers;
  Eigen::MatrixXd anchors;
  Eigen::MatrixXd probes;        // (n_identities * genuine_probes) x latent_dim
  std::vector<int> genuine_identity;
  std::vector<int> impostor_a, impostor_b;
};

PopulationDraw draw_population(const WorldConfig& cfg) {
  PopulationDraw out;
  GaussianRng centers_rng(derive_seed(cfg.seed, kCentersStream));
  out.centers = cfg.cluster_separation *
                gaussian_matrix(cfg.cluster_count, cfg.latent_dim, centers_rng);

  GaussianRng assign_rng(derive_seed(cfg.seed, kAssignStream));
  GaussianRng anchor_rng(derive_seed(cfg.seed, kAnchorsStream));
  out.anchors.resize(cfg.n_identities, cfg.latent_dim);
  for (int i = 0; i < cfg.n_identities; ++i) {
    const auto cluster = static_cast<int>(assign_rng.integer(static_cast<std::uint64_t>(cfg.cluster_count)));
    for (int j = 0; j < cfg.latent_dim; ++j)
      out.anchors(i, j) = out.centers(cluster, j) + cfg.cluster_spread * anchor_rng.normal();
  }

  GaussianRng probe_rng(derive_seed(cfg.seed, kProbesStream));
  out.probes.resize(static_cast<Eigen::Index>(cfg.n_identities) * cfg.genuine_probes, cfg.latent_dim);
  out.genuine_identity.reserve(static_cast<std::size_t>(out.probes.rows()));
  for (int i = 0; i < cfg.n_identities; ++i) {
    for (int p = 0; p < cfg.genuine_probes; ++p) {
      const Eigen::Index row = static_cast<Eigen::Index>(i) * cfg.genuine_probes + p;
      for (int j = 0; j < cfg.latent_dim; ++j)
        out.probes(row, j) = out.anchors(i, j) + cfg.noise_scale * probe_rng.normal();
      out.genuine_identity.push_back(i);
    }
  }

  GaussianRng imp_rng(derive_seed(cfg.seed, kImpostorStream));
  out.impostor_a.reserve(static_cast<std::size_t>(cfg.impostor_pairs));
  out.impostor_b.reserve(static_cast<std::size_t>(cfg.impostor_pairs));
  for (int p = 0; p < cfg.impostor_pairs; ++p) {
    const auto a = static_cast<int>(imp_rng.integer(static_cast<std::uint64_t>(cfg.n_identities)));
    auto b = static_cast<int>(imp_rng.integer(static_cast<std::uint64_t>(cfg.n_identities - 1)));
    if (b >= a) ++b;
    out.impostor_a.push_back(a);
    out.impostor_b.push_back(b);
  }
  return out;
}

EmbeddingGallery embed_gallery(const SyntheticEncoder& enc, const Eigen::MatrixXd& anchors,
                               Metric metric) {
  Eigen::MatrixXd g(anchors.rows(), enc.embedding_dim());
  for (Eigen::Index i = 0; i < anchors.rows(); ++i)
    g.row(i) = enc(anchors.row(i).transpose()).transpose();
  std::vector<int> ids(static_cast<std::size_t>(anchors.rows()));
  std::iota(ids.begin(), ids.end(), 0);
  return EmbeddingGallery(std::move(g), metric, std::move(ids));
}

PairScores score_pairs(const SyntheticEncoder& enc, const EmbeddingGallery& gallery,
                       const PopulationDraw& pop, Metric metric) {
  PairScores scores;
  scores.genuine.reserve(pop.genuine_identity.size());
  for (std::size_t p = 0; p < pop.genuine_identity.size(); ++p) {
    const Eigen::VectorXd probe_emb = enc(pop.probes.row(static_cast<Eigen::Index>(p)).transpose());
    const Eigen::VectorXd anchor_emb =
        gallery.embeddings().row(pop.genuine_identity[p]).transpose();
    scores.genuine.push_back(metric_distance(anchor_emb, probe_emb, metric));
  }
  scores.impostor.reserve(pop.impostor_a.size());
  for (std::size_t p = 0; p < pop.impostor_a.size(); ++p) {
    const Eigen::VectorXd ea = gallery.embeddings().row(pop.impostor_a[p]).transpose();
    const Eigen::VectorXd eb = gallery.embeddings().row(pop.impostor_b[p]).transpose();
    scores.impostor.push_back(metric_distance(ea, eb, metric));
  }
  return scores;
}

}  // namespace

World build_world(const WorldConfig& cfg) {
  validate(cfg);
  const auto pop = draw_population(cfg);
  SyntheticEncoder enc(cfg.latent_dim, cfg.embedding_dim, cfg.encoder_layers, cfg.encoder_hidden,
                       cfg.normalize_embeddings, derive_seed(cfg.seed, kEncoderStream));
  EmbeddingGallery gallery = embed_gallery(enc, pop.anchors, cfg.metric);
  PairScores scores = score_pairs(enc, gallery, pop, cfg.metric);
  World w{std::move(enc), std::move(gallery), std::move(scores), pop.anchors,
          pop.centers,    pop.impostor_a,     pop.impostor_b,    pop.genuine_identity,
          cfg.noise_scale == 0.0};
  return w;
}

PairedWorld paired_world(const WorldConfig& cfg) {
  validate(cfg);
  const auto pop = draw_population(cfg);
  SyntheticEncoder enc_a(cfg.latent_dim, cfg.embedding_dim, cfg.encoder_layers, cfg.encoder_hidden,
                         cfg.normalize_embeddings, derive_seed(cfg.seed, kEncoderStream));
  SyntheticEncoder enc_b(cfg.latent_dim, cfg.embedding_dim, cfg.encoder_layers, cfg.encoder_hidden,
                         cfg.normalize_embeddings, derive_seed(cfg.seed, kEncoderBStream));
  EmbeddingGallery ga = embed_gallery(enc_a, pop.anchors, cfg.metric);
  EmbeddingGallery gb = embed_gallery(enc_b, pop.anchors, cfg.metric);
  PairScores sa = score_pairs(enc_a, ga, pop, cfg.metric);
  PairScores sb = score_pairs(enc_b, gb, pop, cfg.metric);
  PairedWorld w{std::move(enc_a), std::move(enc_b), std::move(ga),     std::move(gb),
                std::move(sa),    std::move(sb),    pop.anchors,       pop.centers,
                pop.impostor_a,   pop.impostor_b,   pop.genuine_identity,
                cfg.noise_scale == 0.0};
  return w;
}

VerificationProblem make_problem(std::shared_ptr<const SyntheticEncoder> encoder,
                                 EmbeddingGallery gallery, double theta) {
  VerificationProblem p;
  p.latent_dim = encoder->latent_dim();
  p.gallery = std::move(gallery);
  p.theta = theta;
  p.encoder = [encoder](const Eigen::VectorXd& z) { return (*encoder)(z); };
  return p;
}

VerificationProblem make_problem(const World& world, double theta) {
  return make_problem(std::make_shared<SyntheticEncoder>(world.encoder), world.gallery, theta);
}

PairedVerificationProblem make_paired_problem(const PairedWorld& world, double theta_a,
                                              double theta_b) {
  PairedVerificationProblem p;
  p.latent_dim = world.encoder_a.latent_dim();
  p.gallery_a = world.gallery_a;
  p.gallery_b = world.gallery_b;
  p.theta_a = theta_a;
  p.theta_b = theta_b;
  auto ea = std::make_shared<SyntheticEncoder>(world.encoder_a);
  auto eb = std::make_shared<SyntheticEncoder>(world.encoder_b);
  p.encoder_a = [ea](const Eigen::VectorXd& z) { return (*ea)(z); };
  p.encoder_b = [eb](const Eigen::VectorXd& z) { return (*eb)(z); };
  return p;
}

}  // namespace mastercover
