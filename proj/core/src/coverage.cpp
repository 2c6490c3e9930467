#include "mastercover/coverage.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <stdexcept>

#include "mastercover/rng.hpp"

namespace mastercover {

std::string to_string(Metric m) {
  return m == Metric::kEuclidean ? "euclidean" : "cosine";
}

Metric metric_from_string(const std::string& s) {
  if (s == "euclidean") return Metric::kEuclidean;
  if (s == "cosine") return Metric::kCosine;
  throw std::invalid_argument("unknown metric '" + s + "'");
}

double metric_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b, Metric metric) {
  if (a.size() != b.size()) throw std::invalid_argument("metric_distance: dimension mismatch");
  if (!a.allFinite() || !b.allFinite())
    throw std::invalid_argument("metric_distance: non-finite input");
  if (metric == Metric::kEuclidean) return (a - b).norm();
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0)
    throw std::invalid_argument("metric_distance: cosine distance undefined for zero vector");
  return 1.0 - a.dot(b) / (na * nb);
}

bool matches(const Eigen::VectorXd& a, const Eigen::VectorXd& b, Metric metric, double theta) {
  return metric_distance(a, b, metric) < theta;
}

// ---------------------------------------------------------------------------
// EmbeddingGallery

EmbeddingGallery::EmbeddingGallery(Eigen::MatrixXd embeddings, Metric metric,
                                   std::vector<int> subject_ids)
    : embeddings_(std::move(embeddings)), metric_(metric), subject_ids_(std::move(subject_ids)) {
  if (embeddings_.rows() == 0 || embeddings_.cols() == 0)
    throw std::invalid_argument("EmbeddingGallery: empty embedding matrix");
  if (static_cast<Eigen::Index>(subject_ids_.size()) != embeddings_.rows())
    throw std::invalid_argument("EmbeddingGallery: one subject id per embedding required");
  if (!embeddings_.allFinite())
    throw std::invalid_argument("EmbeddingGallery: embeddings must be finite");
  std::set<int> unique_ids(subject_ids_.begin(), subject_ids_.end());
  if (unique_ids.size() != subject_ids_.size())
    throw std::invalid_argument("EmbeddingGallery: subject ids must be unique");

  sq_norms_ = embeddings_.rowwise().squaredNorm();
  norms_ = sq_norms_.cwiseSqrt();
  if (metric_ == Metric::kCosine && (norms_.array() == 0.0).any())
    throw std::invalid_argument("EmbeddingGallery: cosine metric requires nonzero embeddings");
}

Eigen::VectorXd EmbeddingGallery::distances_to(const Eigen::VectorXd& embedding) const {
  if (embedding.size() != embeddings_.cols())
    throw std::invalid_argument("EmbeddingGallery: probe dimension mismatch");
  Eigen::VectorXd dots = embeddings_ * embedding;
  if (metric_ == Metric::kEuclidean) {
    const double probe_sq = embedding.squaredNorm();
    return (sq_norms_.array() - 2.0 * dots.array() + probe_sq).max(0.0).sqrt().matrix();
  }
  const double probe_norm = embedding.norm();
  if (probe_norm == 0.0)
    throw std::invalid_argument("EmbeddingGallery: cosine distance undefined for zero probe");
  return (1.0 - dots.array() / (norms_.array() * probe_norm)).matrix();
}

std::vector<int> EmbeddingGallery::matched_rows(const Eigen::VectorXd& embedding,
                                                double theta) const {
  const Eigen::VectorXd d = distances_to(embedding);
  std::vector<int> rows;
  for (int i = 0; i < subject_count(); ++i)
    if (d[i] < theta) rows.push_back(i);
  return rows;
}

EmbeddingGallery EmbeddingGallery::subset(const std::vector<int>& rows) const {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), embeddings_.cols());
  std::vector<int> ids;
  ids.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    m.row(static_cast<Eigen::Index>(i)) = embeddings_.row(rows[i]);
    ids.push_back(subject_ids_[static_cast<std::size_t>(rows[i])]);
  }
  return EmbeddingGallery(std::move(m), metric_, std::move(ids));
}

EmbeddingGallery EmbeddingGallery::without_rows(const std::vector<int>& rows) const {
  std::vector<bool> drop(static_cast<std::size_t>(subject_count()), false);
  for (int r : rows) drop[static_cast<std::size_t>(r)] = true;
  std::vector<int> keep;
  for (int i = 0; i < subject_count(); ++i)
    if (!drop[static_cast<std::size_t>(i)]) keep.push_back(i);
  return subset(keep);
}

// ---------------------------------------------------------------------------
// Objective and score

double coverage_fitness(const Eigen::VectorXd& z, const VerificationProblem& problem) {
  if (problem.gallery.subject_count() == 0)
    throw std::invalid_argument("coverage_fitness: empty gallery");
  const Eigen::VectorXd e = problem.encoder(z);
  const auto matched = problem.gallery.matched_rows(e, problem.theta);
  return 1.0 - static_cast<double>(matched.size()) /
                   static_cast<double>(problem.gallery.subject_count());
}

double msc(const Eigen::VectorXd& embedding, const EmbeddingGallery& gallery, double theta) {
  const auto matched = gallery.matched_rows(embedding, theta);
  return 100.0 * static_cast<double>(matched.size()) /
         static_cast<double>(gallery.subject_count());
}

// ---------------------------------------------------------------------------
// Threshold calibration

FarFrr far_frr(const PairScores& scores, double theta) {
  if (scores.genuine.empty() || scores.impostor.empty())
    throw std::invalid_argument("far_frr: both pair lists must be non-empty");
  std::int64_t fa = 0, fr = 0;
  for (double d : scores.impostor)
    if (d < theta) ++fa;
  for (double d : scores.genuine)
    if (d >= theta) ++fr;
  return {static_cast<double>(fa) / static_cast<double>(scores.impostor.size()),
          static_cast<double>(fr) / static_cast<double>(scores.genuine.size())};
}

namespace {

// Distinct sorted values, their midpoints, and one point just above the max.
std::vector<double> cut_points(const std::vector<double>& values) {
  std::vector<double> v = values;
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  std::vector<double> cuts;
  cuts.reserve(2 * v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    cuts.push_back(v[i]);
    if (i + 1 < v.size()) cuts.push_back(0.5 * (v[i] + v[i + 1]));
  }
  cuts.push_back(std::nextafter(v.back(), std::numeric_limits<double>::infinity()));
  return cuts;
}

double far_at(const std::vector<double>& sorted_impostor, double theta) {
  const auto below = std::lower_bound(sorted_impostor.begin(), sorted_impostor.end(), theta) -
                     sorted_impostor.begin();
  return static_cast<double>(below) / static_cast<double>(sorted_impostor.size());
}

double frr_at(const std::vector<double>& sorted_genuine, double theta) {
  const auto below = std::lower_bound(sorted_genuine.begin(), sorted_genuine.end(), theta) -
                     sorted_genuine.begin();
  return 1.0 - static_cast<double>(below) / static_cast<double>(sorted_genuine.size());
}

}  // namespace

FarThreshold threshold_at_far(const PairScores& scores, double target_far) {
  if (scores.impostor.empty())
    throw std::invalid_argument("threshold_at_far: impostor list must be non-empty");
  if (!(target_far > 0.0) || !(target_far <= 1.0))
    throw std::invalid_argument("threshold_at_far: target must be in (0, 1]");

  std::vector<double> imp = scores.impostor;
  std::sort(imp.begin(), imp.end());
  const bool attainable =
      target_far * static_cast<double>(imp.size()) >= 1.0 - 1e-12;

  const auto cuts = cut_points(scores.impostor);
  double best = imp.front();  // far == 0 there, always admissible
  for (double c : cuts)
    if (far_at(imp, c) <= target_far && c > best) best = c;
  return {best, attainable};
}

EerThreshold threshold_at_eer(const PairScores& scores) {
  if (scores.genuine.empty() || scores.impostor.empty())
    throw std::invalid_argument("threshold_at_eer: both pair lists must be non-empty");
  std::vector<double> imp = scores.impostor;
  std::vector<double> gen = scores.genuine;
  std::sort(imp.begin(), imp.end());
  std::sort(gen.begin(), gen.end());

  std::vector<double> all = scores.impostor;
  all.insert(all.end(), scores.genuine.begin(), scores.genuine.end());
  const auto cuts = cut_points(all);

  EerThreshold best{0.0, 0.0, 0.0, 0.0};
  double best_gap = std::numeric_limits<double>::infinity();
  for (double c : cuts) {
    const double fa = far_at(imp, c);
    const double fr = frr_at(gen, c);
    const double gap = std::abs(fa - fr);
    if (gap < best_gap) {  // strict: ties keep the smaller threshold
      best_gap = gap;
      best = {c, 0.5 * (fa + fr), fa, fr};
    }
  }
  return best;
}

NormalizedScores normalize_unit_range(const PairScores& scores, Metric metric) {
  if (scores.genuine.empty() || scores.impostor.empty())
    throw std::invalid_argument("normalize_unit_range: both pair lists must be non-empty");
  double scale;
  if (metric == Metric::kCosine) {
    scale = 2.0;  // cosine distance lives in [0, 2]
  } else {
    scale = 0.0;
    for (double d : scores.genuine) scale = std::max(scale, d);
    for (double d : scores.impostor) scale = std::max(scale, d);
    if (scale == 0.0) scale = 1.0;
  }
  NormalizedScores out;
  out.scale = scale;
  out.scores.genuine.reserve(scores.genuine.size());
  out.scores.impostor.reserve(scores.impostor.size());
  for (double d : scores.genuine) out.scores.genuine.push_back(d / scale);
  for (double d : scores.impostor) out.scores.impostor.push_back(d / scale);
  return out;
}

CombinedThreshold combined_threshold_grid(const PairScores& scores_a, const PairScores& scores_b,
                                          int grid_resolution) {
  if (scores_a.genuine.empty() || scores_a.impostor.empty() || scores_b.genuine.empty() ||
      scores_b.impostor.empty())
    throw std::invalid_argument("combined_threshold_grid: empty pair list");
  if (scores_a.genuine.size() != scores_b.genuine.size() ||
      scores_a.impostor.size() != scores_b.impostor.size())
    throw std::invalid_argument(
        "combined_threshold_grid: pair lists must be aligned per subject pair");
  if (grid_resolution < 2)
    throw std::invalid_argument("combined_threshold_grid: resolution must be >= 2");
  auto in_unit = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double d) { return d >= 0.0 && d <= 1.0; });
  };
  if (!in_unit(scores_a.genuine) || !in_unit(scores_a.impostor) || !in_unit(scores_b.genuine) ||
      !in_unit(scores_b.impostor))
    throw std::invalid_argument("combined_threshold_grid: distances must be normalized to [0, 1]");

  const int r = grid_resolution;
  std::vector<double> grid(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) grid[static_cast<std::size_t>(i)] = static_cast<double>(i) / (r - 1);

  // k(v): index of the first grid threshold strictly above v; pairs binned at
  // (k_a, k_b) are accepted by every grid point (i >= k_a, j >= k_b).
  auto bin = [&](double v) {
    return static_cast<int>(std::upper_bound(grid.begin(), grid.end(), v) - grid.begin());
  };
  auto histogram = [&](const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<std::int64_t> h(static_cast<std::size_t>((r + 1) * (r + 1)), 0);
    for (std::size_t p = 0; p < a.size(); ++p)
      ++h[static_cast<std::size_t>(bin(a[p]) * (r + 1) + bin(b[p]))];
    // 2D prefix sums: h[i][j] becomes the count of pairs accepted at (i, j).
    for (int i = 0; i <= r; ++i)
      for (int j = 1; j <= r; ++j) h[static_cast<std::size_t>(i * (r + 1) + j)] += h[static_cast<std::size_t>(i * (r + 1) + j - 1)];
    for (int i = 1; i <= r; ++i)
      for (int j = 0; j <= r; ++j) h[static_cast<std::size_t>(i * (r + 1) + j)] += h[static_cast<std::size_t>((i - 1) * (r + 1) + j)];
    return h;
  };
  const auto acc_imp = histogram(scores_a.impostor, scores_b.impostor);
  const auto acc_gen = histogram(scores_a.genuine, scores_b.genuine);
  const double n_imp = static_cast<double>(scores_a.impostor.size());
  const double n_gen = static_cast<double>(scores_a.genuine.size());

  CombinedThreshold best{0.0, 0.0, 0.0, 0.0, 0.0};
  double best_gap = std::numeric_limits<double>::infinity();
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < r; ++j) {
      const double fa = static_cast<double>(acc_imp[static_cast<std::size_t>(i * (r + 1) + j)]) / n_imp;
      const double fr = 1.0 - static_cast<double>(acc_gen[static_cast<std::size_t>(i * (r + 1) + j)]) / n_gen;
      const double gap = std::abs(fa - fr);
      if (gap < best_gap) {
        best_gap = gap;
        best = {grid[static_cast<std::size_t>(i)], grid[static_cast<std::size_t>(j)],
                0.5 * (fa + fr), fa, fr};
      }
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Coverage searches

namespace {

std::vector<int> combined_matched_rows(const PairedVerificationProblem& p,
                                       const Eigen::VectorXd& ea, const Eigen::VectorXd& eb) {
  const Eigen::VectorXd da = p.gallery_a.distances_to(ea);
  const Eigen::VectorXd db = p.gallery_b.distances_to(eb);
  std::vector<int> rows;
  for (int i = 0; i < p.gallery_a.subject_count(); ++i)
    if (da[i] < p.theta_a && db[i] < p.theta_b) rows.push_back(i);
  return rows;
}

template <typename Problem, typename Inner, typename Reduce, typename Matcher, typename Embed,
          typename Ids, typename Count>
CoverageReport greedy_driver(Problem current, int max_iter, const Inner& inner,
                             int seeds_per_iter, std::uint64_t seed_base, const Reduce& reduce,
                             const Matcher& matched, const Embed& embed, const Ids& ids,
                             const Count& count, int original_count) {
  CoverageReport report;
  for (int iter = 0; iter < max_iter; ++iter) {
    if (count(current) == 0) break;  // everything covered, nothing to optimize against

    Eigen::VectorXd best_z;
    std::vector<int> best_rows;
    bool have = false;
    for (int s = 0; s < seeds_per_iter; ++s) {
      const std::uint64_t seed = derive_seed(seed_base, static_cast<std::uint64_t>(iter),
                                             static_cast<std::uint64_t>(s));
      Eigen::VectorXd z = inner(current, seed);
      std::vector<int> rows = matched(current, z);
      if (!have || rows.size() > best_rows.size()) {
        best_z = std::move(z);
        best_rows = std::move(rows);
        have = true;
      }
    }

    MasterEntry entry;
    entry.latent = best_z;
    entry.embedding = embed(current, best_z);
    entry.marginal_msc =
        100.0 * static_cast<double>(best_rows.size()) / static_cast<double>(original_count);
    for (int row : best_rows) entry.covered_ids.push_back(ids(current)[static_cast<std::size_t>(row)]);
    report.cumulative_coverage += entry.marginal_msc;
    const bool all_covered = static_cast<int>(best_rows.size()) == count(current);
    report.masters.push_back(std::move(entry));

    if (all_covered) break;
    if (!best_rows.empty()) current = reduce(current, best_rows);
  }
  return report;
}

}  // namespace

CoverageReport greedy_coverage(const VerificationProblem& problem, int max_iter,
                               const InnerOptimizer& inner, int seeds_per_iter,
                               std::uint64_t seed_base) {
  if (max_iter < 1) throw std::invalid_argument("greedy_coverage: max_iter must be >= 1");
  if (seeds_per_iter < 1) throw std::invalid_argument("greedy_coverage: seeds_per_iter must be >= 1");
  if (problem.gallery.subject_count() == 0)
    throw std::invalid_argument("greedy_coverage: empty gallery");

  return greedy_driver(
      problem, max_iter, inner, seeds_per_iter, seed_base,
      [](const VerificationProblem& p, const std::vector<int>& rows) {
        VerificationProblem out = p;
        out.gallery = p.gallery.without_rows(rows);
        return out;
      },
      [](const VerificationProblem& p, const Eigen::VectorXd& z) {
        return p.gallery.matched_rows(p.encoder(z), p.theta);
      },
      [](const VerificationProblem& p, const Eigen::VectorXd& z) { return p.encoder(z); },
      [](const VerificationProblem& p) -> const std::vector<int>& {
        return p.gallery.subject_ids();
      },
      [](const VerificationProblem& p) { return p.gallery.subject_count(); },
      problem.gallery.subject_count());
}

CoverageReport greedy_coverage(const PairedVerificationProblem& problem, int max_iter,
                               const PairedInnerOptimizer& inner, int seeds_per_iter,
                               std::uint64_t seed_base) {
  if (max_iter < 1) throw std::invalid_argument("greedy_coverage: max_iter must be >= 1");
  if (seeds_per_iter < 1) throw std::invalid_argument("greedy_coverage: seeds_per_iter must be >= 1");
  if (problem.gallery_a.subject_count() != problem.gallery_b.subject_count())
    throw std::invalid_argument("greedy_coverage: paired galleries must be aligned");
  if (problem.gallery_a.subject_count() == 0)
    throw std::invalid_argument("greedy_coverage: empty gallery");

  return greedy_driver(
      problem, max_iter, inner, seeds_per_iter, seed_base,
      [](const PairedVerificationProblem& p, const std::vector<int>& rows) {
        PairedVerificationProblem out = p;
        out.gallery_a = p.gallery_a.without_rows(rows);
        out.gallery_b = p.gallery_b.without_rows(rows);
        return out;
      },
      [](const PairedVerificationProblem& p, const Eigen::VectorXd& z) {
        return combined_matched_rows(p, p.encoder_a(z), p.encoder_b(z));
      },
      [](const PairedVerificationProblem& p, const Eigen::VectorXd& z) { return p.encoder_a(z); },
      [](const PairedVerificationProblem& p) -> const std::vector<int>& {
        return p.gallery_a.subject_ids();
      },
      [](const PairedVerificationProblem& p) { return p.gallery_a.subject_count(); },
      problem.gallery_a.subject_count());
}

double combined_coverage_fitness(const Eigen::VectorXd& z,
                                 const PairedVerificationProblem& problem) {
  if (problem.gallery_a.subject_count() == 0)
    throw std::invalid_argument("combined_coverage_fitness: empty gallery");
  const auto rows = combined_matched_rows(problem, problem.encoder_a(z), problem.encoder_b(z));
  return 1.0 - static_cast<double>(rows.size()) /
                   static_cast<double>(problem.gallery_a.subject_count());
}

double combined_msc(const Eigen::VectorXd& embedding_a, const Eigen::VectorXd& embedding_b,
                    const PairedVerificationProblem& problem) {
  const auto rows = combined_matched_rows(problem, embedding_a, embedding_b);
  return 100.0 * static_cast<double>(rows.size()) /
         static_cast<double>(problem.gallery_a.subject_count());
}

// ---------------------------------------------------------------------------
// K-means

namespace {

double cluster_distance_sq(const Eigen::VectorXd& a, const Eigen::VectorXd& b, Metric metric) {
  if (metric == Metric::kEuclidean) return (a - b).squaredNorm();
  const double d = 1.0 - a.dot(b);  // inputs are unit vectors here
  return d * d;
}

}  // namespace

KmeansResult kmeans(const Eigen::MatrixXd& points, int k, Metric metric, std::uint64_t seed,
                    int max_rounds) {
  const int n = static_cast<int>(points.rows());
  const int d = static_cast<int>(points.cols());
  if (k < 1) throw std::invalid_argument("kmeans: k must be >= 1");
  if (k > n) throw std::invalid_argument("kmeans: k must not exceed the number of points");
  if (max_rounds < 1) throw std::invalid_argument("kmeans: max_rounds must be >= 1");

  Eigen::MatrixXd data = points;
  if (metric == Metric::kCosine) {
    for (int i = 0; i < n; ++i) {
      const double norm = data.row(i).norm();
      if (norm == 0.0) throw std::invalid_argument("kmeans: zero vector under cosine metric");
      data.row(i) /= norm;
    }
  }

  GaussianRng rng(seed);

  // k-means++ seeding, D^2 weighting in the active metric.
  std::vector<int> chosen;
  std::vector<bool> is_chosen(static_cast<std::size_t>(n), false);
  Eigen::VectorXd dist_sq = Eigen::VectorXd::Constant(n, std::numeric_limits<double>::infinity());
  {
    const int first = static_cast<int>(rng.integer(static_cast<std::uint64_t>(n)));
    chosen.push_back(first);
    is_chosen[static_cast<std::size_t>(first)] = true;
    for (int i = 0; i < n; ++i)
      dist_sq[i] = cluster_distance_sq(data.row(i).transpose(), data.row(first).transpose(), metric);
    while (static_cast<int>(chosen.size()) < k) {
      double total = 0.0;
      for (int i = 0; i < n; ++i)
        if (!is_chosen[static_cast<std::size_t>(i)]) total += dist_sq[i];
      int pick = -1;
      if (total > 0.0) {
        double u = rng.uniform() * total;
        for (int i = 0; i < n; ++i) {
          if (is_chosen[static_cast<std::size_t>(i)]) continue;
          u -= dist_sq[i];
          if (u < 0.0) {
            pick = i;
            break;
          }
        }
      }
      if (pick < 0) {  // all remaining points coincide with a center
        for (int i = 0; i < n; ++i)
          if (!is_chosen[static_cast<std::size_t>(i)]) {
            pick = i;
            break;
          }
      }
      chosen.push_back(pick);
      is_chosen[static_cast<std::size_t>(pick)] = true;
      for (int i = 0; i < n; ++i)
        dist_sq[i] = std::min(dist_sq[i], cluster_distance_sq(data.row(i).transpose(),
                                                              data.row(pick).transpose(), metric));
    }
  }

  Eigen::MatrixXd centroids(k, d);
  for (int j = 0; j < k; ++j) centroids.row(j) = data.row(chosen[static_cast<std::size_t>(j)]);

  KmeansResult result;
  result.assignments.assign(static_cast<std::size_t>(n), -1);

  for (int round = 0; round < max_rounds; ++round) {
    // Assignment step.
    bool changed = false;
    for (int i = 0; i < n; ++i) {
      int best = 0;
      if (metric == Metric::kEuclidean) {
        double best_d = (data.row(i) - centroids.row(0)).squaredNorm();
        for (int j = 1; j < k; ++j) {
          const double dj = (data.row(i) - centroids.row(j)).squaredNorm();
          if (dj < best_d) {
            best_d = dj;
            best = j;
          }
        }
      } else {
        double best_dot = data.row(i).dot(centroids.row(0));
        for (int j = 1; j < k; ++j) {
          const double dj = data.row(i).dot(centroids.row(j));
          if (dj > best_dot) {
            best_dot = dj;
            best = j;
          }
        }
      }
      if (result.assignments[static_cast<std::size_t>(i)] != best) {
        result.assignments[static_cast<std::size_t>(i)] = best;
        changed = true;
      }
    }
    result.rounds = round + 1;
    if (!changed) break;

    // Update step.
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, d);
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (int i = 0; i < n; ++i) {
      sums.row(result.assignments[static_cast<std::size_t>(i)]) += data.row(i);
      ++counts[static_cast<std::size_t>(result.assignments[static_cast<std::size_t>(i)])];
    }
    std::vector<bool> reseeded(static_cast<std::size_t>(n), false);
    for (int j = 0; j < k; ++j) {
      if (counts[static_cast<std::size_t>(j)] == 0) {
        // Re-seed at the point currently farthest from its own centroid.
        int far_idx = -1;
        double far_d = -1.0;
        for (int i = 0; i < n; ++i) {
          if (reseeded[static_cast<std::size_t>(i)]) continue;
          const int a = result.assignments[static_cast<std::size_t>(i)];
          const double dd = cluster_distance_sq(data.row(i).transpose(),
                                                centroids.row(a).transpose(), metric);
          if (dd > far_d) {
            far_d = dd;
            far_idx = i;
          }
        }
        centroids.row(j) = data.row(far_idx);
        reseeded[static_cast<std::size_t>(far_idx)] = true;
        continue;
      }
      centroids.row(j) = sums.row(j) / counts[static_cast<std::size_t>(j)];
      if (metric == Metric::kCosine) {
        const double norm = centroids.row(j).norm();
        if (norm > 0.0)
          centroids.row(j) /= norm;
        else
          centroids.row(j) = data.row(static_cast<int>(rng.integer(static_cast<std::uint64_t>(n))));
      }
    }
  }

  result.centroids = std::move(centroids);
  return result;
}

double centroid_coverage(const EmbeddingGallery& gallery, const Eigen::MatrixXd& centroids,
                         double theta) {
  if (centroids.rows() == 0) throw std::invalid_argument("centroid_coverage: no centroids");
  std::vector<bool> covered(static_cast<std::size_t>(gallery.subject_count()), false);
  for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
    const Eigen::VectorXd d = gallery.distances_to(centroids.row(c).transpose());
    for (int i = 0; i < gallery.subject_count(); ++i)
      if (d[i] < theta) covered[static_cast<std::size_t>(i)] = true;
  }
  const auto hit = std::count(covered.begin(), covered.end(), true);
  return 100.0 * static_cast<double>(hit) / static_cast<double>(gallery.subject_count());
}

CoverageReport clustered_coverage_search(const VerificationProblem& problem, int k,
                                         const InnerOptimizer& inner, int seeds_per_iter,
                                         std::uint64_t seed_base) {
  if (k < 1) throw std::invalid_argument("clustered_coverage_search: k must be >= 1");
  if (seeds_per_iter < 1)
    throw std::invalid_argument("clustered_coverage_search: seeds_per_iter must be >= 1");
  const int n = problem.gallery.subject_count();
  if (n == 0) throw std::invalid_argument("clustered_coverage_search: empty gallery");

  const auto clusters = kmeans(problem.gallery.embeddings(), k, problem.gallery.metric(),
                               derive_seed(seed_base, 0xC1CAULL), 100);

  CoverageReport report;
  std::vector<bool> covered(static_cast<std::size_t>(n), false);
  for (int j = 0; j < k; ++j) {
    std::vector<int> members;
    for (int i = 0; i < n; ++i)
      if (clusters.assignments[static_cast<std::size_t>(i)] == j) members.push_back(i);
    if (members.empty()) {
      report.masters.push_back({Eigen::VectorXd(), Eigen::VectorXd(), 0.0, {}});
      continue;
    }

    VerificationProblem sub = problem;
    sub.gallery = problem.gallery.subset(members);

    Eigen::VectorXd best_z;
    std::size_t best_count = 0;
    bool have = false;
    for (int s = 0; s < seeds_per_iter; ++s) {
      const std::uint64_t seed = derive_seed(seed_base, static_cast<std::uint64_t>(j),
                                             static_cast<std::uint64_t>(s));
      Eigen::VectorXd z = inner(sub, seed);
      const auto rows = sub.gallery.matched_rows(sub.encoder(z), sub.theta);
      if (!have || rows.size() > best_count) {
        best_z = std::move(z);
        best_count = rows.size();
        have = true;
      }
    }

    // Marginal against the full gallery, with already-covered subjects
    // removed in cluster order.
    MasterEntry entry;
    entry.latent = best_z;
    entry.embedding = problem.encoder(best_z);
    const auto full_rows = problem.gallery.matched_rows(entry.embedding, problem.theta);
    for (int row : full_rows) {
      if (!covered[static_cast<std::size_t>(row)]) {
        covered[static_cast<std::size_t>(row)] = true;
        entry.covered_ids.push_back(problem.gallery.subject_ids()[static_cast<std::size_t>(row)]);
      }
    }
    entry.marginal_msc =
        100.0 * static_cast<double>(entry.covered_ids.size()) / static_cast<double>(n);
    report.cumulative_coverage += entry.marginal_msc;
    report.masters.push_back(std::move(entry));
  }
  return report;
}

}  // namespace mastercover
