#include "mastercover/evolution.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "mastercover/serialize.hpp"

namespace mastercover {

namespace {
constexpr std::uint32_t kStateMagic = 0x4d435631;  // "MCV1"
}

ObjectiveHandle::ObjectiveHandle(int dimension, Fn fn)
    : dimension_(dimension), fn_(std::move(fn)) {
  if (dimension < 1) throw std::invalid_argument("ObjectiveHandle: dimension must be positive");
  if (!fn_) throw std::invalid_argument("ObjectiveHandle: missing function");
}

double ObjectiveHandle::evaluate(const Eigen::VectorXd& z) {
  if (z.size() != dimension_)
    throw std::invalid_argument("ObjectiveHandle: wrong candidate dimension");
  ++count_;
  const double f = fn_(z);
  if (!std::isfinite(f))
    throw EvolutionError("objective returned a non-finite value at evaluation " +
                         std::to_string(count_));
  return f;
}

int default_lambda(int dimension) {
  return 4 + static_cast<int>(std::floor(3.0 * std::log(static_cast<double>(dimension))));
}

EvolutionState lmmaes_init(int dimension, std::uint64_t seed,
                           const std::optional<Eigen::VectorXd>& initial_mean,
                           double initial_sigma,
                           std::optional<int> lambda_override) {
  if (dimension < 2) throw std::invalid_argument("lmmaes_init: dimension must be >= 2");
  if (!(initial_sigma > 0.0) || !std::isfinite(initial_sigma))
    throw std::invalid_argument("lmmaes_init: initial sigma must be positive and finite");

  EvolutionState s;
  const int n = dimension;
  s.lambda = lambda_override.value_or(default_lambda(n));
  if (s.lambda < 2) throw std::invalid_argument("lmmaes_init: lambda must be >= 2");
  s.mu = s.lambda / 2;
  if (s.mu < 1) throw std::invalid_argument("lmmaes_init: mu must be >= 1");

  if (initial_mean) {
    if (initial_mean->size() != n)
      throw std::invalid_argument("lmmaes_init: initial mean has wrong dimension");
    s.mean = *initial_mean;
  } else {
    s.mean = Eigen::VectorXd::Zero(n);
  }
  s.sigma = initial_sigma;
  s.path_sigma = Eigen::VectorXd::Zero(n);
  s.direction_vectors = Eigen::MatrixXd::Zero(s.lambda, n);
  s.iteration = 0;
  s.rng = GaussianRng(seed);

  // w_i proportional to ln(lambda/2 + 1/2) - ln(i), normalized to sum 1.
  s.weights = Eigen::VectorXd(s.mu);
  const double base = std::log(s.lambda / 2.0 + 0.5);
  for (int i = 0; i < s.mu; ++i) s.weights[i] = base - std::log(static_cast<double>(i + 1));
  s.weights /= s.weights.sum();
  s.mu_w = 1.0 / s.weights.squaredNorm();

  // Rates capped at 1 so that small dimensions stay well-defined; at the
  // intended scale (n >> lambda) the caps are inactive.
  s.c_sigma = std::min(1.0, 2.0 * s.lambda / static_cast<double>(n));
  s.d_sigma = 2.0;
  const int m = s.lambda;
  s.c_d = Eigen::VectorXd(m);
  s.c_c = Eigen::VectorXd(m);
  for (int j = 0; j < m; ++j) {
    s.c_d[j] = 1.0 / (std::pow(1.5, j) * n);
    s.c_c[j] = std::min(1.0, s.lambda / (std::pow(4.0, j) * n));
  }
  return s;
}

std::vector<Candidate> lmmaes_ask(EvolutionState& state, int count) {
  if (count < 1) throw std::invalid_argument("lmmaes_ask: count must be >= 1");
  const int n = state.dimension();
  const int active = static_cast<int>(std::min<std::int64_t>(state.iteration, state.lambda));

  std::vector<Candidate> out;
  out.reserve(static_cast<std::size_t>(count));
  Eigen::VectorXd d(n);
  for (int i = 0; i < count; ++i) {
    Candidate c;
    c.z = Eigen::VectorXd::NullaryExpr(n, [&](Eigen::Index) { return state.rng.normal(); });
    d = c.z;
    for (int j = 0; j < active; ++j) {
      const double proj = state.direction_vectors.row(j).dot(d);
      d = (1.0 - state.c_d[j]) * d + (state.c_d[j] * proj) * state.direction_vectors.row(j).transpose();
    }
    c.x = state.mean + state.sigma * d;
    out.push_back(std::move(c));
  }
  return out;
}

void lmmaes_tell(EvolutionState& state, const std::vector<EvaluatedCandidate>& batch) {
  const int n = state.dimension();
  if (static_cast<int>(batch.size()) != state.lambda)
    throw std::invalid_argument("lmmaes_tell: expected exactly lambda candidates");
  for (const auto& c : batch) {
    if (!std::isfinite(c.fitness))
      throw std::invalid_argument("lmmaes_tell: non-finite fitness");
    if (c.x.size() != n || c.z.size() != n)
      throw std::invalid_argument("lmmaes_tell: candidate dimension mismatch");
  }

  // Stable sort keeps supplied order among ties, which pins the recombination
  // result for constant fitness batches.
  std::vector<int> order(batch.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return batch[a].fitness < batch[b].fitness; });

  Eigen::VectorXd new_mean = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd wz = Eigen::VectorXd::Zero(n);
  for (int i = 0; i < state.mu; ++i) {
    const EvaluatedCandidate& c = batch[static_cast<std::size_t>(order[i])];
    new_mean += state.weights[i] * c.x;
    wz += state.weights[i] * c.z;
  }
  state.mean = new_mean;

  const double cs = state.c_sigma;
  state.path_sigma = (1.0 - cs) * state.path_sigma +
                     std::sqrt(state.mu_w * cs * (2.0 - cs)) * wz;

  for (int j = 0; j < state.lambda; ++j) {
    const double cc = state.c_c[j];
    state.direction_vectors.row(j) =
        (1.0 - cc) * state.direction_vectors.row(j) +
        std::sqrt(state.mu_w * cc * (2.0 - cc)) * wz.transpose();
  }

  const double ratio = state.path_sigma.squaredNorm() / static_cast<double>(n) - 1.0;
  state.sigma *= std::exp((cs / state.d_sigma) * ratio);
  ++state.iteration;

  if (!std::isfinite(state.sigma) || state.sigma < kSigmaFloor || state.sigma > kSigmaCeil)
    throw EvolutionError("step size left [" + std::to_string(kSigmaFloor) + ", " +
                         std::to_string(kSigmaCeil) + "] at iteration " +
                         std::to_string(state.iteration) + "; run terminated");
}

std::vector<Eigen::VectorXd> random_search_step(int dimension, GaussianRng& rng, int count) {
  if (dimension < 1) throw std::invalid_argument("random_search_step: dimension must be positive");
  if (count < 1) throw std::invalid_argument("random_search_step: count must be >= 1");
  std::vector<Eigen::VectorXd> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i)
    out.push_back(Eigen::VectorXd::NullaryExpr(dimension, [&](Eigen::Index) { return rng.normal(); }));
  return out;
}

std::vector<Eigen::VectorXd> random_search_step(int dimension, std::uint64_t seed, int count) {
  GaussianRng rng(seed);
  return random_search_step(dimension, rng, count);
}

std::vector<Candidate> RandomSearchOptimizer::ask() {
  std::vector<Candidate> out;
  out.reserve(static_cast<std::size_t>(batch_));
  for (auto& x : random_search_step(dimension_, rng_, batch_)) {
    Candidate c;
    c.z = x;  // the draw is the candidate
    c.x = std::move(x);
    out.push_back(std::move(c));
  }
  return out;
}

RunResult run_optimizer(Optimizer& opt, ObjectiveHandle& objective, const RunBudget& budget,
                        const RunControl* control) {
  if (budget.max_evaluations < 1)
    throw std::invalid_argument("run_optimizer: budget must be positive");

  RunResult res;
  res.best_fitness = std::numeric_limits<double>::infinity();
  if (control) {
    res.best_fitness = control->initial_best;
    res.best_x = control->initial_best_x;
  }

  const int lambda = opt.population_size();
  const std::int64_t start = objective.evaluation_count();
  auto remaining = [&] { return budget.max_evaluations - (objective.evaluation_count() - start); };

  if (remaining() < lambda) {
    // Not even one full generation: evaluate what the budget allows from the
    // initial population and report its best.
    auto cands = opt.ask();
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(cands.size()) && remaining() > 0; ++i) {
      const double f = objective.evaluate(cands[static_cast<std::size_t>(i)].x);
      if (f < res.best_fitness) {
        res.best_fitness = f;
        res.best_x = cands[static_cast<std::size_t>(i)].x;
      }
    }
    res.best_trace.push_back(res.best_fitness);
    res.evaluations = objective.evaluation_count() - start;
    return res;
  }

  std::int64_t generations = 0;
  while (remaining() >= lambda) {
    auto cands = opt.ask();
    std::vector<EvaluatedCandidate> batch;
    batch.reserve(cands.size());
    for (auto& c : cands) {
      const double f = objective.evaluate(c.x);
      if (f < res.best_fitness) {
        res.best_fitness = f;
        res.best_x = c.x;
      }
      batch.push_back({std::move(c.x), std::move(c.z), f});
    }
    opt.tell(batch);
    res.best_trace.push_back(res.best_fitness);
    ++generations;
    res.evaluations = objective.evaluation_count() - start;
    if (control && control->on_iteration && !control->on_iteration(generations, res)) {
      res.halted = true;
      return res;
    }
  }
  res.evaluations = objective.evaluation_count() - start;
  return res;
}

void EvolutionState::save(std::ostream& os) const {
  BinaryWriter w(os);
  w.u32(kStateMagic);
  w.u32(1);  // format version
  w.i64(iteration);
  w.u32(static_cast<std::uint32_t>(lambda));
  w.u32(static_cast<std::uint32_t>(mu));
  w.f64(sigma);
  w.f64(c_sigma);
  w.f64(d_sigma);
  w.f64(mu_w);
  w.vec(mean);
  w.vec(path_sigma);
  w.vec(weights);
  w.vec(c_d);
  w.vec(c_c);
  w.mat(direction_vectors);
  std::ostringstream rs;
  rng.save(rs);
  w.str(rs.str());
}

EvolutionState EvolutionState::load(std::istream& is) {
  BinaryReader r(is);
  if (r.u32() != kStateMagic) throw std::runtime_error("not an evolution state blob");
  const std::uint32_t version = r.u32();
  if (version != 1) throw std::runtime_error("unsupported evolution state version " + std::to_string(version));
  EvolutionState s;
  s.iteration = r.i64();
  s.lambda = static_cast<int>(r.u32());
  s.mu = static_cast<int>(r.u32());
  s.sigma = r.f64();
  s.c_sigma = r.f64();
  s.d_sigma = r.f64();
  s.mu_w = r.f64();
  s.mean = r.vec();
  s.path_sigma = r.vec();
  s.weights = r.vec();
  s.c_d = r.vec();
  s.c_c = r.vec();
  s.direction_vectors = r.mat();
  std::istringstream rs(r.str());
  s.rng.load(rs);
  if (s.lambda < 2 || s.mu < 1 || s.mean.size() == 0 ||
      s.direction_vectors.rows() != s.lambda || s.direction_vectors.cols() != s.mean.size())
    throw std::runtime_error("evolution state blob is inconsistent");
  return s;
}

bool EvolutionState::equals(const EvolutionState& other) const {
  return iteration == other.iteration && lambda == other.lambda && mu == other.mu &&
         sigma == other.sigma && mean == other.mean && path_sigma == other.path_sigma &&
         weights == other.weights && direction_vectors == other.direction_vectors &&
         rng == other.rng;
}

}  // namespace mastercover
