#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <sstream>

#include "mastercover/evolution.hpp"

using namespace mastercover;

namespace {

double sphere(const Eigen::VectorXd& x) { return x.squaredNorm(); }

RunResult run_sphere(Optimizer& opt, int dim, std::int64_t budget, const RunBudget& rb) {
  ObjectiveHandle obj(dim, sphere);
  (void)budget;
  return run_optimizer(opt, obj, rb);
}

}  // namespace

TEST_CASE("population size follows 4 + floor(3 ln n)") {
  CHECK(default_lambda(512) == 22);
  CHECK(default_lambda(10) == 10);
  auto s = lmmaes_init(512, 1);
  CHECK(s.lambda == 22);
  CHECK(s.mu == 11);
  CHECK(s.iteration == 0);
  CHECK(s.sigma == 1.0);
  CHECK(s.mean.isZero());
  CHECK(s.path_sigma.isZero());
  CHECK(s.direction_vectors.rows() == 22);  // m = lambda, storage O(m n)
  CHECK(s.direction_vectors.cols() == 512);
  CHECK(s.direction_vectors.isZero());
}

TEST_CASE("recombination weights are non-increasing and sum to one") {
  for (int dim : {2, 10, 100, 512, 2000}) {
    auto s = lmmaes_init(dim, 3);
    CHECK(std::abs(s.weights.sum() - 1.0) < 1e-12);
    for (int i = 0; i + 1 < s.mu; ++i) CHECK(s.weights[i] >= s.weights[i + 1]);
    CHECK(s.weights.minCoeff() > 0.0);
  }
}

TEST_CASE("init rejects bad arguments") {
  CHECK_THROWS_AS(lmmaes_init(1, 0), std::invalid_argument);
  CHECK_THROWS_AS(lmmaes_init(10, 0, std::nullopt, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(lmmaes_init(10, 0, std::nullopt, -1.0), std::invalid_argument);
  CHECK_THROWS_AS(lmmaes_init(10, 0, Eigen::VectorXd::Zero(5)), std::invalid_argument);
}

TEST_CASE("ask at initialization is an identity transform of the draws") {
  auto s = lmmaes_init(16, 7);
  auto cands = lmmaes_ask(s, 50);
  REQUIRE(cands.size() == 50);
  for (const auto& c : cands) CHECK((c.x - c.z).norm() == 0.0);  // mean 0, sigma 1
  CHECK(s.iteration == 0);  // ask never advances the strategy
}

TEST_CASE("ask supports oversampling and rejects bad counts") {
  auto s = lmmaes_init(8, 7, std::nullopt, 1.0, 22);
  CHECK(lmmaes_ask(s, 1000).size() == 1000);
  CHECK_THROWS_AS(lmmaes_ask(s, 0), std::invalid_argument);
}

TEST_CASE("two identical state copies produce identical candidate lists") {
  auto a = lmmaes_init(12, 9);
  auto b = a;
  auto ca = lmmaes_ask(a, 30);
  auto cb = lmmaes_ask(b, 30);
  for (std::size_t i = 0; i < ca.size(); ++i) {
    CHECK(ca[i].x == cb[i].x);
    CHECK(ca[i].z == cb[i].z);
  }
}

TEST_CASE("tell recombines the mu best with the stored weights") {
  auto s = lmmaes_init(3, 11, std::nullopt, 1.0, 4);
  REQUIRE(s.mu == 2);
  auto cands = lmmaes_ask(s, 4);
  std::vector<EvaluatedCandidate> batch;
  const double fits[4] = {3.0, 0.5, 2.0, 1.0};
  for (int i = 0; i < 4; ++i) batch.push_back({cands[i].x, cands[i].z, fits[i]});

  // Brute-force recombination oracle: mu best are indices 1 (0.5) and 3 (1.0).
  const Eigen::VectorXd expected =
      s.weights[0] * cands[1].x + s.weights[1] * cands[3].x;
  lmmaes_tell(s, batch);
  CHECK((s.mean - expected).norm() < 1e-14);
  CHECK(s.iteration == 1);
}

TEST_CASE("constant fitness ties break by supplied order") {
  auto s = lmmaes_init(4, 13, std::nullopt, 1.0, 4);
  auto cands = lmmaes_ask(s, 4);
  std::vector<EvaluatedCandidate> batch;
  for (int i = 0; i < 4; ++i) batch.push_back({cands[i].x, cands[i].z, 5.0});
  const Eigen::VectorXd expected = s.weights[0] * cands[0].x + s.weights[1] * cands[1].x;
  lmmaes_tell(s, batch);
  CHECK((s.mean - expected).norm() < 1e-14);
}

TEST_CASE("tell validates the batch") {
  auto s = lmmaes_init(4, 13, std::nullopt, 1.0, 4);
  auto cands = lmmaes_ask(s, 3);
  std::vector<EvaluatedCandidate> batch;
  for (auto& c : cands) batch.push_back({c.x, c.z, 1.0});
  CHECK_THROWS_AS(lmmaes_tell(s, batch), std::invalid_argument);  // count != lambda

  auto full = lmmaes_ask(s, 4);
  batch.clear();
  for (auto& c : full) batch.push_back({c.x, c.z, 1.0});
  batch[2].fitness = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(lmmaes_tell(s, batch), std::invalid_argument);
}

TEST_CASE("sphere n=10 converges below 1e-8 in 2000 iterations") {
  auto s = lmmaes_init(10, 1);
  ObjectiveHandle obj(10, sphere);
  double best = std::numeric_limits<double>::infinity();
  for (int it = 0; it < 2000; ++it) {
    auto cands = lmmaes_ask(s, s.lambda);
    std::vector<EvaluatedCandidate> batch;
    for (auto& c : cands) {
      const double f = obj.evaluate(c.x);
      best = std::min(best, f);
      batch.push_back({std::move(c.x), std::move(c.z), f});
    }
    lmmaes_tell(s, batch);
    if (best < 1e-10) break;
  }
  CHECK(best < 1e-8);
}

TEST_CASE("step size underflow terminates with a diagnostic, not NaN") {
  auto s = lmmaes_init(6, 3, std::nullopt, 1e-20, 4);
  // Zero draws shrink the path, so sigma falls below the floor on update.
  std::vector<EvaluatedCandidate> batch;
  for (int i = 0; i < 4; ++i)
    batch.push_back({Eigen::VectorXd::Zero(6), Eigen::VectorXd::Zero(6), 1.0});
  CHECK_THROWS_AS(lmmaes_tell(s, batch), EvolutionError);
}

TEST_CASE("run_optimizer respects the budget exactly and monotonically improves") {
  const int dim = 16;
  LmmaEsOptimizer opt(lmmaes_init(dim, 5));
  ObjectiveHandle obj(dim, sphere);
  const std::int64_t budget = 505;  // not a multiple of lambda
  auto res = run_optimizer(opt, obj, {budget, 5});
  CHECK(obj.evaluation_count() <= budget);
  CHECK(obj.evaluation_count() == (budget / opt.population_size()) * opt.population_size());
  for (std::size_t i = 1; i < res.best_trace.size(); ++i)
    CHECK(res.best_trace[i] <= res.best_trace[i - 1]);
  CHECK(res.best_fitness == res.best_trace.back());
}

TEST_CASE("constant objective yields a flat trace at that constant") {
  LmmaEsOptimizer opt(lmmaes_init(8, 5));
  ObjectiveHandle obj(8, [](const Eigen::VectorXd&) { return 4.2; });
  auto res = run_optimizer(opt, obj, {100, 5});
  CHECK(res.best_fitness == 4.2);
  for (double v : res.best_trace) CHECK(v == 4.2);
}

TEST_CASE("budget below one generation returns the initial-population best") {
  LmmaEsOptimizer opt(lmmaes_init(8, 5));
  ObjectiveHandle obj(8, sphere);
  auto res = run_optimizer(opt, obj, {5, 5});
  CHECK(obj.evaluation_count() == 5);
  CHECK(res.best_trace.size() == 1);
  CHECK(std::isfinite(res.best_fitness));
}

TEST_CASE("non-finite objective aborts the run with a diagnostic") {
  LmmaEsOptimizer opt(lmmaes_init(8, 5));
  ObjectiveHandle obj(8, [](const Eigen::VectorXd&) {
    return std::numeric_limits<double>::quiet_NaN();
  });
  CHECK_THROWS_AS(run_optimizer(opt, obj, {100, 5}), EvolutionError);
}

TEST_CASE("objective handle counts every evaluation exactly once") {
  ObjectiveHandle obj(4, sphere);
  CHECK(obj.evaluation_count() == 0);
  obj.evaluate(Eigen::VectorXd::Zero(4));
  obj.evaluate(Eigen::VectorXd::Ones(4));
  CHECK(obj.evaluation_count() == 2);
  CHECK_THROWS_AS(obj.evaluate(Eigen::VectorXd::Zero(3)), std::invalid_argument);
  CHECK(obj.evaluation_count() == 2);  // rejected calls do not count
}

TEST_CASE("random search is reproducible and consumes the exact budget") {
  auto a = random_search_step(8, std::uint64_t{77}, 5);
  auto b = random_search_step(8, std::uint64_t{77}, 5);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);

  RandomSearchOptimizer opt(512, 77, 22);
  ObjectiveHandle obj(512, sphere);
  auto res = run_optimizer(opt, obj, {26400, 77});
  CHECK(obj.evaluation_count() == 26400);  // 1200 batches of 22
  CHECK(res.best_trace.size() == 1200);
}

TEST_CASE("random search draws have near-zero empirical mean") {
  GaussianRng rng(123);
  const int dim = 4, count = 25000;  // 1e5 coordinate draws
  auto cands = random_search_step(dim, rng, count);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
  for (const auto& c : cands) mean += c;
  mean /= count;
  for (int j = 0; j < dim; ++j) CHECK(std::abs(mean[j]) < 0.02);
}

TEST_CASE("state checkpoints resume bit-identically") {
  auto s = lmmaes_init(12, 21);
  ObjectiveHandle obj(12, sphere);
  for (int it = 0; it < 5; ++it) {
    auto cands = lmmaes_ask(s, s.lambda);
    std::vector<EvaluatedCandidate> batch;
    for (auto& c : cands) batch.push_back({c.x, c.z, obj.evaluate(c.x)});
    lmmaes_tell(s, batch);
  }

  std::stringstream ss;
  s.save(ss);
  auto restored = EvolutionState::load(ss);
  CHECK(restored.equals(s));

  auto ca = lmmaes_ask(s, 10);
  auto cb = lmmaes_ask(restored, 10);
  for (std::size_t i = 0; i < ca.size(); ++i) CHECK(ca[i].x == cb[i].x);
}

TEST_CASE("corrupt state blobs are refused") {
  auto s = lmmaes_init(12, 21);
  std::stringstream ss;
  s.save(ss);
  std::string bytes = ss.str();
  bytes.resize(bytes.size() / 2);  // truncate
  std::stringstream corrupt(bytes);
  CHECK_THROWS(EvolutionState::load(corrupt));
}

TEST_CASE("lmmaes beats random search on a small sphere") {
  const int dim = 32;
  const std::int64_t budget = 3000;
  LmmaEsOptimizer es(lmmaes_init(dim, 4));
  ObjectiveHandle obj_a(dim, sphere);
  auto ra = run_optimizer(es, obj_a, {budget, 4});

  RandomSearchOptimizer rs(dim, 4, es.population_size());
  ObjectiveHandle obj_b(dim, sphere);
  auto rb = run_optimizer(rs, obj_b, {budget, 4});
  CHECK(ra.best_fitness < rb.best_fitness);
}
