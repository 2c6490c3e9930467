#include <benchmark/benchmark.h>

#include <Eigen/Dense>

#include "mastercover/coverage.hpp"
#include "mastercover/evolution.hpp"
#include "mastercover/predictor.hpp"
#include "mastercover/synthworld.hpp"

namespace {

using namespace mastercover;

void BM_AskOversampled(benchmark::State& state) {
  auto es = lmmaes_init(512, 1);
  // Push a few updates so the sampling transform uses live direction vectors.
  ObjectiveHandle obj(512, [](const Eigen::VectorXd& x) { return x.squaredNorm(); });
  for (int it = 0; it < 30; ++it) {
    auto cands = lmmaes_ask(es, es.lambda);
    std::vector<EvaluatedCandidate> batch;
    for (auto& c : cands) batch.push_back({c.x, c.z, obj.evaluate(c.x)});
    lmmaes_tell(es, batch);
  }
  const int count = static_cast<int>(state.range(0));
  for (auto _ : state) {
    auto cands = lmmaes_ask(es, count);
    benchmark::DoNotOptimize(cands.back().x.sum());
  }
  state.SetItemsProcessed(state.iterations() * count);
}
BENCHMARK(BM_AskOversampled)->Arg(22)->Arg(1000);

void BM_AskTellSphere(benchmark::State& state) {
  const int dim = static_cast<int>(state.range(0));
  auto es = lmmaes_init(dim, 1);
  ObjectiveHandle obj(dim, [](const Eigen::VectorXd& x) { return x.squaredNorm(); });
  for (auto _ : state) {
    auto cands = lmmaes_ask(es, es.lambda);
    std::vector<EvaluatedCandidate> batch;
    for (auto& c : cands) batch.push_back({c.x, c.z, obj.evaluate(c.x)});
    lmmaes_tell(es, batch);
  }
  state.SetItemsProcessed(state.iterations() * es.lambda);
}
BENCHMARK(BM_AskTellSphere)->Arg(64)->Arg(512);

void BM_PredictorScore(benchmark::State& state) {
  PredictorNet net(512, 7);
  GaussianRng rng(1);
  Eigen::MatrixXf pool(1000, 512);
  for (int i = 0; i < pool.rows(); ++i)
    for (int j = 0; j < pool.cols(); ++j) pool(i, j) = static_cast<float>(rng.normal());
  for (auto _ : state) {
    auto s = net.score(pool);
    benchmark::DoNotOptimize(s.sum());
  }
  state.SetItemsProcessed(state.iterations() * pool.rows());
}
BENCHMARK(BM_PredictorScore);

void BM_PredictorTrainEpoch(benchmark::State& state) {
  const int samples = static_cast<int>(state.range(0));
  PredictorNet net(512, 7);
  GaussianRng rng(1);
  Eigen::MatrixXf x(samples, 512);
  std::vector<int> y(static_cast<std::size_t>(samples));
  for (int i = 0; i < samples; ++i) {
    for (int j = 0; j < 512; ++j) x(i, j) = static_cast<float>(rng.normal());
    y[static_cast<std::size_t>(i)] = i % 20 == 0;
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(net.train_epoch(x, y, rng));
  }
  state.SetItemsProcessed(state.iterations() * samples);
}
BENCHMARK(BM_PredictorTrainEpoch)->Arg(1000)->Arg(5000);

void BM_CoverageFitness(benchmark::State& state) {
  WorldConfig cfg;
  cfg.seed = 3;
  const auto world = build_world(cfg);
  const auto problem = make_problem(world, 1.0);
  GaussianRng rng(2);
  Eigen::VectorXd z(cfg.latent_dim);
  for (int j = 0; j < cfg.latent_dim; ++j) z[j] = rng.normal();
  for (auto _ : state) {
    benchmark::DoNotOptimize(coverage_fitness(z, problem));
  }
}
BENCHMARK(BM_CoverageFitness);

void BM_KmeansGallery(benchmark::State& state) {
  WorldConfig cfg;
  cfg.seed = 3;
  const auto world = build_world(cfg);
  for (auto _ : state) {
    auto r = kmeans(world.gallery.embeddings(), 9, Metric::kEuclidean, 5);
    benchmark::DoNotOptimize(r.centroids.sum());
  }
}
BENCHMARK(BM_KmeansGallery);

}  // namespace

BENCHMARK_MAIN();
