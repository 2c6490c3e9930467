#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "mastercover/predictor.hpp"

using namespace mastercover;

namespace {

Eigen::VectorXd vec1(double v) {
  Eigen::VectorXd x(1);
  x[0] = v;
  return x;
}

ReplayMemory filled(std::int64_t capacity, const std::vector<double>& fits, GaussianRng& rng) {
  ReplayMemory mem(capacity);
  for (double f : fits) mem.insert(vec1(f), f, rng);
  return mem;
}

std::vector<double> fitnesses(const ReplayMemory& mem) {
  std::vector<double> out;
  for (std::int64_t i = 0; i < mem.size(); ++i) out.push_back(mem.entry(i).fitness);
  return out;
}

}  // namespace

TEST_CASE("memory keeps the best entry under eviction") {
  GaussianRng rng(1);
  auto mem = filled(3, {0.9, 0.5, 0.7, 0.8}, rng);
  CHECK(mem.size() == 3);
  auto f = fitnesses(mem);
  CHECK(std::find(f.begin(), f.end(), 0.5) != f.end());
  CHECK(mem.best_entry().fitness == 0.5);
}

TEST_CASE("capacity one keeps exactly the best") {
  GaussianRng rng(2);
  auto mem = filled(1, {0.9, 0.2, 0.4}, rng);
  CHECK(mem.size() == 1);
  CHECK(mem.entry(0).fitness == 0.2);
}

TEST_CASE("memory is bounded at capacity") {
  GaussianRng rng(3);
  ReplayMemory mem(5000);
  for (int i = 0; i < 6000; ++i) mem.insert(vec1(i), static_cast<double>(i), rng);
  CHECK(mem.size() == 5000);
  CHECK(mem.best_entry().fitness == 0.0);  // first insert was the best, still present
  CHECK_THROWS_AS(mem.insert(vec1(0), std::numeric_limits<double>::infinity(), rng),
                  std::invalid_argument);
}

TEST_CASE("nearest-rank percentile") {
  std::vector<double> ten;
  for (int i = 1; i <= 10; ++i) ten.push_back(i / 10.0);
  CHECK(nearest_rank_percentile(ten, 5.0) == doctest::Approx(0.1).epsilon(1e-14));
  CHECK(nearest_rank_percentile(ten, 50.0) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK_THROWS_AS(nearest_rank_percentile({}, 5.0), std::invalid_argument);
  CHECK_THROWS_AS(nearest_rank_percentile({1.0}, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(nearest_rank_percentile({1.0}, 100.0), std::invalid_argument);
}

TEST_CASE("relabel marks strictly-below-percentile entries only") {
  GaussianRng rng(4);
  {
    std::vector<double> ten;
    for (int i = 1; i <= 10; ++i) ten.push_back(i / 10.0);
    auto mem = filled(100, ten, rng);
    auto labels = relabel(mem, 5.0);
    CHECK(std::count(labels.begin(), labels.end(), 1) == 0);  // strict inequality
  }
  {
    auto mem = filled(100, std::vector<double>(8, 0.3), rng);
    auto labels = relabel(mem, 5.0);
    CHECK(std::count(labels.begin(), labels.end(), 1) == 0);
  }
  {
    std::vector<double> hundred;
    for (int i = 1; i <= 100; ++i) hundred.push_back(i * 0.01);
    auto mem = filled(200, hundred, rng);
    auto labels = relabel(mem, 5.0);
    CHECK(std::count(labels.begin(), labels.end(), 1) == 4);  // ranks 1..4 below the 5th value
  }
}

TEST_CASE("relabel is permutation invariant") {
  std::vector<double> fits = {0.4, 0.1, 0.9, 0.3, 0.8, 0.2, 0.6, 0.5};
  GaussianRng rng(5);
  auto mem_a = filled(100, fits, rng);
  std::reverse(fits.begin(), fits.end());
  auto mem_b = filled(100, fits, rng);

  auto label_of = [](const ReplayMemory& mem, const std::vector<int>& labels) {
    std::map<double, int> by_fitness;
    for (std::int64_t i = 0; i < mem.size(); ++i)
      by_fitness[mem.entry(i).fitness] = labels[static_cast<std::size_t>(i)];
    return by_fitness;
  };
  CHECK(label_of(mem_a, relabel(mem_a, 25.0)) == label_of(mem_b, relabel(mem_b, 25.0)));
}

TEST_CASE("memory serialization round trips") {
  GaussianRng rng(6);
  auto mem = filled(10, {0.5, 0.1, 0.7, 0.9, 0.2}, rng);
  std::stringstream ss;
  mem.save(ss);
  auto back = ReplayMemory::load(ss);
  CHECK(back.size() == mem.size());
  CHECK(back.best_entry().fitness == mem.best_entry().fitness);
  CHECK(fitnesses(back) == fitnesses(mem));
}

TEST_CASE("analytic gradient matches central finite differences") {
  const int dim = 6, batch = 10;
  PredictorNetT<double> net(dim, 99);
  GaussianRng rng(7);
  Eigen::MatrixXd x(batch, dim);
  std::vector<int> y(batch);
  for (int i = 0; i < batch; ++i) {
    for (int j = 0; j < dim; ++j) x(i, j) = rng.normal();
    y[static_cast<std::size_t>(i)] = i % 2;
  }

  const Eigen::VectorXd analytic = net.gradient_on_batch(x, y);
  Eigen::VectorXd params = net.parameters();
  const double h = 1e-5;

  // Spot-check a deterministic spread of parameters across all tensors; the
  // acceptance suite checks every parameter.
  std::vector<Eigen::Index> picks;
  for (Eigen::Index i = 0; i < params.size(); i += std::max<Eigen::Index>(1, params.size() / 400))
    picks.push_back(i);
  picks.push_back(params.size() - 1);

  double worst = 0.0;
  for (Eigen::Index i : picks) {
    const double save = params[i];
    params[i] = save + h;
    net.set_parameters(params);
    const double lp = net.loss_on_batch(x, y);
    params[i] = save - h;
    net.set_parameters(params);
    const double lm = net.loss_on_batch(x, y);
    params[i] = save;
    net.set_parameters(params);
    const double numeric = (lp - lm) / (2.0 * h);
    const double denom = std::max({1e-8, std::abs(numeric), std::abs(analytic[i])});
    worst = std::max(worst, std::abs(numeric - analytic[i]) / denom);
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("a single positive example is learned") {
  const int dim = 8;
  PredictorNet net(dim, 11);
  GaussianRng rng(8);
  Eigen::MatrixXf x(1, dim);
  for (int j = 0; j < dim; ++j) x(0, j) = static_cast<float>(rng.normal());
  std::vector<int> y = {1};
  const float before = net.score(x)[0];
  for (int step = 0; step < 200; ++step) net.train_epoch(x, y, rng);
  const float after = net.score(x)[0];
  CHECK(after > before);
  CHECK(after > 0.9f);
}

TEST_CASE("balanced random labels keep the loss near ln 2") {
  const int dim = 16, n = 256;
  PredictorNet net(dim, 12);
  GaussianRng rng(9);
  Eigen::MatrixXf x(n, dim);
  std::vector<int> y(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < dim; ++j) x(i, j) = static_cast<float>(rng.normal());
    y[static_cast<std::size_t>(i)] = i % 2;
  }
  const double loss = net.train_epoch(x, y, rng);
  CHECK(std::abs(loss - std::log(2.0)) < 0.15);
}

TEST_CASE("scores stay strictly inside (0,1)") {
  const int dim = 4;
  PredictorNet net(dim, 13);
  Eigen::MatrixXf x(3, dim);
  x.row(0).setConstant(1e6f);
  x.row(1).setConstant(-1e6f);
  x.row(2).setZero();
  const auto s = net.score(x);
  for (int i = 0; i < 3; ++i) {
    CHECK(s[i] > 0.0f);
    CHECK(s[i] < 1.0f);
  }
}

TEST_CASE("reinitialization draws fresh seeded parameters") {
  const int dim = 8;
  PredictorNet net(dim, 1234);
  const auto before = net.parameter_checksum();
  net.reinitialize();
  CHECK(net.parameter_checksum() != before);
  CHECK(net.reinit_count() == 1);

  Eigen::MatrixXf probe(2, dim);
  probe.setConstant(0.25f);
  PredictorNet fresh(dim, PredictorNet::reinit_seed(1234, 1));
  CHECK(net.score(probe) == fresh.score(probe));
}

TEST_CASE("net serialization round trips") {
  const int dim = 5;
  PredictorNet net(dim, 77);
  GaussianRng rng(10);
  Eigen::MatrixXf x(64, dim);
  std::vector<int> y(64);
  for (int i = 0; i < 64; ++i) {
    for (int j = 0; j < dim; ++j) x(i, j) = static_cast<float>(rng.normal());
    y[static_cast<std::size_t>(i)] = i % 3 == 0;
  }
  net.train_epoch(x, y, rng);

  std::stringstream ss;
  net.save(ss);
  auto back = PredictorNet::load(ss);
  CHECK(back.parameter_checksum() == net.parameter_checksum());
  CHECK(back.score(x) == net.score(x));
}

TEST_CASE("filtering selects the whole pool when take equals pool size") {
  GaussianRng rng(14);
  Eigen::VectorXd scores = Eigen::VectorXd::Random(10);
  auto sel = sample_by_softmax(scores, 10, rng);
  std::set<int> idx;
  for (const auto& s : sel) idx.insert(s.pool_index);
  CHECK(idx.size() == 10);
  CHECK_THROWS_AS(sample_by_softmax(scores, 11, rng), std::invalid_argument);
}

TEST_CASE("an untrained constant scorer samples uniformly without replacement") {
  GaussianRng rng(15);
  const Eigen::VectorXd scores = Eigen::VectorXd::Zero(10);
  const int trials = 10000;
  std::vector<int> counts(10, 0);
  for (int t = 0; t < trials; ++t) {
    auto sel = sample_by_softmax(scores, 2, rng);
    CHECK(sel[0].pool_index != sel[1].pool_index);
    for (const auto& s : sel) ++counts[static_cast<std::size_t>(s.pool_index)];
  }
  const double p = 2.0 / 10.0;
  const double sigma = std::sqrt(p * (1 - p) / trials);
  for (int c : counts) {
    const double freq = static_cast<double>(c) / trials;
    CHECK(std::abs(freq - p) < 3.5 * sigma + 1e-9);
  }
}

TEST_CASE("softmax weighting follows e/(e+9) for a one-hot score vector") {
  GaussianRng rng(16);
  Eigen::VectorXd scores = Eigen::VectorXd::Zero(10);
  scores[3] = 1.0;
  const int trials = 10000;
  int hits = 0;
  for (int t = 0; t < trials; ++t)
    if (sample_by_softmax(scores, 1, rng)[0].pool_index == 3) ++hits;
  const double p = std::exp(1.0) / (std::exp(1.0) + 9.0);
  const double sigma = std::sqrt(p * (1 - p) / trials);
  CHECK(std::abs(static_cast<double>(hits) / trials - p) < 3.5 * sigma);
}

TEST_CASE("audit accuracy applies the two-sided rule") {
  GaussianRng rng(17);
  std::vector<double> memory_fits;
  for (int i = 1; i <= 20; ++i) memory_fits.push_back(i * 0.05);  // 5th pct value 0.05
  auto mem = filled(100, memory_fits, rng);
  const double cut = mem.percentile_fitness(5.0);
  CHECK(cut == doctest::Approx(0.05));

  // All scores low, all fitnesses at/above the percentile: all correct.
  CHECK(audit_accuracy({0.4, 0.4, 0.4}, {0.5, 0.9, 0.05}, mem, 5.0) == 1.0);
  // All scores high, same fitnesses: all wrong.
  CHECK(audit_accuracy({0.9, 0.9, 0.9}, {0.5, 0.9, 0.05}, mem, 5.0) == 0.0);
  // Mixed batch of four with three correct by hand evaluation.
  CHECK(audit_accuracy({0.9, 0.4, 0.4, 0.9}, {0.01, 0.5, 0.9, 0.5}, mem, 5.0) == 0.75);
  CHECK_THROWS_AS(audit_accuracy({}, {}, mem, 5.0), std::invalid_argument);
}

namespace {

// Deterministically wrong scorer: always confident-positive while the
// objective keeps every candidate at or above the percentile.
struct AdversarialPredictor final : SuccessPredictor {
  int reinits = 0;
  Eigen::VectorXd score_batch(const Eigen::MatrixXd& pool) override {
    return Eigen::VectorXd::Constant(pool.rows(), 0.9);
  }
  double train_epoch(const Eigen::MatrixXd&, const std::vector<int>&, GaussianRng&) override {
    return 0.0;
  }
  void reinitialize() override { ++reinits; }
};

}  // namespace

TEST_CASE("adversarial predictor is reinitialized exactly every T audited iterations") {
  const int dim = 8;
  auto state = lmmaes_init(dim, 31, std::nullopt, 1.0, 8);
  AdversarialPredictor pred;
  ReplayMemory mem(500);
  FilterConfig cfg;
  cfg.oversample = 24;
  cfg.percentile = 5.0;
  cfg.accuracy_threshold = 0.6;
  cfg.patience = 4;
  cfg.warmup_fraction = 0.05;  // 5 of 100 iterations
  cfg.memory_capacity = 500;
  ObjectiveHandle obj(dim, [](const Eigen::VectorXd&) { return 1.0; });
  GaussianRng aux(32);

  const auto res = assisted_generation_loop(state, pred, mem, cfg, obj, {800, 31}, aux);
  REQUIRE(res.records.size() == 100);

  // Warm-up: 5 iterations, no audits or reinits. Afterwards accuracy is
  // pinned at 0, so a reinit fires on every 4th audited iteration.
  int expected_countdown = cfg.patience;
  for (const auto& r : res.records) {
    if (r.iteration < 5) {
      CHECK(!r.reinitialized);
      CHECK(std::isnan(r.accuracy));
      continue;
    }
    CHECK(r.accuracy == 0.0);
    --expected_countdown;
    if (expected_countdown == 0) {
      CHECK(r.reinitialized);
      expected_countdown = cfg.patience;
    } else {
      CHECK(!r.reinitialized);
    }
  }
  CHECK(pred.reinits == res.reinit_count);
  CHECK(pred.reinits == 95 / 4);
}

TEST_CASE("full warm-up reproduces the plain strategy bit for bit") {
  const int dim = 16;
  auto sphere = [](const Eigen::VectorXd& x) { return x.squaredNorm(); };
  const std::int64_t budget = 600;

  LmmaEsOptimizer plain(lmmaes_init(dim, 77));
  ObjectiveHandle obj_plain(dim, sphere);
  const auto rp = run_optimizer(plain, obj_plain, {budget, 77});

  auto state = lmmaes_init(dim, 77);
  NetSuccessPredictor pred(PredictorNet(dim, 1));
  ReplayMemory mem(200);
  FilterConfig cfg;
  cfg.oversample = 100;
  cfg.warmup_fraction = 1.0;
  cfg.memory_capacity = 200;
  ObjectiveHandle obj_assist(dim, sphere);
  GaussianRng aux(5);
  const auto ra = assisted_generation_loop(state, pred, mem, cfg, obj_assist, {budget, 77}, aux);

  CHECK(obj_plain.evaluation_count() == obj_assist.evaluation_count());
  CHECK(ra.best_fitness == rp.best_fitness);
  CHECK(ra.best_x == rp.best_x);
  REQUIRE(ra.best_trace.size() == rp.best_trace.size());
  for (std::size_t i = 0; i < ra.best_trace.size(); ++i)
    CHECK(ra.best_trace[i] == rp.best_trace[i]);
  CHECK(state.equals(plain.state()));
}

TEST_CASE("filtered runs consume exactly the plain budget") {
  const int dim = 12;
  auto sphere = [](const Eigen::VectorXd& x) { return x.squaredNorm(); };
  const std::int64_t budget = 500;

  auto state = lmmaes_init(dim, 9);
  NetSuccessPredictor pred(PredictorNet(dim, 2));
  ReplayMemory mem(300);
  FilterConfig cfg;
  cfg.oversample = 100;
  cfg.warmup_fraction = 0.1;
  cfg.memory_capacity = 300;
  ObjectiveHandle obj(dim, sphere);
  GaussianRng aux(6);
  const auto res = assisted_generation_loop(state, pred, mem, cfg, obj, {budget, 9}, aux);

  const std::int64_t lambda = state.lambda;
  CHECK(obj.evaluation_count() == (budget / lambda) * lambda);
  CHECK(res.evaluations == obj.evaluation_count());
  for (const auto& r : res.records)
    if (r.filtered) CHECK(r.memory_size <= 300);
}
