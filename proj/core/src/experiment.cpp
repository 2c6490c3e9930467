#include "mastercover/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "mastercover/evolution.hpp"
#include "mastercover/predictor.hpp"
#include "mastercover/rng.hpp"
#include "mastercover/serialize.hpp"

namespace fs = std::filesystem;

namespace mastercover {

namespace {

// Substream tags under the experiment root seed.
enum : std::uint64_t {
  kWorldStream = 0x774f524c44ULL,   // "WORLD"
  kSplitStream = 0x53504c4954ULL,   // "SPLIT"
  kRunStream = 0x52554eULL,         // "RUN"
  kGreedyStream = 0x475245ULL,      // "GRE"
  kClusteredStream = 0x434c55ULL,   // "CLU"
  kCombinedStream = 0x434f4dULL,    // "COM"
};

// Substreams under one run seed.
enum : std::uint64_t {
  kOptSub = 1,
  kNetSub = 2,
  kAuxSub = 3,
};

constexpr std::uint32_t kCkptMagic = 0x4d434b50;  // "MCKP"
constexpr std::uint32_t kCkptVersion = 1;

constexpr std::uint32_t kBlobPlain = 0x504c524eULL;     // "PLRN"
constexpr std::uint32_t kBlobRandom = 0x5253524eULL;    // "RSRN"
constexpr std::uint32_t kBlobAssisted = 0x4153524eULL;  // "ASRN"

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write '" + path + "'");
  f << content;
  if (!f) throw std::runtime_error("write failed for '" + path + "'");
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ostringstream os;
  for (const auto& l : lines) os << l << '\n';
  write_file(path, os.str());
}

std::string plain_trace_line(std::int64_t iter, double best) {
  nlohmann::json j;
  j["iter"] = iter;
  j["best"] = best;
  return j.dump();
}

std::string assisted_trace_line(const AssistedIterationRecord& r) {
  nlohmann::json j;
  j["iter"] = r.iteration;
  j["best"] = r.best_fitness;
  j["mem"] = r.memory_size;
  if (std::isnan(r.accuracy))
    j["acc"] = nullptr;
  else
    j["acc"] = r.accuracy;
  j["reinit"] = r.reinitialized;
  j["loss"] = r.train_loss;
  j["filtered"] = r.filtered;
  return j.dump();
}

// --------------------------------------------------------------------------
// Mid-run state blobs for the three run kinds.

struct CommonRunState {
  double best_fitness;
  Eigen::VectorXd best_x;
  std::int64_t evaluations;
  std::int64_t iterations;
  std::vector<std::string> trace;
};

void write_common(BinaryWriter& w, const CommonRunState& s) {
  w.f64(s.best_fitness);
  w.vec(s.best_x);
  w.i64(s.evaluations);
  w.i64(s.iterations);
  w.u64(s.trace.size());
  for (const auto& l : s.trace) w.str(l);
}

CommonRunState read_common(BinaryReader& r) {
  CommonRunState s;
  s.best_fitness = r.f64();
  s.best_x = r.vec();
  s.evaluations = r.i64();
  s.iterations = r.i64();
  const std::uint64_t n = r.u64();
  s.trace.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) s.trace.push_back(r.str());
  return s;
}

// --------------------------------------------------------------------------
// Single-run engine

SingleRunResult run_plain(int latent_dim, ObjectiveHandle& objective, std::int64_t budget,
                          int population, double sigma0, std::uint64_t seed, bool random_search,
                          const SingleRunHooks* hooks) {
  CommonRunState common{std::numeric_limits<double>::infinity(), {}, 0, 0, {}};
  std::unique_ptr<Optimizer> opt;
  std::optional<std::string> blob;
  if (hooks && hooks->restore) blob = hooks->restore();

  if (blob) {
    std::istringstream is(*blob);
    BinaryReader r(is);
    const std::uint32_t tag = r.u32();
    if (tag != (random_search ? kBlobRandom : kBlobPlain))
      throw std::runtime_error("run checkpoint has the wrong optimizer kind");
    if (random_search) {
      auto rs = std::make_unique<RandomSearchOptimizer>(latent_dim, 0, population);
      std::istringstream rngs(r.str());
      rs->rng().load(rngs);
      rs->set_iteration(r.i64());
      opt = std::move(rs);
    } else {
      opt = std::make_unique<LmmaEsOptimizer>(EvolutionState::load(is));
    }
    common = read_common(r);
  } else if (random_search) {
    opt = std::make_unique<RandomSearchOptimizer>(latent_dim, derive_seed(seed, kOptSub),
                                                  population);
  } else {
    opt = std::make_unique<LmmaEsOptimizer>(lmmaes_init(latent_dim, derive_seed(seed, kOptSub),
                                                        std::nullopt, sigma0, population));
  }

  auto encode = [&]() {
    std::ostringstream os;
    BinaryWriter w(os);
    w.u32(random_search ? kBlobRandom : kBlobPlain);
    if (random_search) {
      auto* rs = static_cast<RandomSearchOptimizer*>(opt.get());
      std::ostringstream rngs;
      rs->rng().save(rngs);
      w.str(rngs.str());
      w.i64(rs->iteration());
    } else {
      static_cast<LmmaEsOptimizer*>(opt.get())->state().save(os);
    }
    write_common(w, common);
    return os.str();
  };

  SingleRunResult out;
  const std::int64_t remaining = budget - common.evaluations;
  if (remaining < opt->population_size()) {  // nothing left to do
    out.best_x = common.best_x;
    out.best_fitness = common.best_fitness;
    out.trace_lines = common.trace;
    out.evaluations = common.evaluations;
    out.iterations = common.iterations;
    return out;
  }

  RunControl ctl;
  ctl.initial_best = common.best_fitness;
  ctl.initial_best_x = common.best_x;
  const std::int64_t evals_before = common.evaluations;
  ctl.on_iteration = [&, evals_before](std::int64_t, const RunResult& so_far) {
    const std::int64_t abs_iter = opt->iteration();
    common.best_fitness = so_far.best_fitness;
    common.best_x = so_far.best_x;
    common.evaluations = evals_before + so_far.evaluations;
    common.iterations = abs_iter;
    common.trace.push_back(plain_trace_line(abs_iter, so_far.best_fitness));
    bool go = true;
    if (hooks && hooks->keep_going) go = hooks->keep_going();
    if (hooks && hooks->save) {
      const bool periodic =
          hooks->checkpoint_every > 0 && abs_iter % hooks->checkpoint_every == 0;
      if (!go || periodic) hooks->save(encode());
    }
    return go;
  };

  const RunResult r = run_optimizer(*opt, objective, RunBudget{remaining, seed}, &ctl);
  out.best_x = r.best_fitness <= common.best_fitness ? r.best_x : common.best_x;
  out.best_fitness = std::min(r.best_fitness, common.best_fitness);
  out.trace_lines = common.trace;
  out.evaluations = evals_before + r.evaluations;
  out.iterations = opt->iteration();
  out.halted = r.halted;
  return out;
}

SingleRunResult run_assisted(int latent_dim, ObjectiveHandle& objective, std::int64_t budget,
                             int population, double sigma0, const FilterConfig& filter,
                             std::uint64_t seed, const SingleRunHooks* hooks) {
  std::optional<std::string> blob;
  if (hooks && hooks->restore) blob = hooks->restore();

  EvolutionState state = lmmaes_init(latent_dim, derive_seed(seed, kOptSub), std::nullopt,
                                     sigma0, population);
  PredictorNet net(latent_dim, derive_seed(seed, kNetSub));
  ReplayMemory memory(filter.memory_capacity);
  GaussianRng aux(derive_seed(seed, kAuxSub));
  CommonRunState common{std::numeric_limits<double>::infinity(), {}, 0, 0, {}};
  int consecutive_low = 0;
  int reinit_count = 0;

  if (blob) {
    std::istringstream is(*blob);
    BinaryReader r(is);
    if (r.u32() != kBlobAssisted)
      throw std::runtime_error("run checkpoint has the wrong optimizer kind");
    state = EvolutionState::load(is);
    memory = ReplayMemory::load(is);
    net = PredictorNet::load(is);
    std::istringstream rngs(r.str());
    aux.load(rngs);
    consecutive_low = static_cast<int>(r.u32());
    reinit_count = static_cast<int>(r.u32());
    common = read_common(r);
  }

  NetSuccessPredictor predictor(std::move(net));

  auto encode = [&]() {
    std::ostringstream os;
    BinaryWriter w(os);
    w.u32(kBlobAssisted);
    state.save(os);
    memory.save(os);
    predictor.net().save(os);
    std::ostringstream rngs;
    aux.save(rngs);
    w.str(rngs.str());
    w.u32(static_cast<std::uint32_t>(consecutive_low));
    w.u32(static_cast<std::uint32_t>(reinit_count));
    write_common(w, common);
    return os.str();
  };

  LoopControl ctl;
  ctl.start_iteration = state.iteration;
  ctl.initial_best = common.best_fitness;
  ctl.initial_best_x = common.best_x;
  ctl.initial_consecutive_low = consecutive_low;
  ctl.initial_reinit_count = reinit_count;
  const std::int64_t evals_before = common.evaluations;
  ctl.on_iteration = [&](const LoopSnapshot& snap) {
    common.best_fitness = snap.best_fitness;
    common.best_x = snap.best_x;
    common.evaluations = evals_before + (snap.record.iteration + 1 - ctl.start_iteration) *
                                            static_cast<std::int64_t>(state.lambda);
    common.iterations = snap.record.iteration + 1;
    common.trace.push_back(assisted_trace_line(snap.record));
    consecutive_low = snap.consecutive_low;
    reinit_count = snap.reinit_count;
    bool go = true;
    if (hooks && hooks->keep_going) go = hooks->keep_going();
    if (hooks && hooks->save) {
      const bool periodic = hooks->checkpoint_every > 0 &&
                            common.iterations % hooks->checkpoint_every == 0;
      if (!go || periodic) hooks->save(encode());
    }
    return go;
  };

  SingleRunResult out;
  const std::int64_t planned = budget / state.lambda;
  if (state.iteration >= planned) {  // finished earlier
    out.best_x = common.best_x;
    out.best_fitness = common.best_fitness;
    out.trace_lines = common.trace;
    out.evaluations = common.evaluations;
    out.iterations = common.iterations;
    return out;
  }

  const AssistedRunResult r = assisted_generation_loop(state, predictor, memory, filter,
                                                       objective, RunBudget{budget, seed}, aux,
                                                       &ctl);
  out.best_x = r.best_x;
  out.best_fitness = r.best_fitness;
  out.trace_lines = common.trace;
  out.evaluations = evals_before + r.evaluations;
  out.iterations = state.iteration;
  out.halted = r.halted;
  return out;
}

SingleRunResult run_single_impl(int latent_dim,
                                const std::function<double(const Eigen::VectorXd&)>& fitness,
                                OptimizerChoice choice, std::int64_t budget, int population,
                                double sigma0, const FilterConfig& filter, std::uint64_t seed,
                                const SingleRunHooks* hooks) {
  ObjectiveHandle objective(latent_dim, fitness);
  switch (choice) {
    case OptimizerChoice::kLmmaEs:
      return run_plain(latent_dim, objective, budget, population, sigma0, seed, false, hooks);
    case OptimizerChoice::kRandom:
      return run_plain(latent_dim, objective, budget, population, sigma0, seed, true, hooks);
    case OptimizerChoice::kLmmaEsPredictor:
      return run_assisted(latent_dim, objective, budget, population, sigma0, filter, seed, hooks);
  }
  throw std::logic_error("unreachable optimizer choice");
}

}  // namespace

SingleRunResult run_single_master(const VerificationProblem& problem, OptimizerChoice choice,
                                  std::int64_t budget, int population, double sigma0,
                                  const FilterConfig& filter, std::uint64_t seed,
                                  const SingleRunHooks* hooks) {
  return run_single_impl(
      problem.latent_dim,
      [&problem](const Eigen::VectorXd& z) { return coverage_fitness(z, problem); }, choice,
      budget, population, sigma0, filter, seed, hooks);
}

SingleRunResult run_single_master(const PairedVerificationProblem& problem,
                                  OptimizerChoice choice, std::int64_t budget, int population,
                                  double sigma0, const FilterConfig& filter, std::uint64_t seed,
                                  const SingleRunHooks* hooks) {
  return run_single_impl(
      problem.latent_dim,
      [&problem](const Eigen::VectorXd& z) { return combined_coverage_fitness(z, problem); },
      choice, budget, population, sigma0, filter, seed, hooks);
}

// ---------------------------------------------------------------------------
// Split and calibration helpers

SplitIdentities split_identities(int n, std::int64_t ratio_num, std::int64_t ratio_den,
                                 std::uint64_t seed) {
  if (n < 2) throw std::invalid_argument("split_identities: need at least two identities");
  if (ratio_num < 1 || ratio_den < 1)
    throw std::invalid_argument("split_identities: ratio parts must be positive");
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  GaussianRng rng(seed);
  for (std::size_t i = idx.size() - 1; i > 0; --i)
    std::swap(idx[i], idx[static_cast<std::size_t>(rng.integer(i + 1))]);
  const auto train_count =
      static_cast<std::size_t>(static_cast<std::int64_t>(n) * ratio_num / (ratio_num + ratio_den));
  if (train_count < 1 || train_count >= static_cast<std::size_t>(n))
    throw std::invalid_argument("split_identities: ratio leaves an empty split");
  SplitIdentities out;
  out.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(train_count));
  out.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(train_count), idx.end());
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

PairScores select_train_pairs(const PairScores& scores, const std::vector<int>& genuine_identity,
                              const std::vector<int>& impostor_a,
                              const std::vector<int>& impostor_b,
                              const std::vector<bool>& in_train) {
  if (scores.genuine.size() != genuine_identity.size() ||
      scores.impostor.size() != impostor_a.size() || impostor_a.size() != impostor_b.size())
    throw std::invalid_argument("select_train_pairs: misaligned pair metadata");
  PairScores out;
  for (std::size_t i = 0; i < scores.genuine.size(); ++i)
    if (in_train[static_cast<std::size_t>(genuine_identity[i])])
      out.genuine.push_back(scores.genuine[i]);
  for (std::size_t i = 0; i < scores.impostor.size(); ++i)
    if (in_train[static_cast<std::size_t>(impostor_a[i])] &&
        in_train[static_cast<std::size_t>(impostor_b[i])])
      out.impostor.push_back(scores.impostor[i]);
  return out;
}

std::string latent_checksum(const Eigen::VectorXd& v) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(v.data());
  for (std::size_t i = 0; i < sizeof(double) * static_cast<std::size_t>(v.size()); ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Checkpoint file

namespace {

struct UnitResult {
  Eigen::VectorXd latent;
  double best_fitness;
  std::int64_t evaluations;
  std::int64_t iterations;
};

struct CheckpointState {
  std::string config_text;
  std::map<std::string, UnitResult> completed;
  std::optional<std::pair<std::string, std::string>> active;  // unit key, engine blob
};

void save_checkpoint_file(const std::string& path, const CheckpointState& st) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write checkpoint '" + path + "'");
    BinaryWriter w(f);
    w.u32(kCkptMagic);
    w.u32(kCkptVersion);
    w.str(st.config_text);
    w.u64(st.completed.size());
    for (const auto& [key, u] : st.completed) {
      w.str(key);
      w.vec(u.latent);
      w.f64(u.best_fitness);
      w.i64(u.evaluations);
      w.i64(u.iterations);
    }
    w.u32(st.active ? 1 : 0);
    if (st.active) {
      w.str(st.active->first);
      w.str(st.active->second);
    }
  }
  fs::rename(tmp, path);
}

CheckpointState load_checkpoint_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  BinaryReader r(f);
  if (r.u32() != kCkptMagic)
    throw std::runtime_error("'" + path + "' is not a checkpoint file");
  const std::uint32_t version = r.u32();
  if (version != kCkptVersion)
    throw std::runtime_error("checkpoint version " + std::to_string(version) +
                             " is not supported by this build");
  CheckpointState st;
  st.config_text = r.str();
  const std::uint64_t n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::string key = r.str();
    UnitResult u;
    u.latent = r.vec();
    u.best_fitness = r.f64();
    u.evaluations = r.i64();
    u.iterations = r.i64();
    st.completed.emplace(key, std::move(u));
  }
  if (r.u32() == 1) {
    const std::string key = r.str();
    const std::string blob = r.str();
    st.active = {key, blob};
  }
  return st;
}

struct HaltSignal {};

// Cumulative ordered coverage of a gallery by a master list, without double
// counting. `embed_b` is set for combined targets.
double ordered_coverage(const std::vector<MasterEntry>& masters, const EmbeddingGallery& gallery,
                        double theta, const EmbeddingGallery* gallery_b, double theta_b,
                        const Encoder* encoder_b) {
  std::vector<bool> covered(static_cast<std::size_t>(gallery.subject_count()), false);
  std::int64_t total = 0;
  for (const auto& m : masters) {
    if (m.latent.size() == 0) continue;
    const Eigen::VectorXd da = gallery.distances_to(m.embedding);
    Eigen::VectorXd db;
    if (gallery_b) db = gallery_b->distances_to((*encoder_b)(m.latent));
    for (int i = 0; i < gallery.subject_count(); ++i) {
      if (covered[static_cast<std::size_t>(i)]) continue;
      const bool hit = da[i] < theta && (!gallery_b || db[i] < theta_b);
      if (hit) {
        covered[static_cast<std::size_t>(i)] = true;
        ++total;
      }
    }
  }
  return 100.0 * static_cast<double>(total) / static_cast<double>(gallery.subject_count());
}

std::string coverage_report_csv(const CoverageReport& rep) {
  std::ostringstream os;
  os << "index,marginal_msc,cumulative_msc,latent_checksum,covered_ids\n";
  double cum = 0.0;
  for (std::size_t i = 0; i < rep.masters.size(); ++i) {
    const auto& m = rep.masters[i];
    cum += m.marginal_msc;
    os << i << ',' << fmt17(m.marginal_msc) << ',' << fmt17(cum) << ','
       << (m.latent.size() ? latent_checksum(m.latent) : "-") << ',';
    for (std::size_t k = 0; k < m.covered_ids.size(); ++k)
      os << (k ? ";" : "") << m.covered_ids[k];
    os << '\n';
  }
  return os.str();
}

std::string masters_tsv(const CoverageReport& rep) {
  std::ostringstream os;
  for (std::size_t i = 0; i < rep.masters.size(); ++i) {
    const auto& m = rep.masters[i];
    os << i;
    for (Eigen::Index j = 0; j < m.latent.size(); ++j) os << '\t' << fmt17(m.latent[j]);
    os << '\n';
  }
  return os.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// Orchestration

namespace {

ExperimentOutcome run_core(const ExperimentConfig& cfg, const RunOptions& opts,
                           CheckpointState st, std::ostream& log) {
  validate(cfg);
  fs::create_directories(cfg.output_dir);
  auto out_path = [&](const std::string& name) {
    return (fs::path(cfg.output_dir) / name).string();
  };
  write_file(out_path("config_resolved.ini"), st.config_text);

  const bool checkpointing = cfg.checkpoint_every > 0;
  const std::string ckpt_path = out_path("checkpoint.mck");
  auto persist = [&] {
    if (checkpointing) save_checkpoint_file(ckpt_path, st);
  };

  ExperimentOutcome outcome;
  outcome.checkpoint_path = checkpointing ? ckpt_path : "";

  const int lambda = cfg.resolved_population();
  const int n = cfg.world.n_identities;

  // World and split are fully determined by the root seed.
  WorldConfig wc = cfg.world;
  wc.seed = derive_seed(cfg.root_seed, kWorldStream);
  const SplitIdentities split =
      split_identities(n, cfg.train_ratio_num, cfg.train_ratio_den,
                       derive_seed(cfg.root_seed, kSplitStream));
  std::vector<bool> in_train(static_cast<std::size_t>(n), false);
  for (int id : split.train) in_train[static_cast<std::size_t>(id)] = true;

  if (opts.verbosity > 0)
    log << "world: " << n << " identities (" << split.train.size() << " train / "
        << split.test.size() << " test), mode " << to_string(cfg.mode) << "\n";

  // Halt accounting across the whole invocation.
  std::int64_t iterations_this_run = 0;
  auto keep_going = [&]() {
    ++iterations_this_run;
    return opts.halt_after_iterations == 0 || iterations_this_run < opts.halt_after_iterations;
  };

  auto make_hooks = [&](const std::string& key) {
    SingleRunHooks hooks;
    hooks.checkpoint_every = cfg.checkpoint_every;
    hooks.keep_going = keep_going;
    if (checkpointing) {
      hooks.restore = [&st, key]() -> std::optional<std::string> {
        if (st.active && st.active->first == key) return st.active->second;
        return std::nullopt;
      };
      hooks.save = [&st, key, &persist](const std::string& blob) {
        st.active = {key, blob};
        persist();
      };
    }
    return hooks;
  };

  bool halted = false;
  auto run_unit = [&](const std::string& key, const std::string& trace_name,
                      const std::function<SingleRunResult(const SingleRunHooks*)>& fn)
      -> UnitResult {
    if (auto it = st.completed.find(key); it != st.completed.end()) return it->second;
    const SingleRunHooks hooks = make_hooks(key);
    const bool want_hooks = checkpointing || opts.halt_after_iterations > 0;
    if (opts.verbosity > 1) log << "  running " << key << "\n";
    SingleRunResult r = fn(want_hooks ? &hooks : nullptr);
    if (r.halted) {
      halted = true;
      persist();
      throw HaltSignal{};
    }
    UnitResult u{r.best_x, r.best_fitness, r.evaluations, r.iterations};
    st.completed.emplace(key, u);
    st.active.reset();
    if (cfg.write_traces && !trace_name.empty()) write_lines(out_path(trace_name), r.trace_lines);
    persist();
    return u;
  };

  // ------------------------------------------------------------------
  // Build world(s) and calibrate thresholds on the training pairs only.

  std::optional<World> world;
  std::optional<PairedWorld> pworld;
  double theta = 0.0, theta_b = 0.0;
  std::ostringstream thresholds_csv;
  thresholds_csv << "policy,theta_a,theta_b,far,frr,note\n";

  if (cfg.mode == CoverageMode::kCombined) {
    pworld = paired_world(wc);
    const PairScores train_a = select_train_pairs(pworld->scores_a, pworld->genuine_identity,
                                                  pworld->impostor_a, pworld->impostor_b, in_train);
    const PairScores train_b = select_train_pairs(pworld->scores_b, pworld->genuine_identity,
                                                  pworld->impostor_a, pworld->impostor_b, in_train);
    if (pworld->degenerate_genuine)
      log << "warning: zero intra-identity noise; combined EER calibration degenerates\n";
    const NormalizedScores na = normalize_unit_range(train_a, cfg.world.metric);
    const NormalizedScores nb = normalize_unit_range(train_b, cfg.world.metric);
    const CombinedThreshold grid =
        combined_threshold_grid(na.scores, nb.scores, cfg.grid_resolution);
    theta = grid.theta_a * na.scale;
    theta_b = grid.theta_b * nb.scale;
    thresholds_csv << "combined," << fmt17(theta) << ',' << fmt17(theta_b) << ','
                   << fmt17(grid.far) << ',' << fmt17(grid.frr) << ",grid_resolution="
                   << cfg.grid_resolution << "\n";
  } else {
    world = build_world(wc);
    const PairScores train = select_train_pairs(world->scores, world->genuine_identity,
                                                world->impostor_a, world->impostor_b, in_train);
    if (cfg.threshold_policy == ThresholdPolicy::kFarTarget) {
      const FarThreshold t = threshold_at_far(train, cfg.far_target);
      theta = t.theta;
      const FarFrr rates = far_frr(train, theta);
      thresholds_csv << "far," << fmt17(theta) << ",," << fmt17(rates.far) << ','
                     << fmt17(rates.frr) << ','
                     << (t.attainable ? "target=" + fmt17(cfg.far_target)
                                      : "unattainable_target=" + fmt17(cfg.far_target))
                     << "\n";
      if (!t.attainable)
        log << "warning: FAR target " << cfg.far_target
            << " not attainable with the training impostor pairs; using the minimum impostor "
               "distance\n";
    } else {
      if (world->degenerate_genuine)
        log << "warning: zero intra-identity noise; EER threshold degenerates to 0\n";
      const EerThreshold t = threshold_at_eer(train);
      theta = t.theta;
      thresholds_csv << "eer," << fmt17(theta) << ",," << fmt17(t.far) << ',' << fmt17(t.frr)
                     << ",eer=" << fmt17(t.eer) << "\n";
    }
  }
  write_file(out_path("thresholds.csv"), thresholds_csv.str());

  // ------------------------------------------------------------------
  // Work units per optimizer.

  std::ostringstream summary_csv;
  summary_csv << "mode,optimizer,train_msc,test_msc\n";

  try {
    for (const OptimizerChoice choice : cfg.optimizers) {
      const std::string tag = file_tag(choice);
      SummaryRow row{cfg.mode, choice, 0.0, 0.0};

      if (cfg.mode == CoverageMode::kSingle || cfg.mode == CoverageMode::kGreedy ||
          cfg.mode == CoverageMode::kClustered) {
        auto encoder = std::make_shared<SyntheticEncoder>(world->encoder);
        const EmbeddingGallery train_gallery = world->gallery.subset(split.train);
        const EmbeddingGallery test_gallery = world->gallery.subset(split.test);
        const VerificationProblem train_problem =
            make_problem(encoder, train_gallery, theta);

        if (cfg.mode == CoverageMode::kSingle) {
          const bool parallel = !checkpointing && opts.halt_after_iterations == 0 &&
                                cfg.seeds.size() > 1;
          std::vector<UnitResult> units(cfg.seeds.size());
          auto unit_of_seed = [&](std::size_t k) {
            const std::string key = "single/" + tag + "/s" + std::to_string(k);
            const std::string trace = "trace_single_" + tag + "_s" + std::to_string(k) + ".ndjson";
            const std::uint64_t seed = derive_seed(cfg.root_seed, kRunStream, cfg.seeds[k]);
            return run_unit(key, trace, [&](const SingleRunHooks* h) {
              return run_single_master(train_problem, choice, cfg.budget, lambda,
                                       cfg.initial_sigma, cfg.filter, seed, h);
            });
          };
          if (parallel) {
            std::vector<std::future<std::pair<SingleRunResult, std::string>>> futs;
            for (std::size_t k = 0; k < cfg.seeds.size(); ++k) {
              if (st.completed.count("single/" + tag + "/s" + std::to_string(k))) continue;
              futs.push_back(std::async(std::launch::async, [&, k] {
                const std::uint64_t seed = derive_seed(cfg.root_seed, kRunStream, cfg.seeds[k]);
                SingleRunResult r = run_single_master(train_problem, choice, cfg.budget, lambda,
                                                      cfg.initial_sigma, cfg.filter, seed,
                                                      nullptr);
                return std::make_pair(std::move(r), std::to_string(k));
              }));
            }
            for (auto& f : futs) {
              auto [r, kstr] = f.get();
              const std::string key = "single/" + tag + "/s" + kstr;
              st.completed.emplace(key, UnitResult{r.best_x, r.best_fitness, r.evaluations,
                                                   r.iterations});
              if (cfg.write_traces)
                write_lines(out_path("trace_single_" + tag + "_s" + kstr + ".ndjson"),
                            r.trace_lines);
            }
            for (std::size_t k = 0; k < cfg.seeds.size(); ++k)
              units[k] = st.completed.at("single/" + tag + "/s" + std::to_string(k));
          } else {
            for (std::size_t k = 0; k < cfg.seeds.size(); ++k) units[k] = unit_of_seed(k);
          }

          // Best-on-train selection, then report both splits.
          std::size_t best_k = 0;
          double best_train = -1.0;
          std::ostringstream runs_csv;
          runs_csv << "run,seed,train_msc,test_msc,chosen\n";
          std::vector<double> train_mscs(units.size()), test_mscs(units.size());
          for (std::size_t k = 0; k < units.size(); ++k) {
            const Eigen::VectorXd e = (*encoder)(units[k].latent);
            train_mscs[k] = msc(e, train_gallery, theta);
            test_mscs[k] = msc(e, test_gallery, theta);
            if (train_mscs[k] > best_train) {
              best_train = train_mscs[k];
              best_k = k;
            }
          }
          for (std::size_t k = 0; k < units.size(); ++k)
            runs_csv << k << ',' << cfg.seeds[k] << ',' << fmt17(train_mscs[k]) << ','
                     << fmt17(test_mscs[k]) << ',' << (k == best_k ? 1 : 0) << '\n';
          write_file(out_path("single_results_" + tag + ".csv"), runs_csv.str());

          CoverageReport rep;
          MasterEntry chosen;
          chosen.latent = units[best_k].latent;
          chosen.embedding = (*encoder)(chosen.latent);
          chosen.marginal_msc = train_mscs[best_k];
          for (int r : train_gallery.matched_rows(chosen.embedding, theta))
            chosen.covered_ids.push_back(train_gallery.subject_ids()[static_cast<std::size_t>(r)]);
          rep.cumulative_coverage = chosen.marginal_msc;
          rep.masters.push_back(std::move(chosen));
          write_file(out_path("coverage_report_single_" + tag + ".csv"),
                     coverage_report_csv(rep));
          write_file(out_path("masters_single_" + tag + ".tsv"), masters_tsv(rep));

          row.train_msc = train_mscs[best_k];
          row.test_msc = test_mscs[best_k];
        } else {
          // greedy / clustered share the unit-caching inner optimizer.
          const bool greedy = cfg.mode == CoverageMode::kGreedy;
          const std::string mode_tag = greedy ? "greedy" : "clustered";
          const std::uint64_t seed_base =
              derive_seed(cfg.root_seed, greedy ? kGreedyStream : kClusteredStream);
          const int seeds_per_iter = static_cast<int>(cfg.seeds.size());
          auto counter = std::make_shared<int>(0);
          InnerOptimizer inner = [&, counter](const VerificationProblem& p,
                                              std::uint64_t seed) -> Eigen::VectorXd {
            const int idx = (*counter)++;
            const int iter = idx / seeds_per_iter;
            const int s = idx % seeds_per_iter;
            const std::string key = mode_tag + "/" + tag + "/i" + std::to_string(iter) + "/s" +
                                    std::to_string(s);
            const std::string trace = "trace_" + mode_tag + "_" + tag + "_i" +
                                      std::to_string(iter) + "_s" + std::to_string(s) + ".ndjson";
            const UnitResult u = run_unit(key, trace, [&](const SingleRunHooks* h) {
              return run_single_master(p, choice, cfg.budget, lambda, cfg.initial_sigma,
                                       cfg.filter, seed, h);
            });
            return u.latent;
          };

          const CoverageReport rep =
              greedy ? greedy_coverage(train_problem, cfg.coverage_iterations, inner,
                                       seeds_per_iter, seed_base)
                     : clustered_coverage_search(train_problem, cfg.coverage_clusters, inner,
                                                 seeds_per_iter, seed_base);
          write_file(out_path("coverage_report_" + mode_tag + "_" + tag + ".csv"),
                     coverage_report_csv(rep));
          write_file(out_path("masters_" + mode_tag + "_" + tag + ".tsv"), masters_tsv(rep));

          row.train_msc = rep.cumulative_coverage;
          row.test_msc = ordered_coverage(rep.masters, test_gallery, theta, nullptr, 0.0, nullptr);
        }
      } else {
        // Combined 2D+3D style conjunctive target.
        const PairedVerificationProblem full = make_paired_problem(*pworld, theta, theta_b);
        PairedVerificationProblem train_problem = full;
        train_problem.gallery_a = pworld->gallery_a.subset(split.train);
        train_problem.gallery_b = pworld->gallery_b.subset(split.train);
        const EmbeddingGallery test_a = pworld->gallery_a.subset(split.test);
        const EmbeddingGallery test_b = pworld->gallery_b.subset(split.test);

        const std::uint64_t seed_base = derive_seed(cfg.root_seed, kCombinedStream);
        const int seeds_per_iter = static_cast<int>(cfg.seeds.size());
        auto counter = std::make_shared<int>(0);
        PairedInnerOptimizer inner = [&, counter](const PairedVerificationProblem& p,
                                                  std::uint64_t seed) -> Eigen::VectorXd {
          const int idx = (*counter)++;
          const int iter = idx / seeds_per_iter;
          const int s = idx % seeds_per_iter;
          const std::string key =
              "combined/" + tag + "/i" + std::to_string(iter) + "/s" + std::to_string(s);
          const std::string trace = "trace_combined_" + tag + "_i" + std::to_string(iter) + "_s" +
                                    std::to_string(s) + ".ndjson";
          const UnitResult u = run_unit(key, trace, [&](const SingleRunHooks* h) {
            return run_single_master(p, choice, cfg.budget, lambda, cfg.initial_sigma, cfg.filter,
                                     seed, h);
          });
          return u.latent;
        };

        const CoverageReport rep = greedy_coverage(train_problem, cfg.coverage_iterations, inner,
                                                   seeds_per_iter, seed_base);
        write_file(out_path("coverage_report_combined_" + tag + ".csv"),
                   coverage_report_csv(rep));
        write_file(out_path("masters_combined_" + tag + ".tsv"), masters_tsv(rep));

        row.train_msc = rep.cumulative_coverage;
        row.test_msc =
            ordered_coverage(rep.masters, test_a, theta, &test_b, theta_b, &full.encoder_b);
      }

      summary_csv << to_string(cfg.mode) << ',' << to_string(choice) << ','
                  << fmt17(row.train_msc) << ',' << fmt17(row.test_msc) << '\n';
      outcome.rows.push_back(row);
      if (opts.verbosity > 0)
        log << to_string(cfg.mode) << " / " << to_string(choice) << ": train "
            << row.train_msc << "%, test " << row.test_msc << "%\n";
    }
  } catch (const HaltSignal&) {
    log << "halted after " << iterations_this_run
        << " iterations; resume with the checkpoint at " << ckpt_path << "\n";
    outcome.halted = true;
    return outcome;
  }

  write_file(out_path("summary.csv"), summary_csv.str());
  if (opts.verbosity > 0) {
    log << "\n  " << std::string(64, '-') << "\n";
    char buf[128];
    std::snprintf(buf, sizeof buf, "  %-10s %-18s %12s %12s", "mode", "optimizer", "train MSC",
                  "test MSC");
    log << buf << "\n  " << std::string(64, '-') << "\n";
    for (const auto& r : outcome.rows) {
      std::snprintf(buf, sizeof buf, "  %-10s %-18s %11.2f%% %11.2f%%",
                    to_string(r.mode).c_str(), to_string(r.optimizer).c_str(), r.train_msc,
                    r.test_msc);
      log << buf << "\n";
    }
    log << "  " << std::string(64, '-') << "\n";
  }
  persist();
  return outcome;
}

}  // namespace

ExperimentOutcome run_experiment(const ExperimentConfig& cfg, const RunOptions& opts,
                                 std::ostream& log) {
  CheckpointState st;
  st.config_text = dump_config(cfg);
  return run_core(cfg, opts, std::move(st), log);
}

ExperimentOutcome resume_experiment(const std::string& checkpoint_path, const RunOptions& opts,
                                    std::ostream& log) {
  CheckpointState st = load_checkpoint_file(checkpoint_path);
  const ExperimentConfig cfg = parse_config(st.config_text);
  if (opts.verbosity > 0)
    log << "resuming from " << checkpoint_path << " (" << st.completed.size()
        << " completed runs" << (st.active ? ", one in flight" : "") << ")\n";
  return run_core(cfg, opts, std::move(st), log);
}

}  // namespace mastercover
