#include "mastercover/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "mastercover/evolution.hpp"

namespace mastercover {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(trim(cur));
  return out;
}

std::int64_t to_i64(const std::string& where, const std::string& v) {
  try {
    std::size_t pos = 0;
    const std::int64_t r = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return r;
  } catch (...) {
    throw ConfigError(where + ": expected an integer, got '" + v + "'");
  }
}

std::uint64_t to_u64(const std::string& where, const std::string& v) {
  try {
    std::size_t pos = 0;
    const std::uint64_t r = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return r;
  } catch (...) {
    throw ConfigError(where + ": expected an unsigned integer, got '" + v + "'");
  }
}

int to_int(const std::string& where, const std::string& v) {
  return static_cast<int>(to_i64(where, v));
}

double to_double(const std::string& where, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return r;
  } catch (...) {
    throw ConfigError(where + ": expected a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& where, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(where + ": expected true/false, got '" + v + "'");
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

OptimizerChoice optimizer_from_string(const std::string& s) {
  if (s == "lmmaes") return OptimizerChoice::kLmmaEs;
  if (s == "lmmaes+predictor") return OptimizerChoice::kLmmaEsPredictor;
  if (s == "random") return OptimizerChoice::kRandom;
  throw ConfigError("optimizer.algorithm: unknown algorithm '" + s + "'");
}

}  // namespace

std::string to_string(OptimizerChoice c) {
  switch (c) {
    case OptimizerChoice::kLmmaEs: return "lmmaes";
    case OptimizerChoice::kLmmaEsPredictor: return "lmmaes+predictor";
    case OptimizerChoice::kRandom: return "random";
  }
  return "?";
}

std::string file_tag(OptimizerChoice c) {
  switch (c) {
    case OptimizerChoice::kLmmaEs: return "lmmaes";
    case OptimizerChoice::kLmmaEsPredictor: return "lmmaes_pred";
    case OptimizerChoice::kRandom: return "random";
  }
  return "unknown";
}

std::string to_string(ThresholdPolicy p) {
  switch (p) {
    case ThresholdPolicy::kFarTarget: return "far";
    case ThresholdPolicy::kEer: return "eer";
    case ThresholdPolicy::kCombinedGrid: return "combined";
  }
  return "?";
}

std::string to_string(CoverageMode m) {
  switch (m) {
    case CoverageMode::kSingle: return "single";
    case CoverageMode::kGreedy: return "greedy";
    case CoverageMode::kClustered: return "clustered";
    case CoverageMode::kCombined: return "combined";
  }
  return "?";
}

int ExperimentConfig::resolved_population() const {
  return population > 0 ? population : default_lambda(world.latent_dim);
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  using Setter = std::function<void(const std::string&, const std::string&)>;
  std::map<std::string, std::map<std::string, Setter>> table;

  auto& world = table["world"];
  world["identities"] = [&](const std::string& w, const std::string& v) { cfg.world.n_identities = to_int(w, v); };
  world["clusters"] = [&](const std::string& w, const std::string& v) { cfg.world.cluster_count = to_int(w, v); };
  world["latent_dim"] = [&](const std::string& w, const std::string& v) { cfg.world.latent_dim = to_int(w, v); };
  world["embedding_dim"] = [&](const std::string& w, const std::string& v) { cfg.world.embedding_dim = to_int(w, v); };
  world["encoder_layers"] = [&](const std::string& w, const std::string& v) { cfg.world.encoder_layers = to_int(w, v); };
  world["encoder_hidden"] = [&](const std::string& w, const std::string& v) { cfg.world.encoder_hidden = to_int(w, v); };
  world["separation"] = [&](const std::string& w, const std::string& v) { cfg.world.cluster_separation = to_double(w, v); };
  world["spread"] = [&](const std::string& w, const std::string& v) { cfg.world.cluster_spread = to_double(w, v); };
  world["noise"] = [&](const std::string& w, const std::string& v) { cfg.world.noise_scale = to_double(w, v); };
  world["genuine_probes"] = [&](const std::string& w, const std::string& v) { cfg.world.genuine_probes = to_int(w, v); };
  world["impostor_pairs"] = [&](const std::string& w, const std::string& v) { cfg.world.impostor_pairs = to_int(w, v); };
  world["metric"] = [&](const std::string& w, const std::string& v) {
    try {
      cfg.world.metric = metric_from_string(v);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(w + ": " + e.what());
    }
  };
  world["normalize"] = [&](const std::string& w, const std::string& v) { cfg.world.normalize_embeddings = to_bool(w, v); };

  auto& opt = table["optimizer"];
  opt["algorithm"] = [&](const std::string& w, const std::string& v) {
    cfg.optimizers.clear();
    for (const auto& name : split(v, ',')) {
      if (name.empty()) throw ConfigError(w + ": empty algorithm name");
      cfg.optimizers.push_back(optimizer_from_string(name));
    }
  };
  opt["budget"] = [&](const std::string& w, const std::string& v) { cfg.budget = to_i64(w, v); };
  opt["population"] = [&](const std::string& w, const std::string& v) { cfg.population = to_int(w, v); };
  opt["sigma0"] = [&](const std::string& w, const std::string& v) { cfg.initial_sigma = to_double(w, v); };

  auto& pred = table["predictor"];
  pred["oversample"] = [&](const std::string& w, const std::string& v) { cfg.filter.oversample = to_int(w, v); };
  pred["percentile"] = [&](const std::string& w, const std::string& v) { cfg.filter.percentile = to_double(w, v); };
  pred["accuracy_threshold"] = [&](const std::string& w, const std::string& v) { cfg.filter.accuracy_threshold = to_double(w, v); };
  pred["patience"] = [&](const std::string& w, const std::string& v) { cfg.filter.patience = to_int(w, v); };
  pred["warmup"] = [&](const std::string& w, const std::string& v) { cfg.filter.warmup_fraction = to_double(w, v); };
  pred["memory_capacity"] = [&](const std::string& w, const std::string& v) { cfg.filter.memory_capacity = to_i64(w, v); };

  auto& thr = table["threshold"];
  thr["policy"] = [&](const std::string& w, const std::string& v) {
    if (v == "far") cfg.threshold_policy = ThresholdPolicy::kFarTarget;
    else if (v == "eer") cfg.threshold_policy = ThresholdPolicy::kEer;
    else if (v == "combined") cfg.threshold_policy = ThresholdPolicy::kCombinedGrid;
    else throw ConfigError(w + ": unknown policy '" + v + "'");
  };
  thr["far_target"] = [&](const std::string& w, const std::string& v) { cfg.far_target = to_double(w, v); };
  thr["grid_resolution"] = [&](const std::string& w, const std::string& v) { cfg.grid_resolution = to_int(w, v); };

  auto& cov = table["coverage"];
  cov["mode"] = [&](const std::string& w, const std::string& v) {
    if (v == "single") cfg.mode = CoverageMode::kSingle;
    else if (v == "greedy") cfg.mode = CoverageMode::kGreedy;
    else if (v == "clustered") cfg.mode = CoverageMode::kClustered;
    else if (v == "combined") cfg.mode = CoverageMode::kCombined;
    else throw ConfigError(w + ": unknown mode '" + v + "'");
  };
  cov["iterations"] = [&](const std::string& w, const std::string& v) { cfg.coverage_iterations = to_int(w, v); };
  cov["clusters"] = [&](const std::string& w, const std::string& v) { cfg.coverage_clusters = to_int(w, v); };

  auto& run = table["run"];
  run["seeds"] = [&](const std::string& w, const std::string& v) {
    cfg.seeds.clear();
    for (const auto& s : split(v, ',')) {
      if (s.empty()) throw ConfigError(w + ": empty seed entry");
      cfg.seeds.push_back(to_u64(w, s));
    }
  };
  run["root_seed"] = [&](const std::string& w, const std::string& v) { cfg.root_seed = to_u64(w, v); };
  run["output"] = [&](const std::string&, const std::string& v) { cfg.output_dir = v; };
  run["checkpoint_every"] = [&](const std::string& w, const std::string& v) { cfg.checkpoint_every = to_i64(w, v); };
  run["train_ratio"] = [&](const std::string& w, const std::string& v) {
    const auto parts = split(v, ':');
    if (parts.size() != 2) throw ConfigError(w + ": expected 'train:test', got '" + v + "'");
    cfg.train_ratio_num = to_i64(w, parts[0]);
    cfg.train_ratio_den = to_i64(w, parts[1]);
  };
  run["write_traces"] = [&](const std::string& w, const std::string& v) { cfg.write_traces = to_bool(w, v); };

  std::istringstream is(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": malformed section header");
      section = trim(t.substr(1, t.size() - 2));
      if (table.find(section) == table.end())
        throw ConfigError("line " + std::to_string(lineno) + ": unknown section [" + section + "]");
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (section.empty())
      throw ConfigError("line " + std::to_string(lineno) + ": key outside any section");
    auto& sec = table[section];
    const auto it = sec.find(key);
    if (it == sec.end())
      throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + section + "." + key + "'");
    it->second(section + "." + key, value);
  }

  validate(cfg);
  return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

std::string dump_config(const ExperimentConfig& cfg) {
  std::ostringstream os;
  os << "[world]\n"
     << "identities = " << cfg.world.n_identities << "\n"
     << "clusters = " << cfg.world.cluster_count << "\n"
     << "latent_dim = " << cfg.world.latent_dim << "\n"
     << "embedding_dim = " << cfg.world.embedding_dim << "\n"
     << "encoder_layers = " << cfg.world.encoder_layers << "\n"
     << "encoder_hidden = " << cfg.world.encoder_hidden << "\n"
     << "separation = " << fmt_double(cfg.world.cluster_separation) << "\n"
     << "spread = " << fmt_double(cfg.world.cluster_spread) << "\n"
     << "noise = " << fmt_double(cfg.world.noise_scale) << "\n"
     << "genuine_probes = " << cfg.world.genuine_probes << "\n"
     << "impostor_pairs = " << cfg.world.impostor_pairs << "\n"
     << "metric = " << to_string(cfg.world.metric) << "\n"
     << "normalize = " << (cfg.world.normalize_embeddings ? "true" : "false") << "\n\n";

  os << "[optimizer]\n"
     << "algorithm = ";
  for (std::size_t i = 0; i < cfg.optimizers.size(); ++i)
    os << (i ? "," : "") << to_string(cfg.optimizers[i]);
  os << "\n"
     << "budget = " << cfg.budget << "\n"
     << "population = " << cfg.resolved_population() << "\n"
     << "sigma0 = " << fmt_double(cfg.initial_sigma) << "\n\n";

  os << "[predictor]\n"
     << "oversample = " << cfg.filter.oversample << "\n"
     << "percentile = " << fmt_double(cfg.filter.percentile) << "\n"
     << "accuracy_threshold = " << fmt_double(cfg.filter.accuracy_threshold) << "\n"
     << "patience = " << cfg.filter.patience << "\n"
     << "warmup = " << fmt_double(cfg.filter.warmup_fraction) << "\n"
     << "memory_capacity = " << cfg.filter.memory_capacity << "\n\n";

  os << "[threshold]\n"
     << "policy = " << to_string(cfg.threshold_policy) << "\n"
     << "far_target = " << fmt_double(cfg.far_target) << "\n"
     << "grid_resolution = " << cfg.grid_resolution << "\n\n";

  os << "[coverage]\n"
     << "mode = " << to_string(cfg.mode) << "\n"
     << "iterations = " << cfg.coverage_iterations << "\n"
     << "clusters = " << cfg.coverage_clusters << "\n\n";

  os << "[run]\n"
     << "seeds = ";
  for (std::size_t i = 0; i < cfg.seeds.size(); ++i) os << (i ? "," : "") << cfg.seeds[i];
  os << "\n"
     << "root_seed = " << cfg.root_seed << "\n"
     << "output = " << cfg.output_dir << "\n"
     << "checkpoint_every = " << cfg.checkpoint_every << "\n"
     << "train_ratio = " << cfg.train_ratio_num << ":" << cfg.train_ratio_den << "\n"
     << "write_traces = " << (cfg.write_traces ? "true" : "false") << "\n";
  return os.str();
}

void validate(const ExperimentConfig& cfg) {
  try {
    validate(cfg.world);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("world: ") + e.what());
  }
  if (cfg.optimizers.empty()) throw ConfigError("optimizer.algorithm: need at least one algorithm");
  if (cfg.population < 0) throw ConfigError("optimizer.population: must be >= 0");
  if (cfg.population > 0 && cfg.population < 2)
    throw ConfigError("optimizer.population: must be >= 2");
  const int lambda = cfg.resolved_population();
  if (cfg.budget < lambda)
    throw ConfigError("optimizer.budget: " + std::to_string(cfg.budget) +
                      " evaluations is below one full generation (population " +
                      std::to_string(lambda) + ")");
  if (!(cfg.initial_sigma > 0.0)) throw ConfigError("optimizer.sigma0: must be > 0");

  try {
    validate(cfg.filter);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("predictor: ") + e.what());
  }
  const bool uses_predictor =
      std::any_of(cfg.optimizers.begin(), cfg.optimizers.end(),
                  [](OptimizerChoice c) { return c == OptimizerChoice::kLmmaEsPredictor; });
  if (uses_predictor && cfg.filter.oversample < lambda)
    throw ConfigError("predictor.oversample: must be >= population (" + std::to_string(lambda) + ")");

  if (!(cfg.far_target > 0.0) || !(cfg.far_target <= 1.0))
    throw ConfigError("threshold.far_target: must be in (0, 1]");
  if (cfg.grid_resolution < 2) throw ConfigError("threshold.grid_resolution: must be >= 2");

  if (cfg.mode == CoverageMode::kCombined && cfg.threshold_policy != ThresholdPolicy::kCombinedGrid)
    throw ConfigError("coverage.mode combined requires threshold.policy = combined");
  if (cfg.mode != CoverageMode::kCombined && cfg.threshold_policy == ThresholdPolicy::kCombinedGrid)
    throw ConfigError("threshold.policy combined requires coverage.mode = combined");

  if (cfg.coverage_iterations < 1) throw ConfigError("coverage.iterations: must be >= 1");
  if (cfg.coverage_clusters < 1) throw ConfigError("coverage.clusters: must be >= 1");

  if (cfg.seeds.empty()) throw ConfigError("run.seeds: need at least one seed");
  if (cfg.train_ratio_num < 1 || cfg.train_ratio_den < 1)
    throw ConfigError("run.train_ratio: both parts must be >= 1");
  const std::int64_t n = cfg.world.n_identities;
  const std::int64_t train =
      n * cfg.train_ratio_num / (cfg.train_ratio_num + cfg.train_ratio_den);
  if (train < 1 || n - train < 1)
    throw ConfigError("run.train_ratio: split leaves an empty train or test set");
  if (cfg.mode == CoverageMode::kClustered && cfg.coverage_clusters > train)
    throw ConfigError("coverage.clusters: more clusters than training identities");
  if (cfg.checkpoint_every < 0) throw ConfigError("run.checkpoint_every: must be >= 0");
}

}  // namespace mastercover
