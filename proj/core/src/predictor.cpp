#include "mastercover/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "mastercover/serialize.hpp"

namespace mastercover {

namespace {

constexpr std::uint32_t kMemoryMagic = 0x4d434d45;  // "MCME"
constexpr std::uint32_t kNetMagic = 0x4d434e45;     // "MCNE"
constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;
constexpr double kAdamLr = 1e-3;
constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;
constexpr int kBatchSize = 32;
constexpr int kHidden1 = 256;
constexpr int kHidden2 = 128;
constexpr std::uint64_t kReinitTag = 0x7265696e69742121ULL;

}  // namespace

// ---------------------------------------------------------------------------
// ReplayMemory

ReplayMemory::ReplayMemory(std::int64_t capacity) : capacity_(capacity) {
  if (capacity < 1) throw std::invalid_argument("ReplayMemory: capacity must be >= 1");
}

void ReplayMemory::insert(Eigen::VectorXd z, double fitness, GaussianRng& rng) {
  if (!std::isfinite(fitness)) throw std::invalid_argument("ReplayMemory::insert: non-finite fitness");
  if (entries_.empty() || fitness < entries_[best_index_].fitness) best_index_ = entries_.size();
  entries_.push_back({std::move(z), fitness});

  while (static_cast<std::int64_t>(entries_.size()) > capacity_) {
    // Uniform over everything except the best entry; swap-remove, storage
    // order carries no meaning.
    std::size_t victim = static_cast<std::size_t>(rng.integer(entries_.size() - 1));
    if (victim >= best_index_) ++victim;
    const std::size_t last = entries_.size() - 1;
    if (victim != last) {
      entries_[victim] = std::move(entries_[last]);
      if (best_index_ == last) best_index_ = victim;
    }
    entries_.pop_back();
  }
}

const ReplayMemory::Entry& ReplayMemory::best_entry() const {
  if (entries_.empty()) throw std::invalid_argument("ReplayMemory: empty");
  return entries_[best_index_];
}

double nearest_rank_percentile(std::vector<double> values, double p) {
  if (values.empty()) throw std::invalid_argument("nearest_rank_percentile: empty sample");
  if (!(p > 0.0) || !(p < 100.0))
    throw std::invalid_argument("nearest_rank_percentile: p must be in (0, 100)");
  std::sort(values.begin(), values.end());
  const auto n = static_cast<double>(values.size());
  auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * n));
  if (rank < 1) rank = 1;
  if (rank > values.size()) rank = values.size();
  return values[rank - 1];
}

double ReplayMemory::percentile_fitness(double p) const {
  std::vector<double> fits;
  fits.reserve(entries_.size());
  for (const auto& e : entries_) fits.push_back(e.fitness);
  return nearest_rank_percentile(std::move(fits), p);
}

std::vector<int> relabel(const ReplayMemory& memory, double p) {
  if (memory.empty()) return {};
  const double cut = memory.percentile_fitness(p);
  std::vector<int> labels(static_cast<std::size_t>(memory.size()));
  for (std::int64_t i = 0; i < memory.size(); ++i)
    labels[static_cast<std::size_t>(i)] = memory.entry(i).fitness < cut ? 1 : 0;
  return labels;
}

void ReplayMemory::save(std::ostream& os) const {
  BinaryWriter w(os);
  w.u32(kMemoryMagic);
  w.u32(1);
  w.i64(capacity_);
  w.u64(entries_.size());
  w.u64(best_index_);
  for (const auto& e : entries_) {
    w.vec(e.z);
    w.f64(e.fitness);
  }
}

ReplayMemory ReplayMemory::load(std::istream& is) {
  BinaryReader r(is);
  if (r.u32() != kMemoryMagic) throw std::runtime_error("not a replay memory blob");
  if (r.u32() != 1) throw std::runtime_error("unsupported replay memory version");
  ReplayMemory mem(r.i64());
  const std::uint64_t count = r.u64();
  const std::uint64_t best = r.u64();
  if (count > static_cast<std::uint64_t>(mem.capacity_))
    throw std::runtime_error("replay memory blob exceeds its capacity");
  mem.entries_.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    Entry e;
    e.z = r.vec();
    e.fitness = r.f64();
    mem.entries_.push_back(std::move(e));
  }
  if (best >= count && count > 0) throw std::runtime_error("replay memory blob is inconsistent");
  mem.best_index_ = best;
  return mem;
}

// ---------------------------------------------------------------------------
// PredictorNet

template <typename Scalar>
struct PredictorNetT<Scalar>::ForwardCache {
  Mat x, p1, xhat, bn_pre, h1, p2, h2;
  Vec inv_std, logits, probs;
  bool batch_stats = false;
};

namespace {

NetLayout make_layout(int input_dim) {
  NetLayout l;
  l.input_dim = input_dim;
  l.h1 = kHidden1;
  l.h2 = kHidden2;
  std::size_t off = 0;
  l.w1 = off; off += static_cast<std::size_t>(l.h1) * input_dim;
  l.b1 = off; off += l.h1;
  l.gamma = off; off += l.h1;
  l.beta = off; off += l.h1;
  l.w2 = off; off += static_cast<std::size_t>(l.h2) * l.h1;
  l.b2 = off; off += l.h2;
  l.w3 = off; off += l.h2;
  l.b3 = off; off += 1;
  l.total = off;
  return l;
}

}  // namespace

template <typename Scalar>
PredictorNetT<Scalar>::PredictorNetT(int input_dim, std::uint64_t init_seed)
    : layout_(make_layout(input_dim)), init_seed_(init_seed) {
  if (input_dim < 1) throw std::invalid_argument("PredictorNet: input_dim must be positive");
  init_params(init_seed);
}

template <typename Scalar>
void PredictorNetT<Scalar>::init_params(std::uint64_t seed) {
  GaussianRng rng(seed);
  params_ = Vec::Zero(static_cast<Eigen::Index>(layout_.total));

  auto uniform_fill = [&](std::size_t offset, std::size_t count, int fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = 0; i < count; ++i)
      params_[static_cast<Eigen::Index>(offset + i)] =
          static_cast<Scalar>((2.0 * rng.uniform() - 1.0) * bound);
  };
  uniform_fill(layout_.w1, static_cast<std::size_t>(layout_.h1) * layout_.input_dim, layout_.input_dim);
  uniform_fill(layout_.b1, static_cast<std::size_t>(layout_.h1), layout_.input_dim);
  params_.segment(static_cast<Eigen::Index>(layout_.gamma), layout_.h1).setOnes();
  params_.segment(static_cast<Eigen::Index>(layout_.beta), layout_.h1).setZero();
  uniform_fill(layout_.w2, static_cast<std::size_t>(layout_.h2) * layout_.h1, layout_.h1);
  uniform_fill(layout_.b2, static_cast<std::size_t>(layout_.h2), layout_.h1);
  uniform_fill(layout_.w3, static_cast<std::size_t>(layout_.h2), layout_.h2);
  uniform_fill(layout_.b3, 1, layout_.h2);

  adam_m_ = Vec::Zero(params_.size());
  adam_v_ = Vec::Zero(params_.size());
  adam_t_ = 0;
  running_mean_ = Vec::Zero(layout_.h1);
  running_var_ = Vec::Ones(layout_.h1);
}

template <typename Scalar>
std::uint64_t PredictorNetT<Scalar>::reinit_seed(std::uint64_t base_seed, int count) {
  return count == 0 ? base_seed
                    : derive_seed(base_seed, kReinitTag, static_cast<std::uint64_t>(count));
}

template <typename Scalar>
void PredictorNetT<Scalar>::reinitialize() {
  ++reinit_count_;
  init_params(reinit_seed(init_seed_, reinit_count_));
}

template <typename Scalar>
void PredictorNetT<Scalar>::set_parameters(const Vec& p) {
  if (p.size() != params_.size()) throw std::invalid_argument("set_parameters: size mismatch");
  params_ = p;
}

template <typename Scalar>
void PredictorNetT<Scalar>::forward(const Mat& inputs, bool training, ForwardCache& cache,
                                    bool update_running) {
  const auto B = inputs.rows();
  if (inputs.cols() != layout_.input_dim)
    throw std::invalid_argument("PredictorNet: wrong input dimension");
  const auto* p = params_.data();
  Eigen::Map<const Mat> W1(p + layout_.w1, layout_.h1, layout_.input_dim);
  Eigen::Map<const Vec> b1(p + layout_.b1, layout_.h1);
  Eigen::Map<const Vec> gamma(p + layout_.gamma, layout_.h1);
  Eigen::Map<const Vec> beta(p + layout_.beta, layout_.h1);
  Eigen::Map<const Mat> W2(p + layout_.w2, layout_.h2, layout_.h1);
  Eigen::Map<const Vec> b2(p + layout_.b2, layout_.h2);
  Eigen::Map<const Vec> w3(p + layout_.w3, layout_.h2);
  const Scalar b3 = params_[static_cast<Eigen::Index>(layout_.b3)];

  cache.x = inputs;
  cache.p1.noalias() = inputs * W1.transpose();
  cache.p1.rowwise() += b1.transpose();

  // Batch statistics need at least two samples; otherwise fall back to the
  // stored running statistics even in training mode.
  cache.batch_stats = training && B >= 2;
  Vec mean_used, var_used;
  Mat centered;
  if (cache.batch_stats) {
    mean_used = cache.p1.colwise().mean().transpose();
    centered = cache.p1.rowwise() - mean_used.transpose();
    var_used = centered.cwiseProduct(centered).colwise().mean().transpose();
    if (update_running) {
      const Scalar unbias = static_cast<Scalar>(B) / static_cast<Scalar>(B - 1);
      running_mean_ = (Scalar(1) - Scalar(kBnMomentum)) * running_mean_ + Scalar(kBnMomentum) * mean_used;
      running_var_ = (Scalar(1) - Scalar(kBnMomentum)) * running_var_ + Scalar(kBnMomentum) * (unbias * var_used);
    }
  } else {
    mean_used = running_mean_;
    var_used = running_var_;
    centered = cache.p1.rowwise() - mean_used.transpose();
  }
  cache.inv_std = (var_used.array() + Scalar(kBnEps)).rsqrt().matrix();
  cache.xhat.noalias() = centered * cache.inv_std.asDiagonal();
  cache.bn_pre.noalias() = cache.xhat * gamma.asDiagonal();
  cache.bn_pre.rowwise() += beta.transpose();

  auto elu = [](const Mat& m) -> Mat {
    return m.unaryExpr([](Scalar v) { return v > Scalar(0) ? v : Scalar(std::expm1(static_cast<double>(v))); });
  };
  cache.h1 = elu(cache.bn_pre);
  cache.p2.noalias() = cache.h1 * W2.transpose();
  cache.p2.rowwise() += b2.transpose();
  cache.h2 = elu(cache.p2);
  cache.logits.noalias() = cache.h2 * w3;
  cache.logits.array() += b3;
  cache.probs = cache.logits.unaryExpr([](Scalar v) {
    return static_cast<Scalar>(1.0 / (1.0 + std::exp(-static_cast<double>(v))));
  });
}

template <typename Scalar>
double PredictorNetT<Scalar>::backward(const ForwardCache& cache, const std::vector<int>& labels,
                                       Vec& grad) const {
  const auto B = cache.x.rows();
  if (static_cast<Eigen::Index>(labels.size()) != B)
    throw std::invalid_argument("PredictorNet: labels/batch size mismatch");

  const auto* p = params_.data();
  Eigen::Map<const Mat> W2(p + layout_.w2, layout_.h2, layout_.h1);
  Eigen::Map<const Vec> w3(p + layout_.w3, layout_.h2);
  Eigen::Map<const Vec> gamma(p + layout_.gamma, layout_.h1);

  grad = Vec::Zero(params_.size());
  auto* g = grad.data();
  Eigen::Map<Mat> gW1(g + layout_.w1, layout_.h1, layout_.input_dim);
  Eigen::Map<Vec> gb1(g + layout_.b1, layout_.h1);
  Eigen::Map<Vec> ggamma(g + layout_.gamma, layout_.h1);
  Eigen::Map<Vec> gbeta(g + layout_.beta, layout_.h1);
  Eigen::Map<Mat> gW2(g + layout_.w2, layout_.h2, layout_.h1);
  Eigen::Map<Vec> gb2(g + layout_.b2, layout_.h2);
  Eigen::Map<Vec> gw3(g + layout_.w3, layout_.h2);

  // Mean binary cross entropy, computed from logits for stability.
  double loss = 0.0;
  Vec dlogits(B);
  for (Eigen::Index i = 0; i < B; ++i) {
    const double o = static_cast<double>(cache.logits[i]);
    const double y = labels[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    loss += std::max(o, 0.0) - y * o + std::log1p(std::exp(-std::abs(o)));
    dlogits[i] = static_cast<Scalar>((1.0 / (1.0 + std::exp(-o)) - y) / static_cast<double>(B));
  }
  loss /= static_cast<double>(B);

  auto elu_deriv = [](const Mat& pre) -> Mat {
    return pre.unaryExpr([](Scalar v) {
      return v > Scalar(0) ? Scalar(1) : static_cast<Scalar>(std::exp(static_cast<double>(v)));
    });
  };

  gw3.noalias() = cache.h2.transpose() * dlogits;
  grad[static_cast<Eigen::Index>(layout_.b3)] = dlogits.sum();

  Mat dh2 = dlogits * w3.transpose();                       // B x h2
  Mat dp2 = dh2.cwiseProduct(elu_deriv(cache.p2));
  gW2.noalias() = dp2.transpose() * cache.h1;
  gb2 = dp2.colwise().sum().transpose();

  Mat dh1 = dp2 * W2;                                       // B x h1
  Mat dbn = dh1.cwiseProduct(elu_deriv(cache.bn_pre));
  ggamma = dbn.cwiseProduct(cache.xhat).colwise().sum().transpose();
  gbeta = dbn.colwise().sum().transpose();

  Mat dxhat = dbn * gamma.asDiagonal();
  Mat dp1;
  if (cache.batch_stats) {
    const Scalar invB = Scalar(1) / static_cast<Scalar>(B);
    Vec sum_dxhat = dxhat.colwise().sum().transpose();
    Vec sum_dxhat_xhat = dxhat.cwiseProduct(cache.xhat).colwise().sum().transpose();
    Mat tmp = static_cast<Scalar>(B) * dxhat;
    tmp.rowwise() -= sum_dxhat.transpose();
    tmp.noalias() -= cache.xhat * sum_dxhat_xhat.asDiagonal();
    dp1.noalias() = (invB * tmp) * cache.inv_std.asDiagonal();
  } else {
    dp1.noalias() = dxhat * cache.inv_std.asDiagonal();
  }
  gW1.noalias() = dp1.transpose() * cache.x;
  gb1 = dp1.colwise().sum().transpose();
  return loss;
}

template <typename Scalar>
typename PredictorNetT<Scalar>::Vec PredictorNetT<Scalar>::score(const Mat& inputs) const {
  ForwardCache cache;
  const_cast<PredictorNetT*>(this)->forward(inputs, /*training=*/false, cache,
                                            /*update_running=*/false);
  const Scalar lo = std::is_same_v<Scalar, float> ? Scalar(1e-7) : Scalar(1e-12);
  return cache.probs.unaryExpr([lo](Scalar v) { return std::min(Scalar(1) - lo, std::max(lo, v)); });
}

template <typename Scalar>
double PredictorNetT<Scalar>::loss_on_batch(const Mat& inputs, const std::vector<int>& labels) const {
  ForwardCache cache;
  const_cast<PredictorNetT*>(this)->forward(inputs, /*training=*/true, cache,
                                            /*update_running=*/false);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < cache.logits.size(); ++i) {
    const double o = static_cast<double>(cache.logits[i]);
    const double y = labels[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    loss += std::max(o, 0.0) - y * o + std::log1p(std::exp(-std::abs(o)));
  }
  return loss / static_cast<double>(cache.logits.size());
}

template <typename Scalar>
typename PredictorNetT<Scalar>::Vec PredictorNetT<Scalar>::gradient_on_batch(
    const Mat& inputs, const std::vector<int>& labels) const {
  ForwardCache cache;
  const_cast<PredictorNetT*>(this)->forward(inputs, /*training=*/true, cache,
                                            /*update_running=*/false);
  Vec grad;
  backward(cache, labels, grad);
  return grad;
}

template <typename Scalar>
double PredictorNetT<Scalar>::train_epoch(const Mat& inputs, const std::vector<int>& labels,
                                          GaussianRng& rng) {
  const auto n = inputs.rows();
  if (n < 1) throw std::invalid_argument("train_epoch: need at least one sample");
  if (static_cast<Eigen::Index>(labels.size()) != n)
    throw std::invalid_argument("train_epoch: labels/sample count mismatch");

  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = idx.size() - 1; i > 0; --i)
    std::swap(idx[i], idx[static_cast<std::size_t>(rng.integer(i + 1))]);

  double loss_sum = 0.0;
  int batches = 0;
  ForwardCache cache;
  Vec grad;
  Mat xb;
  std::vector<int> yb;
  for (Eigen::Index start = 0; start < n; start += kBatchSize) {
    const Eigen::Index bs = std::min<Eigen::Index>(kBatchSize, n - start);
    xb.resize(bs, layout_.input_dim);
    yb.resize(static_cast<std::size_t>(bs));
    for (Eigen::Index i = 0; i < bs; ++i) {
      xb.row(i) = inputs.row(idx[static_cast<std::size_t>(start + i)]);
      yb[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(idx[static_cast<std::size_t>(start + i)])];
    }
    forward(xb, /*training=*/true, cache, /*update_running=*/true);
    loss_sum += backward(cache, yb, grad);
    ++batches;

    ++adam_t_;
    const Scalar bc1 = Scalar(1) - static_cast<Scalar>(std::pow(kAdamBeta1, static_cast<double>(adam_t_)));
    const Scalar bc2 = Scalar(1) - static_cast<Scalar>(std::pow(kAdamBeta2, static_cast<double>(adam_t_)));
    adam_m_.array() = Scalar(kAdamBeta1) * adam_m_.array() + Scalar(1.0 - kAdamBeta1) * grad.array();
    adam_v_.array() = Scalar(kAdamBeta2) * adam_v_.array() + Scalar(1.0 - kAdamBeta2) * grad.array().square();
    params_.array() -= Scalar(kAdamLr) * (adam_m_.array() / bc1) /
                       ((adam_v_.array() / bc2).sqrt() + Scalar(kAdamEps));
  }
  return loss_sum / batches;
}

template <typename Scalar>
std::uint64_t PredictorNetT<Scalar>::parameter_checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(params_.data());
  const std::size_t n = sizeof(Scalar) * static_cast<std::size_t>(params_.size());
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename Scalar>
void PredictorNetT<Scalar>::save(std::ostream& os) const {
  BinaryWriter w(os);
  w.u32(kNetMagic);
  w.u32(1);
  w.u32(sizeof(Scalar) == 4 ? 0 : 1);
  w.u32(static_cast<std::uint32_t>(layout_.input_dim));
  w.u64(init_seed_);
  w.u32(static_cast<std::uint32_t>(reinit_count_));
  w.i64(adam_t_);
  auto write_vec = [&](const Vec& v) {
    w.u64(static_cast<std::uint64_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) w.f64(static_cast<double>(v[i]));
  };
  write_vec(params_);
  write_vec(adam_m_);
  write_vec(adam_v_);
  write_vec(running_mean_);
  write_vec(running_var_);
}

template <typename Scalar>
PredictorNetT<Scalar> PredictorNetT<Scalar>::load(std::istream& is) {
  BinaryReader r(is);
  if (r.u32() != kNetMagic) throw std::runtime_error("not a predictor net blob");
  if (r.u32() != 1) throw std::runtime_error("unsupported predictor net version");
  const std::uint32_t scalar_tag = r.u32();
  if (scalar_tag != (sizeof(Scalar) == 4 ? 0u : 1u))
    throw std::runtime_error("predictor net blob has mismatched scalar type");
  const int input_dim = static_cast<int>(r.u32());
  const std::uint64_t seed = r.u64();
  PredictorNetT net(input_dim, seed);
  net.reinit_count_ = static_cast<int>(r.u32());
  net.adam_t_ = r.i64();
  auto read_vec = [&](Vec& v) {
    const std::uint64_t n = r.u64();
    v.resize(static_cast<Eigen::Index>(n));
    for (std::uint64_t i = 0; i < n; ++i) v[static_cast<Eigen::Index>(i)] = static_cast<Scalar>(r.f64());
  };
  read_vec(net.params_);
  read_vec(net.adam_m_);
  read_vec(net.adam_v_);
  read_vec(net.running_mean_);
  read_vec(net.running_var_);
  if (net.params_.size() != static_cast<Eigen::Index>(net.layout_.total))
    throw std::runtime_error("predictor net blob is inconsistent");
  return net;
}

template class PredictorNetT<float>;
template class PredictorNetT<double>;

// ---------------------------------------------------------------------------
// Adapter

Eigen::VectorXd NetSuccessPredictor::score_batch(const Eigen::MatrixXd& pool) {
  const Eigen::MatrixXf xf = pool.cast<float>();
  return net_.score(xf).cast<double>();
}

double NetSuccessPredictor::train_epoch(const Eigen::MatrixXd& samples,
                                        const std::vector<int>& labels, GaussianRng& rng) {
  const Eigen::MatrixXf xf = samples.cast<float>();
  return net_.train_epoch(xf, labels, rng);
}

// ---------------------------------------------------------------------------
// Filtering

void validate(const FilterConfig& cfg) {
  if (cfg.oversample < 1) throw std::invalid_argument("FilterConfig: oversample must be >= 1");
  if (!(cfg.percentile > 0.0) || !(cfg.percentile < 100.0))
    throw std::invalid_argument("FilterConfig: percentile must be in (0, 100)");
  if (!(cfg.accuracy_threshold > 0.0) || !(cfg.accuracy_threshold < 1.0))
    throw std::invalid_argument("FilterConfig: accuracy threshold must be in (0, 1)");
  if (cfg.patience < 1) throw std::invalid_argument("FilterConfig: patience must be >= 1");
  if (!(cfg.warmup_fraction >= 0.0) || !(cfg.warmup_fraction <= 1.0))
    throw std::invalid_argument("FilterConfig: warmup fraction must be in [0, 1]");
  if (cfg.memory_capacity < 1) throw std::invalid_argument("FilterConfig: memory capacity must be >= 1");
}

std::vector<SelectedCandidate> sample_by_softmax(const Eigen::VectorXd& scores, int take,
                                                 GaussianRng& rng) {
  const int n = static_cast<int>(scores.size());
  if (take < 1) throw std::invalid_argument("sample_by_softmax: take must be >= 1");
  if (take > n) throw std::invalid_argument("sample_by_softmax: take exceeds pool size");

  std::vector<SelectedCandidate> out;
  out.reserve(static_cast<std::size_t>(take));
  if (take == n) {
    for (int i = 0; i < n; ++i) out.push_back({i, scores[i]});
    return out;
  }

  Eigen::VectorXd w = (scores.array() - scores.maxCoeff()).exp();
  std::vector<bool> taken(static_cast<std::size_t>(n), false);
  double total = w.sum();
  for (int k = 0; k < take; ++k) {
    double u = rng.uniform() * total;
    int pick = -1;
    for (int i = 0; i < n; ++i) {
      if (taken[static_cast<std::size_t>(i)]) continue;
      u -= w[i];
      if (u < 0.0) {
        pick = i;
        break;
      }
    }
    if (pick < 0) {  // numeric tail: take the last free index
      for (int i = n - 1; i >= 0; --i)
        if (!taken[static_cast<std::size_t>(i)]) {
          pick = i;
          break;
        }
    }
    taken[static_cast<std::size_t>(pick)] = true;
    total -= w[pick];
    out.push_back({pick, scores[pick]});
  }
  return out;
}

std::vector<SelectedCandidate> filter_candidates(SuccessPredictor& predictor,
                                                 const std::vector<Candidate>& pool, int take,
                                                 GaussianRng& rng) {
  if (pool.empty()) throw std::invalid_argument("filter_candidates: empty pool");
  if (take > static_cast<int>(pool.size()))
    throw std::invalid_argument("filter_candidates: take exceeds pool size");
  Eigen::MatrixXd x(static_cast<Eigen::Index>(pool.size()), pool.front().x.size());
  for (std::size_t i = 0; i < pool.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = pool[i].x;
  const Eigen::VectorXd scores = predictor.score_batch(x);
  return sample_by_softmax(scores, take, rng);
}

double audit_accuracy(const std::vector<double>& scores, const std::vector<double>& fitnesses,
                      const ReplayMemory& memory, double p) {
  if (scores.empty() || scores.size() != fitnesses.size())
    throw std::invalid_argument("audit_accuracy: empty or mismatched batch");
  if (memory.empty()) throw std::invalid_argument("audit_accuracy: empty memory");
  const double cut = memory.percentile_fitness(p);
  int correct = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted_fit = scores[i] > 0.5;
    const bool actually_fit = fitnesses[i] < cut;
    if (predicted_fit == actually_fit) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(scores.size());
}

// ---------------------------------------------------------------------------
// Assisted loop

AssistedRunResult assisted_generation_loop(EvolutionState& state, SuccessPredictor& predictor,
                                           ReplayMemory& memory, const FilterConfig& cfg,
                                           ObjectiveHandle& objective, const RunBudget& budget,
                                           GaussianRng& aux_rng, const LoopControl* control) {
  validate(cfg);
  const int lambda = state.lambda;
  if (cfg.oversample < lambda)
    throw std::invalid_argument("assisted_generation_loop: oversample must be >= lambda");
  const std::int64_t planned = budget.max_evaluations / lambda;
  if (planned < 1)
    throw std::invalid_argument("assisted_generation_loop: budget below one generation");
  const auto warmup_iters =
      static_cast<std::int64_t>(std::floor(cfg.warmup_fraction * static_cast<double>(planned)));

  AssistedRunResult res;
  res.best_fitness = std::numeric_limits<double>::infinity();
  std::int64_t start_iteration = 0;
  int consecutive_low = 0;
  if (control) {
    start_iteration = control->start_iteration;
    res.best_fitness = control->initial_best;
    res.best_x = control->initial_best_x;
    consecutive_low = control->initial_consecutive_low;
    res.reinit_count = control->initial_reinit_count;
  }
  if (state.iteration != start_iteration)
    throw std::invalid_argument("assisted_generation_loop: state iteration does not match start");
  res.records.reserve(static_cast<std::size_t>(planned - start_iteration));
  const int n = state.dimension();

  Eigen::MatrixXd train_x;

  for (std::int64_t it = start_iteration; it < planned; ++it) {
    const bool filtered = it >= warmup_iters;

    std::vector<EvaluatedCandidate> batch;
    batch.reserve(static_cast<std::size_t>(lambda));
    std::vector<double> sel_scores;

    if (!filtered) {
      auto cands = lmmaes_ask(state, lambda);
      for (auto& c : cands) batch.push_back({std::move(c.x), std::move(c.z), 0.0});
    } else {
      auto pool = lmmaes_ask(state, cfg.oversample);
      const auto picks = filter_candidates(predictor, pool, lambda, aux_rng);
      sel_scores.reserve(picks.size());
      for (const auto& s : picks) {
        auto& c = pool[static_cast<std::size_t>(s.pool_index)];
        batch.push_back({std::move(c.x), std::move(c.z), 0.0});
        sel_scores.push_back(s.score);
      }
    }

    std::vector<double> fits(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const double f = objective.evaluate(batch[i].x);
      batch[i].fitness = f;
      fits[i] = f;
      if (f < res.best_fitness) {
        res.best_fitness = f;
        res.best_x = batch[i].x;
      }
    }

    // Audit against the memory the predictor was trained on, before the new
    // batch is folded in.
    double accuracy = std::numeric_limits<double>::quiet_NaN();
    bool audited = false;
    if (filtered && !memory.empty()) {
      accuracy = audit_accuracy(sel_scores, fits, memory, cfg.percentile);
      audited = true;
    }

    for (auto& c : batch) memory.insert(c.x, c.fitness, aux_rng);

    const auto labels = relabel(memory, cfg.percentile);
    const auto msize = memory.size();
    if (train_x.rows() != msize || train_x.cols() != n) train_x.resize(msize, n);
    for (std::int64_t i = 0; i < msize; ++i) train_x.row(i) = memory.entry(i).z;
    const double loss = predictor.train_epoch(train_x, labels, aux_rng);

    lmmaes_tell(state, batch);

    bool reinit = false;
    if (audited) {
      if (accuracy < cfg.accuracy_threshold)
        ++consecutive_low;
      else
        consecutive_low = 0;
      if (consecutive_low >= cfg.patience) {
        predictor.reinitialize();
        consecutive_low = 0;
        reinit = true;
        ++res.reinit_count;
      }
    }

    res.best_trace.push_back(res.best_fitness);
    res.records.push_back({it, res.best_fitness, msize, accuracy, reinit, loss, filtered});

    if (control && control->on_iteration) {
      const LoopSnapshot snap{res.records.back(), res.best_x, res.best_fitness, consecutive_low,
                              res.reinit_count};
      if (!control->on_iteration(snap)) {
        res.consecutive_low = consecutive_low;
        res.evaluations = (it + 1 - start_iteration) * lambda;
        res.halted = true;
        return res;
      }
    }
  }
  res.consecutive_low = consecutive_low;
  res.evaluations = (planned - start_iteration) * lambda;
  return res;
}

}  // namespace mastercover
