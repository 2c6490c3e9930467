#include "mastercover/rng.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace mastercover {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t root, std::uint64_t a, std::uint64_t b,
                          std::uint64_t c) {
  std::uint64_t h = splitmix64(root);
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ b);
  h = splitmix64(h ^ c);
  return h;
}

GaussianRng::GaussianRng(std::uint64_t seed) : engine_(seed) {}

double GaussianRng::uniform() {
  // 53-bit mantissa, [0, 1)
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::uint64_t GaussianRng::integer(std::uint64_t bound) {
  if (bound == 0) throw std::invalid_argument("integer(): bound must be > 0");
  // rejection sampling, unbiased
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t v;
  do {
    v = engine_();
  } while (v >= limit);
  return v % bound;
}

double GaussianRng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double f = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * f;
  has_spare_ = true;
  return u * f;
}

void GaussianRng::save(std::ostream& os) const {
  os << engine_ << '\n' << (has_spare_ ? 1 : 0);
  if (has_spare_) {
    os << ' ';
    os.precision(17);
    os << spare_;
  }
  os << '\n';
}

void GaussianRng::load(std::istream& is) {
  is >> engine_;
  int flag = 0;
  is >> flag;
  has_spare_ = (flag != 0);
  if (has_spare_) is >> spare_;
  if (!is) throw std::runtime_error("GaussianRng::load: malformed stream");
}

bool GaussianRng::operator==(const GaussianRng& other) const {
  if (engine_ != other.engine_ || has_spare_ != other.has_spare_) return false;
  return !has_spare_ || spare_ == other.spare_;
}

}  // namespace mastercover
