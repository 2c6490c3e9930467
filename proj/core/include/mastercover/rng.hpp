#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>

namespace mastercover {

/// Mixes a root seed with up to three stream tags into an independent child
/// seed. Used to carve named substreams (world, optimizer, predictor, split)
/// out of one experiment seed so that A/B comparisons only differ in the
/// component under test.
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t a,
                          std::uint64_t b = 0, std::uint64_t c = 0);

/// Seeded random source with an explicitly serializable state, including the
/// cached second output of the polar Gaussian transform. std::normal_distribution
/// is avoided on purpose: its internal cache is not portable across
/// save/restore, which would break bit-identical resume.
class GaussianRng {
 public:
  GaussianRng() : GaussianRng(0) {}
  explicit GaussianRng(std::uint64_t seed);

  double normal();
  double uniform();  // [0, 1)
  std::uint64_t integer(std::uint64_t bound);  // uniform in [0, bound)

  std::uint64_t raw() { return engine_(); }

  void save(std::ostream& os) const;
  void load(std::istream& is);

  bool operator==(const GaussianRng& other) const;

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace mastercover
