#pragma once

#include <cstdint>

namespace egoattn {

/// Counter-based, splittable random generator.
///
/// The i-th draw of a stream is a pure function of (key, i), so a stream can
/// be re-created anywhere from its key and every run is reproducible given
/// the seed. split() derives statistically independent child streams without
/// advancing the parent.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0);

  std::uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);
  double normal();
  bool bernoulli(double p);

  Rng split(std::uint64_t key) const;

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t z);

}  // namespace egoattn
