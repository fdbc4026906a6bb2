#pragma once

#include <cstdint>
#include <random>

#include "divshape/domain.hpp"

namespace divshape::testing {

inline AdmissibleFamily unit_family() {
  AdmissibleFamily fam;
  fam.B = Region::disk({0.0, 0.0}, 0.9);
  fam.D = Region::box({-1.0, -1.0}, {1.0, 1.0});
  return fam;
}

inline AdmissibleFamily wide_family() {
  AdmissibleFamily fam;
  fam.B = Region::disk({0.0, 0.0}, 2.0);
  fam.D = Region::box({-3.0, -3.0}, {3.0, 3.0});
  fam.sup = 4.0;
  return fam;
}

/// Seeded generator for property tests.
class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

}  // namespace divshape::testing
