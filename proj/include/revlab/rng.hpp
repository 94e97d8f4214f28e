#pragma once

#include <cstdint>
#include <vector>

namespace revlab {

// xoshiro256++ with splitmix64 seeding. We own the generator (rather than using
// std::mt19937 + std::distributions) so that seed-replay results are bit-exact by
// construction and not at the mercy of libstdc++ internals.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t next_u64();
  // uniform in [0, 1), 53-bit resolution
  double uniform();
  // uniform integer in [0, n), n > 0
  int64_t uniform_int(int64_t n);
  // standard normal via Box-Muller (second value cached)
  double gaussian();
  // derived independent stream; (seed, salt) -> child is a pure function
  Rng child(uint64_t salt) const;

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
      int64_t j = uniform_int(i + 1);
      std::swap(v[i], v[j]);
    }
  }

  // k distinct values from [0, n), order random
  std::vector<int64_t> sample_without_replacement(int64_t n, int64_t k);

 private:
  uint64_t s_[4];
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// splitmix64 avalanche step, also used for config hashing and stream derivation
uint64_t mix64(uint64_t x);
uint64_t hash_combine(uint64_t a, uint64_t b);

}  // namespace revlab
