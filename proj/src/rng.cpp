#include "revlab/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace revlab {

uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

uint64_t hash_combine(uint64_t a, uint64_t b) { return mix64(a ^ (mix64(b) + 0x9e3779b97f4a7c15ull)); }

Rng::Rng(uint64_t seed) {
  // splitmix64 expansion; guarantees a nonzero state
  uint64_t x = seed;
  for (auto& s : s_) {
    x += 0x9e3779b97f4a7c15ull;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    s = z ^ (z >> 31);
  }
}

static inline uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

uint64_t Rng::next_u64() {
  uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
  uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

int64_t Rng::uniform_int(int64_t n) {
  if (n <= 0) throw std::invalid_argument("Rng::uniform_int: n must be positive");
  // Lemire's multiply-shift with rejection; unbiased and branch-light
  uint64_t un = static_cast<uint64_t>(n);
  uint64_t x = next_u64();
  __uint128_t m = static_cast<__uint128_t>(x) * un;
  uint64_t l = static_cast<uint64_t>(m);
  if (l < un) {
    uint64_t t = (-un) % un;
    while (l < t) {
      x = next_u64();
      m = static_cast<__uint128_t>(x) * un;
      l = static_cast<uint64_t>(m);
    }
  }
  return static_cast<int64_t>(m >> 64);
}

double Rng::gaussian() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = 0.0;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 2.0 * M_PI * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

Rng Rng::child(uint64_t salt) const {
  // derive from the immutable state words so child() is const and repeatable
  uint64_t h = hash_combine(hash_combine(s_[0], s_[1]), hash_combine(s_[2], salt));
  return Rng(h);
}

std::vector<int64_t> Rng::sample_without_replacement(int64_t n, int64_t k) {
  if (k > n) throw std::invalid_argument("sample_without_replacement: k > n");
  // partial Fisher-Yates over an index vector
  std::vector<int64_t> idx(n);
  for (int64_t i = 0; i < n; ++i) idx[i] = i;
  for (int64_t i = 0; i < k; ++i) {
    int64_t j = i + uniform_int(n - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  return idx;
}

}  // namespace revlab
