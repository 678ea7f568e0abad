#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace pasttense {

// Counter-based generator.  Output i of a stream with key K is
//   mix64(K + (i + 1) * 0x9E3779B97F4A7C15)
// where mix64 is the SplitMix64 finalizer.  This is exactly SplitMix64 with
// the state exposed as (key, counter), so any position is addressable and the
// stream is identical on every platform (pure 64-bit integer arithmetic).
//
// Substreams: Rng(seed).substream("dropout") derives a fresh key from the
// parent key and the FNV-1a hash of the purpose tag, so features that draw
// randomness (init, dropout, shuffling, resampling, sampling) never perturb
// each other's streams.
class Rng {
 public:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

  explicit Rng(std::uint64_t seed = 0) : seed_(seed), key_(mix64(seed ^ 0x5851F42D4C957F2DULL)) {}

  static constexpr std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  static constexpr std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001B3ULL;
    }
    return h;
  }

  Rng substream(std::string_view tag) const { return from_key(mix64(key_ ^ mix64(fnv1a(tag))), seed_); }
  Rng substream(std::string_view tag, std::uint64_t index) const {
    return substream(tag).substream_index(index);
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64() { return mix64(key_ + (++counter_) * kGamma); }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) return 0;
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  template <class Vec>
  void shuffle(Vec& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  static Rng from_key(std::uint64_t key, std::uint64_t seed) {
    Rng r;
    r.seed_ = seed;
    r.key_ = key;
    return r;
  }
  Rng substream_index(std::uint64_t index) const { return from_key(mix64(key_ ^ mix64(index + kGamma)), seed_); }

  std::uint64_t seed_ = 0;
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace pasttense
