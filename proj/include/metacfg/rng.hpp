#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace metacfg {

// SplitMix64 (Steele, Lea, Flood 2014). The state is a plain counter advanced
// by the golden-ratio increment; each output is a bijective mix of the counter.
// Every draw below is defined bit-for-bit in terms of next_u64(), so streams
// are reproducible on any platform and compiler.
class Rng {
 public:
  static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;

  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  static constexpr std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t next_u64() {
    state_ += kGamma;
    return mix(state_);
  }

  // Uniform integer in [0, bound) by Lemire's multiply-shift with rejection.
  std::uint64_t uniform(std::uint64_t bound) {
    if (bound <= 1) return 0;
    unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * bound;
    auto low = static_cast<std::uint64_t>(m);
    if (low < bound) {
      const std::uint64_t threshold = (0 - bound) % bound;
      while (low < threshold) {
        m = static_cast<unsigned __int128>(next_u64()) * bound;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform_real() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  bool coin(double p = 0.5) { return uniform_real() < p; }

  // Standard normal by Box-Muller; the second variate is discarded so every
  // call consumes exactly two u64 draws.
  double normal() {
    double u1 = uniform_real();
    const double u2 = uniform_real();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t state() const { return state_; }
  void set_state(std::uint64_t s) { state_ = s; }

 private:
  std::uint64_t state_;
};

// Seed for item `index` of stream `stream` under `base`. Items never share a
// counter sequence in practice because the derived seeds are full 64-bit mixes.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream,
                                    std::uint64_t index) {
  std::uint64_t z = Rng::mix(base + Rng::kGamma);
  z = Rng::mix(z ^ (stream * 0xd1b54a32d192ed03ULL + 1));
  return Rng::mix(z ^ (index * 0xa0761d6478bd642fULL + 2));
}

// Named seed streams keep train / test / probe / GA sentences disjoint.
enum class SeedStream : std::uint64_t {
  kTrain = 1,
  kTest = 2,
  kProbe = 3,
  kGrammaticalAccuracy = 4,
  kPrefixCoin = 5,
  kModelInit = 6,
  kGeneration = 7,
  kMisc = 8,
};

constexpr std::uint64_t derive_seed(std::uint64_t base, SeedStream stream,
                                    std::uint64_t index) {
  return derive_seed(base, static_cast<std::uint64_t>(stream), index);
}

// FNV-1a 64-bit; used for grammar, vocabulary and checkpoint fingerprints.
class Fnv1a {
 public:
  void update(std::string_view bytes) {
    for (unsigned char c : bytes) {
      hash_ ^= c;
      hash_ *= 0x100000001b3ULL;
    }
  }
  void update(const void* data, std::size_t size) {
    update(std::string_view(static_cast<const char*>(data), size));
  }
  std::uint64_t digest() const { return hash_; }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

inline std::uint64_t fnv1a(std::string_view bytes) {
  Fnv1a h;
  h.update(bytes);
  return h.digest();
}

}  // namespace metacfg
