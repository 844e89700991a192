#pragma once

#include <cstdint>
#include <string_view>

namespace tokrl {

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// FNV-1a, used for vocabulary and config fingerprints.
constexpr std::uint64_t fnv1a(std::string_view bytes,
                              std::uint64_t h = 0xcbf29ce484222325ULL) noexcept {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Counter-based generator ("splitmix64-ctr"). A stream is a 64-bit key; the
/// i-th draw is mix64(key ^ mix64(i)). Streams are split by hashing a tag into
/// the key, so every (seed, worker, step, token) tuple owns an independent,
/// platform-independent value with no shared state between workers.
class CounterRng {
 public:
  explicit constexpr CounterRng(std::uint64_t key = 0) noexcept : key_(mix64(key)) {}

  constexpr CounterRng split(std::uint64_t tag) const noexcept {
    CounterRng child;
    child.key_ = mix64(key_ ^ mix64(tag ^ 0xd1b54a32d192ed03ULL));
    return child;
  }
  CounterRng split(std::string_view tag) const noexcept { return split(fnv1a(tag)); }

  constexpr std::uint64_t bits_at(std::uint64_t counter) const noexcept {
    return mix64(key_ ^ mix64(counter));
  }
  // Uniform on [0, 1) with 53 bits of resolution.
  constexpr double uniform_at(std::uint64_t counter) const noexcept {
    return static_cast<double>(bits_at(counter) >> 11) * 0x1.0p-53;
  }

  std::uint64_t next_bits() noexcept { return bits_at(counter_++); }
  double next_uniform() noexcept { return uniform_at(counter_++); }
  // Uniform integer in [0, n) by rejection; n > 0.
  std::uint64_t next_below(std::uint64_t n) noexcept {
    const std::uint64_t limit = (~std::uint64_t{0}) - (~std::uint64_t{0}) % n;
    std::uint64_t r;
    do {
      r = next_bits();
    } while (r >= limit);
    return r % n;
  }
  double next_uniform(double lo, double hi) noexcept { return lo + (hi - lo) * next_uniform(); }

  std::uint64_t key() const noexcept { return key_; }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace tokrl
