#pragma once

#include <cstdint>

namespace mftop {

// Counter-based deterministic generator (splitmix64 finalizer). Every draw
// is a pure function of (key, counter), so batches are reproducible for a
// fixed seed regardless of evaluation order or threading.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream)
      : key_(mix(seed + 0x9e3779b97f4a7c15ull) ^ mix(stream + 0x7f4a7c15f39cc060ull)) {}

  explicit CounterRng(std::uint64_t seed) : CounterRng(seed, 0) {}

  // Derive an independent stream, e.g. one per optimization phase/iteration.
  CounterRng stream(std::uint64_t substream) const {
    CounterRng r(0, 0);
    r.key_ = mix(key_ ^ mix(substream + 0x9e3779b97f4a7c15ull));
    return r;
  }

  std::uint64_t bits(std::uint64_t counter) const {
    return mix(key_ ^ (counter * 0xd1342543de82ef95ull + 0x2545f4914f6cdd1dull));
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform(std::uint64_t counter) const {
    return static_cast<double>(bits(counter) >> 11) * 0x1.0p-53;
  }

  double uniform(std::uint64_t counter, double lo, double hi) const {
    return lo + (hi - lo) * uniform(counter);
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint64_t key_;
};

}  // namespace mftop
