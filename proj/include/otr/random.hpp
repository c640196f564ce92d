#pragma once

#include <cstdint>
#include <random>

namespace otr {

using Rng = std::mt19937_64;

// Stream tags for derive_seed. Every consumer of randomness draws from its own
// stream so that changing one stage never perturbs another.
enum class Stream : std::uint64_t {
  kData = 1,
  kSearch = 2,
  kGeneration = 3,
  kPolish = 4,
  kBootstrapResample = 5,
  kBootstrapSearch = 6,
  kReplication = 7,
  kTruthOracle = 8,
  kCrossFit = 9,
};

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Counter-based seed derivation: the seed for (master, stream, index) depends
// only on those three values, never on how many draws other streams consumed.
constexpr std::uint64_t derive_seed(std::uint64_t master, Stream stream,
                                    std::uint64_t index = 0) {
  return mix64(mix64(master ^ mix64(static_cast<std::uint64_t>(stream))) + index);
}

inline Rng make_rng(std::uint64_t master, Stream stream, std::uint64_t index = 0) {
  return Rng(derive_seed(master, stream, index));
}

}  // namespace otr
