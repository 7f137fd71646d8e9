#pragma once

#include <cstdint>
#include <random>

namespace lbpo {

using Rng = std::mt19937_64;

/// Independent random streams fanned out from one master seed.
enum class Stream : std::uint64_t {
  kEnvironment = 1,
  kExploration = 2,
  kQFit = 3,
  kInit = 4,
  kOracle = 5,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline Rng make_stream(std::uint64_t master_seed, Stream stream) {
  return Rng(splitmix64(master_seed ^ splitmix64(static_cast<std::uint64_t>(stream))));
}

inline Rng make_stream(std::uint64_t master_seed, Stream stream, std::uint64_t index) {
  return Rng(splitmix64(splitmix64(master_seed ^ splitmix64(static_cast<std::uint64_t>(stream))) + index));
}

}  // namespace lbpo
