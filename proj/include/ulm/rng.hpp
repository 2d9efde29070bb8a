#pragma once

#include <cstdint>
#include <random>

namespace ulm {

/// SplitMix64 finaliser; used to derive independent child seeds from a
/// parent seed and a stream label, so per-frame and per-vessel generators
/// do not depend on execution order.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t stream, std::uint64_t index = 0) {
  return splitmix64(splitmix64(parent ^ splitmix64(stream)) + index);
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t parent, std::uint64_t stream, std::uint64_t index = 0) {
  return Rng(derive_seed(parent, stream, index));
}

// Stream labels.
enum SeedStream : std::uint64_t {
  kStreamVessel = 1,
  kStreamFrameNoise = 2,
  kStreamTissue = 3,
  kStreamChannelNoise = 4,
  kStreamSplit = 5,
  kStreamBubbleIntensity = 6,
};

}  // namespace ulm
