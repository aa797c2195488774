#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace afloc {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives an independent substream seed from a root seed and a path of
/// labels (rp_id, phase tag, draw index, ...).
inline std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x6a09e667f3bcc909ULL;
  for (auto p : parts) h = splitmix64(h ^ splitmix64(p));
  return h;
}

/// Stable tags for the named randomness substreams.
namespace stream {
inline constexpr std::uint64_t kSubsample = 0x5355425341ULL;
inline constexpr std::uint64_t kGanInit = 0x47414e49ULL;
inline constexpr std::uint64_t kGanTrain = 0x47414e54ULL;
inline constexpr std::uint64_t kGanGenerate = 0x47414e47ULL;
inline constexpr std::uint64_t kClassifier = 0x434c4153ULL;
inline constexpr std::uint64_t kNoise = 0x4e4f4953ULL;
inline constexpr std::uint64_t kSynthPath = 0x53594e50ULL;
inline constexpr std::uint64_t kSynthPacket = 0x53594e4bULL;
}  // namespace stream

}  // namespace afloc
