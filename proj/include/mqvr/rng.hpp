#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace mqvr {

using Rng = std::mt19937_64;

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives an independent generator from a base seed and a path of stream keys,
/// e.g. substream(seed, {repeat, video}). Same inputs always give the same stream.
inline Rng substream(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = mix64(seed);
  for (std::uint64_t k : keys) h = mix64(h ^ mix64(k + 0x632be59bd9b4e019ULL));
  return Rng(h);
}

/// Stream tags, so differently purposed substreams never collide.
namespace stream {
inline constexpr std::uint64_t kEvalSample = 0x45564131;     // "EVA1"
inline constexpr std::uint64_t kTrainShuffle = 0x54525348;   // "TRSH"
inline constexpr std::uint64_t kTrainBundle = 0x5452424e;    // "TRBN"
inline constexpr std::uint64_t kTrainCombine = 0x5452434d;   // "TRCM"
inline constexpr std::uint64_t kInit = 0x494e4954;           // "INIT"
inline constexpr std::uint64_t kSynthCentroid = 0x53594e43;  // "SYNC"
inline constexpr std::uint64_t kSynthVideo = 0x53594e56;     // "SYNV"
inline constexpr std::uint64_t kSynthCaption = 0x53594e51;   // "SYNQ"
inline constexpr std::uint64_t kSynthTransfer = 0x53594e54;  // "SYNT"
}  // namespace stream

}  // namespace mqvr
