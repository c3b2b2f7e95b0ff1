#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace lego {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to give every (seed, stream, index) its own
// generator so results do not depend on iteration or thread order.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream,
                                    std::uint64_t index = 0) {
  return mix64(mix64(mix64(seed) ^ stream) ^ index);
}

// Well-separated stream tags.
namespace streams {
inline constexpr std::uint64_t dataset = 0x64617461;   // "data"
inline constexpr std::uint64_t init = 0x696e6974;      // "init"
inline constexpr std::uint64_t batches = 0x62617463;   // "batc"
inline constexpr std::uint64_t replay = 0x7265706c;    // "repl"
inline constexpr std::uint64_t dropout = 0x64726f70;   // "drop"
}  // namespace streams

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

}  // namespace lego
