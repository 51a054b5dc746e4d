#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace gedi {

using Rng = std::mt19937_64;

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

/// Independent generator for a named purpose ("mask", "init", "batch",
/// "folds", ...) derived from one root seed.
inline Rng substream(std::uint64_t root_seed, std::string_view name) {
  return Rng(detail::splitmix64(root_seed ^ detail::fnv1a(name)));
}

}  // namespace gedi
