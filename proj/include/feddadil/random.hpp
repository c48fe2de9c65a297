#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <string_view>
#include <vector>

namespace feddadil {

using Rng = std::mt19937_64;

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view text, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

/// Independent generator for the named substream `name`/`index` of `root`.
/// Every random draw in the library goes through one of these so that an
/// experiment is a pure function of its root seed.
inline Rng substream(std::uint64_t root, std::string_view name, std::uint64_t index = 0) {
  std::uint64_t s = detail::splitmix64(root);
  s = detail::splitmix64(s ^ detail::fnv1a(name));
  s = detail::splitmix64(s ^ index);
  return Rng(s);
}

/// Root seed for a named component, for APIs that take a seed rather than a
/// generator.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view name) {
  return detail::splitmix64(detail::splitmix64(root) ^ detail::fnv1a(name));
}

inline std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

}  // namespace feddadil
