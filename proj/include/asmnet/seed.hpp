/**
 * @file seed.hpp
 * @brief Seed derivation so every stream depends only on (seed, identity).
 */
#pragma once

#include <cstdint>
#include <initializer_list>

namespace asmnet {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

/// Folds a list of identifiers into a base seed.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = splitmix64(base);
  for (auto p : parts)
    h = splitmix64(h ^ splitmix64(p + 0x632be59bd9b4e019ull));
  return h;
}

} // namespace asmnet
