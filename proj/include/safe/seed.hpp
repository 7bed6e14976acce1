#pragma once

#include "safe/types.hpp"

#include <cstdint>
#include <initializer_list>
#include <string_view>

namespace safe {

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Labeled seed fan-out: derive_seed(master, "fed", {round, shard}). The
/// result depends only on its arguments, never on call order.
constexpr Seed derive_seed(Seed seed, std::string_view label,
                           std::initializer_list<std::uint64_t> indices = {}) noexcept {
  std::uint64_t h = mix64(seed ^ mix64(fnv1a(label)));
  for (std::uint64_t i : indices) h = mix64(h ^ mix64(i + 0x632be59bd9b4e019ULL));
  return h;
}

}  // namespace safe
