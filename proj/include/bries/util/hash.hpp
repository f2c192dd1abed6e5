#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace bries::util {

// 64-bit FNV-1a. Used for content digests and for deterministic mock
// behaviour; std::hash is not stable across standard libraries.
constexpr std::uint64_t fnv1a64(std::string_view data,
                                std::uint64_t seed = 0xcbf29ce484222325ULL) noexcept {
  std::uint64_t h = seed;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value);

inline std::string digest(std::string_view data) { return hex64(fnv1a64(data)); }

}  // namespace bries::util
