// Copyright 2026 The nbsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>

namespace nbsep::detail {

// SplitMix64 finaliser over (seed, slot); gives each consumer its own stream.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t slot) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (slot + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace nbsep::detail
