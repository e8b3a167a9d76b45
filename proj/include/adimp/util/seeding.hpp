// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

namespace adimp::util {

// splitmix64 finalizer; decorrelates nearby seeds.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derive an independent stream from a base seed and a stream index.
inline uint64_t mix_seed(uint64_t base, uint64_t stream) { return mix64(base + mix64(stream)); }

}  // namespace adimp::util
