#pragma once

#include <cstdint>
#include <random>

namespace panelq {

// SplitMix64 finalizer; decorrelates nearby keys.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// One independent stream per (seed, replication, role) triple, so draws never
// depend on thread scheduling or on how many values other roles consumed.
enum class StreamRole : std::uint64_t {
  U = 0,  // level-1 uniforms
  V = 1,  // level-2 uniforms
  X = 2,  // covariate draws
  Z = 3,  // cluster covariate draws
  T = 4,  // panel-length draws
};

inline std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t rep, StreamRole role) {
  const std::uint64_t key =
      splitmix64(splitmix64(splitmix64(seed) ^ rep) ^ static_cast<std::uint64_t>(role));
  return std::mt19937_64(key);
}

// Uniform on the open interval (0,1): 53-bit mantissa centered on half-steps,
// so 0 and 1 are unreachable and quantile transforms stay finite.
inline double uniform01(std::mt19937_64& gen) {
  return (static_cast<double>(gen() >> 11) + 0.5) * 0x1.0p-53;
}

}  // namespace panelq
