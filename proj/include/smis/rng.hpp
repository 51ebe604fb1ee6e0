#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace smis {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent seed for item `index` of stream `stream` under a base seed.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index) {
  return splitmix64(splitmix64(base ^ splitmix64(stream)) + index);
}

// Well-known stream ids.
namespace streams {
inline constexpr std::uint64_t train_batch = 1;
inline constexpr std::uint64_t held_out = 2;
inline constexpr std::uint64_t diagnostics = 3;
inline constexpr std::uint64_t dataset = 4;
inline constexpr std::uint64_t pseudo_label = 5;
inline constexpr std::uint64_t init = 6;
inline constexpr std::uint64_t mean_latent = 7;
inline constexpr std::uint64_t baseline = 8;
}  // namespace streams

inline std::vector<float> standard_normal(std::uint64_t seed, int dim) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<float> v(dim);
  for (auto& x : v) x = static_cast<float>(dist(rng));
  return v;
}

}  // namespace smis
