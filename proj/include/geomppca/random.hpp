#pragma once

#include <array>
#include <cstdint>

#include <boost/random/normal_distribution.hpp>
#include <boost/random/taus88.hpp>

namespace geomppca {

/// Engine used for every Monte Carlo stream. Cheap to seed, so every bridge
/// and sample owns its own stream.
using Rng = boost::random::taus88;

/// Deterministic stream key derived from a master seed and a stream index
/// (splitmix64 finalizer over both words). Streams derived this way do not
/// depend on scheduling.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  z ^= z >> 31;
  z += 0x632be59bd9b4e019ULL ^ index;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Standard normal draws (ziggurat) from a seeded stream.
class NormalStream {
 public:
  explicit NormalStream(std::uint64_t seed) {
    const std::uint64_t extra = derive_seed(seed, 0x7a05ULL);
    std::array<std::uint32_t, 3> words{static_cast<std::uint32_t>(seed),
                                       static_cast<std::uint32_t>(seed >> 32),
                                       static_cast<std::uint32_t>(extra)};
    auto first = words.begin();
    engine_.seed(first, words.end());
  }
  double operator()() { return dist_(engine_); }

 private:
  Rng engine_;
  boost::random::normal_distribution<double> dist_{0.0, 1.0};
};

}  // namespace geomppca
