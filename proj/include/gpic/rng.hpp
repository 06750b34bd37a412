// Copyright (c) 2026 the gpic authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>

namespace gpic {

// splitmix64 mixing step, used for seed derivation only.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Derives an independent stream seed from a master seed and a stream index
// (sample index, training step, ...). Pure function: the same (seed, salt,
// index) triple always yields the same stream.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t salt,
                                 std::uint64_t index = 0) {
  std::uint64_t s = master ^ (salt * 0x9e3779b97f4a7c15ULL);
  s += index * 0xd1b54a32d192ed03ULL;
  splitmix64(s);
  return splitmix64(s);
}

// Stream salts. Each logical consumer of randomness gets its own stream so
// that replaying any one of them is independent of the others.
namespace seed_salt {
inline constexpr std::uint64_t kSample = 0x5a4d504cULL;    // per-image sampling
inline constexpr std::uint64_t kTrainBatch = 0x42415443ULL;
inline constexpr std::uint64_t kTrainNoise = 0x4e4f4953ULL;
inline constexpr std::uint64_t kValidation = 0x56414c49ULL;
inline constexpr std::uint64_t kParamInit = 0x494e4954ULL;
inline constexpr std::uint64_t kFourierB = 0x464f5552ULL;
inline constexpr std::uint64_t kDataGen = 0x44415447ULL;
inline constexpr std::uint64_t kFeatures = 0x46454154ULL;
}  // namespace seed_salt

// Deterministic random stream: mt19937_64 core (fully specified by the
// standard) with our own uniform/normal mappings so that draws do not depend
// on the standard library's distribution implementations.
//
// Draw discipline: uniform() consumes one engine output; normal() and every
// pair of values produced by normal_fill() consume two.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t raw() { return eng_(); }

  // Uniform on [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  // Uniform on (0, 1]; used where log() must not see zero.
  double uniform_pos() {
    return static_cast<double>((eng_() >> 11) + 1) * 0x1.0p-53;
  }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Modulo bias is < 2^-44 for the n used here (dataset sizes); acceptable.
    return eng_() % n;
  }

  // Standard normal via Box-Muller. Consumes two engine outputs and discards
  // the sine branch, keeping the stream position a pure function of the call
  // count.
  double normal() {
    double u1 = uniform_pos();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  // Fills `out` with standard normals, using both Box-Muller branches.
  template <class S>
  void normal_fill(std::span<S> out) {
    std::size_t i = 0;
    while (i + 1 < out.size()) {
      double u1 = uniform_pos();
      double u2 = uniform();
      double r = std::sqrt(-2.0 * std::log(u1));
      double a = 6.283185307179586 * u2;
      out[i] = static_cast<S>(r * std::cos(a));
      out[i + 1] = static_cast<S>(r * std::sin(a));
      i += 2;
    }
    if (i < out.size()) out[i] = static_cast<S>(normal());
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace gpic
