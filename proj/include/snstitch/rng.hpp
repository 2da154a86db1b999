#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

#include "snstitch/errors.hpp"
#include "snstitch/matrix.hpp"

namespace snstitch {

// splitmix64: counter-based, 64-bit state. The u64 stream is identical across
// platforms for the same seed; floating-point derivations on top of it are
// identical across runs of the same binary.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n). Modulo bias is negligible for n << 2^64.
  std::size_t below(std::size_t n) {
    if (n == 0) throw IndexError("Rng::below: empty range");
    return static_cast<std::size_t>(next_u64() % n);
  }

  // Standard normal via Box-Muller, with the spare value cached.
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Matrix with i.i.d. N(0, std^2) entries, filled row-major.
inline Matrix gaussian(Rng& rng, std::size_t rows, std::size_t cols, double std) {
  if (std <= 0.0) throw NumericalError("gaussian: std must be positive");
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = std * rng.gaussian();
  return m;
}

// Named sub-seed so components (data, init, sampler) can be reproduced in
// isolation from the one experiment seed.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view label) {
  std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
  for (char c : label) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  Rng mix(base ^ h);
  return mix.next_u64();
}

}  // namespace snstitch
