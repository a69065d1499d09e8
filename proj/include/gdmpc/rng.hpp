#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace gdmpc {

// Deterministic random stream. Wraps std::mt19937_64 (bit-reproducible by the
// standard) and derives all variates with explicit formulas, so draws do not
// depend on the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // [0, 1), 53-bit resolution
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n); modulo bias is negligible for the index ranges used here
  std::size_t uniform_index(std::size_t n) { return static_cast<std::size_t>(engine_() % n); }

  // Box-Muller, two uniforms per draw, no cached partner
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // Exp(1)
  double exponential() {
    double u = uniform();
    while (u >= 1.0) u = uniform();
    return -std::log1p(-u);
  }

  std::vector<double> normal_vec(std::size_t n) {
    std::vector<double> out(n);
    for (auto& v : out) v = normal();
    return out;
  }

 private:
  std::mt19937_64 engine_;
};

// Stage seed derivation: FNV-1a over (master seed bytes, label bytes, index
// bytes) followed by a splitmix64 finalizer. Stable across platforms; no two
// (label, index) pairs share a stream.
std::uint64_t derive_seed(std::uint64_t master, std::string_view label, std::uint64_t index = 0);

}  // namespace gdmpc
