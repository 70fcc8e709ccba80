#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace moegan {

// Splitmix64 stream. The whole state is a single u64, so checkpoints can
// store and restore it exactly and resumed runs replay the same draws.
class RngStream {
 public:
  RngStream() = default;
  explicit RngStream(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    ++draws_;
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller. No spare caching, so the state stays a
  // single u64 between any two draws.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

  // Standard Gumbel(0,1): -log(-log u), u clamped away from {0, 1}.
  double gumbel() {
    double u = uniform();
    if (u < kUniformClamp) u = kUniformClamp;
    if (u > 1.0 - kUniformClamp) u = 1.0 - kUniformClamp;
    return -std::log(-std::log(u));
  }

  // Index in [0, n). Modulo bias is negligible for desk-scale n.
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(next_u64() % n); }

  std::uint64_t state() const { return state_; }
  void set_state(std::uint64_t s) { state_ = s; }

  // Number of raw draws so far; used by tests to assert that a phase
  // consumed fresh randomness.
  std::uint64_t draws() const { return draws_; }

  static constexpr double kUniformClamp = 1e-10;

 private:
  std::uint64_t state_ = 0x853c49e6748fea9bull;
  std::uint64_t draws_ = 0;
};

// Seed for a named stream derived from the master seed (FNV-1a over the
// name, then one splitmix round to decorrelate).
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view stream_name) {
  std::uint64_t h = 1469598103934665603ull ^ master;
  for (char c : stream_name) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  RngStream s(h);
  return s.next_u64();
}

// Seed for a per-event stream (e.g. the evaluation at iteration k), so that
// evaluation never perturbs the training streams.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view stream_name,
                                 std::uint64_t index) {
  RngStream s(derive_seed(master, stream_name) ^ (0x9e3779b97f4a7c15ull * (index + 1)));
  return s.next_u64();
}

}  // namespace moegan
