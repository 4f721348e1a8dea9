#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>

namespace rpt {

// SplitMix64 finalizer; whitens seeds so nearby master seeds give unrelated streams.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Seed for subtask `index` of a master seed. Depends only on (master, index),
// so parallel subtasks are reproducible regardless of scheduling order.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  return splitmix64(master ^ splitmix64(index + 0x9e3779b97f4a7c15ull));
}

// mt19937_64 behind a fixed bits-to-double conversion. The engine's output
// sequence is pinned by the standard, so streams are identical across
// platforms and standard libraries (std::uniform_real_distribution is not).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1), 53-bit resolution.
  double unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n).
  int uniform_int(int n) {
    if (n <= 0) throw std::invalid_argument("Rng::uniform_int: n must be positive");
    int i = static_cast<int>(unit() * static_cast<double>(n));
    return i < n ? i : n - 1;
  }

  // Bernoulli(p).
  bool bernoulli(double p) { return unit() < p; }

  // Index ~ probs, by inverse CDF. probs must be a normalized distribution.
  int sample(std::span<const double> probs) {
    double u = unit();
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      acc += probs[i];
      if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size()) - 1;  // rounding leftovers land on the last entry
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace rpt
