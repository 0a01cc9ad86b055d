#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <random>

namespace fgfa {

// Deterministic random source. All distributions are implemented explicitly
// (rejection sampling, Box-Muller) so the byte stream depends only on the
// seed, not on the standard library's distribution internals.
class Rng {
 public:
  explicit Rng(std::uint32_t seed) : gen_(seed) {}

  std::uint32_t next_u32() { return gen_(); }

  // Unbiased integer in [0, bound).
  std::uint32_t uniform_u32(std::uint32_t bound);

  // Inclusive integer range.
  int uniform_int(int lo, int hi);

  // [0, 1) with 53-bit resolution.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; generates values in pairs.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = uniform_u32(static_cast<std::uint32_t>(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Draw k distinct values from `pool` (order randomized).
  std::vector<int> sample_without_replacement(std::vector<int> pool, int k);

  std::string state() const;
  void set_state(const std::string& s);

 private:
  std::mt19937 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace fgfa
