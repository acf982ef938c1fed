#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace fedchain {

// All randomness in the project flows through this wrapper. std::mt19937_64 is
// fully specified by the standard; the raw draws are converted to doubles and
// bounded ints here rather than through std distributions, whose output is
// implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1) with 53 bits of precision.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform in [0, n). Modulo bias is negligible for the n used here.
  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 eng_;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Derives independent, label-addressed RNG streams from one master seed so
// that adding a consumer never perturbs the draws of existing ones.
struct SeedSource {
  std::uint64_t root;

  std::uint64_t stream_seed(std::string_view label) const {
    return splitmix64(root ^ fnv1a64(label));
  }

  Rng stream(std::string_view label) const { return Rng(stream_seed(label)); }
};

}  // namespace fedchain
