#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace flexireg {

// Deterministic 64-bit hash (FNV-1a). Used for substream derivation,
// stub-encoder keys, and config/artifact hashing.
std::uint64_t fnv1a64(std::string_view s);
std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t seed = 14695981039346656037ull);

// splitmix64-based generator with explicit, platform-pinned distributions.
// All randomness in the project flows through this type so that runs are
// bit-reproducible regardless of the standard library in use.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  // Named substream: independent generator derived from a root seed.
  static Rng substream(std::uint64_t root_seed, std::string_view name);

  std::uint64_t next_u64();
  double uniform();                       // [0, 1)
  double uniform(double lo, double hi);   // [lo, hi)
  double normal(double mean = 0.0, double stddev = 1.0);  // Box-Muller
  // integer in [0, n)
  std::uint64_t uniform_index(std::uint64_t n);
  // k indices sampled without replacement from [0, n); k <= n
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_index(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace flexireg
