#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace memesearch {

// Seeded generator with platform-independent derived distributions.
//
// The engine is std::mt19937_64, whose output sequence is fixed by the
// standard. The standard library distributions are not, so every draw goes
// through the helpers below:
//   uniform()        53 high bits of one engine word, scaled to [0, 1)
//   below(n)         Lemire's multiply-shift with rejection, unbiased
//   normal()         Box-Muller on two uniform() draws, one value per call
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::size_t below(std::size_t n);
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::mt19937_64 engine_;
};

// Named sub-generator seeds: derive_seed(run_seed, "folds", r) is stable no
// matter which other streams a run consumes.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream,
                          std::uint64_t index = 0);

inline Rng make_rng(std::uint64_t seed, std::string_view stream,
                    std::uint64_t index = 0) {
  return Rng(derive_seed(seed, stream, index));
}

}  // namespace memesearch
