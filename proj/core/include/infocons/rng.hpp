#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace infocons {

// Deterministic random source shared by every stochastic operation.
//
// The engine is std::mt19937_64, whose output sequence is fixed by the C++
// standard. The conversions to doubles are done here rather than with the
// <random> distributions, which are implementation-defined:
//   uniform()  : top 53 bits scaled by 2^-53, in [0, 1)
//   normal()   : Box-Muller on two uniform_open() draws, cosine branch only
//   gumbel()   : -log(-log(e)), e = uniform_open()
//   index(n)   : rejection sampling on 64-bit words
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }
  double uniform();
  double uniform_open();
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  double gumbel();
  std::size_t index(std::size_t n);

  // Independent child stream; the child seed is a splitmix64 hash of
  // (seed, stream), so forks do not depend on how far this stream advanced.
  Rng fork(std::uint64_t stream) const;

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[index(i)]);
    }
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace infocons
