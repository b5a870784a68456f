#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace npdose {

//! splitmix64 finalizer; used to derive independent seeds.
constexpr std::uint64_t
mix64(std::uint64_t x)
{
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

//! Seed of stream `index` under master seed `seed`. Streams do not depend on
//! the order in which they are requested.
constexpr std::uint64_t
stream_seed(std::uint64_t seed, std::uint64_t index)
{
  return mix64(mix64(seed) ^ mix64(index + 0x632be59bd9b4e019ULL));
}

//! Seeded random stream. mt19937_64 output is bit-exact across standard
//! libraries; the distributions below are written out explicitly so that
//! variates are too.
class RandomStream
{
public:
  explicit RandomStream(std::uint64_t seed)
    : engine_(mix64(seed))
  {
  }

  //! Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  //! Uniform index in [0, n) by rejection, free of modulo bias.
  std::uint64_t index(std::uint64_t n)
  {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  //! Standard normal by the Box-Muller transform; the second variate of each
  //! pair is cached.
  double normal()
  {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform(); // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

} // namespace npdose
