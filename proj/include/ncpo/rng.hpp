#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "ncpo/math.hpp"

namespace ncpo {

// splitmix64 finalizer; used to spread bits when deriving stream seeds.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Every random stream in the project is derived from one master seed plus a
// component name, so reruns with the same seed are bit-identical.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view component) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (char ch : component) {
    h ^= static_cast<unsigned char>(ch);
    h *= 1099511628211ULL;
  }
  return mix64(master ^ mix64(h));
}

inline std::uint64_t derive_seed(std::uint64_t master, std::string_view component,
                                 std::uint64_t index) {
  return mix64(derive_seed(master, component) ^ mix64(index + 1));
}

// Deterministic random source: mt19937_64 plus an explicit Box-Muller
// transform, so normal draws do not depend on the standard library's
// distribution implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // [0, 1)
  double uniform() { return (engine_() >> 11) * 0x1.0p-53; }

  // inclusive bounds
  int uniform_int(int lo, int hi) {
    require(lo <= hi, "uniform_int: empty range");
    std::uint64_t span =
        static_cast<std::uint64_t>(static_cast<std::int64_t>(hi) -
                                   static_cast<std::int64_t>(lo)) + 1;
    return lo + static_cast<int>(engine_() % span);
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    constexpr double kTwoPi = 6.283185307179586476925286766559;
    double a = kTwoPi * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  Vec normal_vec(std::size_t n) {
    Vec v(n);
    for (auto& x : v) x = normal();
    return v;
  }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace ncpo
