#pragma once

#include <cmath>
#include <cstdint>

#include "mno/tensor.hpp"

namespace mno {

// splitmix64 finalizer; good enough mixing for Monte Carlo streams.
inline uint64_t mix64(uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Counter-derived random stream. Streams built from the same (seed, keys)
// produce identical sequences on every platform, so parallel workers each
// get an independent deterministic stream.
struct RngStream {
  uint64_t state = 0;
  bool has_cached = false;
  double cached = 0.0;

  uint64_t next_u64() {
    state += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // uniform on (0,1)
  double u01() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  // standard normal via Box-Muller; second draw cached
  double gauss() {
    if (has_cached) {
      has_cached = false;
      return cached;
    }
    double u1 = u01();
    double u2 = u01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    cached = r * std::sin(a);
    has_cached = true;
    return r * std::cos(a);
  }

  Tensor gauss_tensor(Shape shape, double std_dev = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = gauss() * std_dev;
    return t;
  }
};

inline RngStream make_stream(uint64_t seed, uint64_t k1 = 0, uint64_t k2 = 0, uint64_t k3 = 0) {
  RngStream s;
  s.state = mix64(mix64(mix64(mix64(seed) ^ k1) ^ mix64(k2 + 0x6a09e667f3bcc909ULL)) ^
                  mix64(k3 + 0xbb67ae8584caa73bULL));
  return s;
}

}  // namespace mno
