#pragma once

#include <complex>
#include <map>
#include <span>
#include <vector>

#include "mno/tensor.hpp"

namespace mno {

using cd = std::complex<double>;

namespace fft_detail {

constexpr double kTwoPi = 6.283185307179586476925286766559;

inline bool is_pow2(size_t n) { return n != 0 && (n & (n - 1)) == 0; }

inline size_t next_pow2(size_t n) {
  size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

struct Twiddles {
  std::vector<cd> w;  // w[k] = exp(-2*pi*i*k/n), k < n/2
};

inline const Twiddles& twiddles_for(size_t n) {
  thread_local std::map<size_t, Twiddles> cache;
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  Twiddles t;
  t.w.resize(n / 2);
  for (size_t k = 0; k < n / 2; ++k) {
    double a = -kTwoPi * static_cast<double>(k) / static_cast<double>(n);
    t.w[k] = cd(std::cos(a), std::sin(a));
  }
  return cache.emplace(n, std::move(t)).first->second;
}

// Iterative radix-2 Cooley-Tukey, in place. n must be a power of two.
inline void fft_pow2(std::vector<cd>& a, bool inverse) {
  const size_t n = a.size();
  if (n < 2) return;
  // bit reversal permutation
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  const Twiddles& tw = twiddles_for(n);
  for (size_t len = 2; len <= n; len <<= 1) {
    size_t stride = n / len;
    for (size_t i = 0; i < n; i += len) {
      for (size_t k = 0; k < len / 2; ++k) {
        cd w = tw.w[k * stride];
        if (inverse) w = std::conj(w);
        cd u = a[i + k];
        cd v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
      }
    }
  }
  if (inverse) {
    double inv = 1.0 / static_cast<double>(n);
    for (auto& x : a) x *= inv;
  }
}

// Bluestein chirp-z transform for arbitrary n, built on a pow2 convolution.
inline void fft_bluestein(std::vector<cd>& a, bool inverse) {
  const size_t n = a.size();
  std::vector<cd> chirp(n);
  for (size_t j = 0; j < n; ++j) {
    // exp(-i*pi*j^2/n) for the forward transform
    double ang = kTwoPi * 0.5 * static_cast<double>((j * j) % (2 * n)) / static_cast<double>(n);
    chirp[j] = cd(std::cos(ang), inverse ? std::sin(ang) : -std::sin(ang));
  }
  const size_t m = next_pow2(2 * n - 1);
  std::vector<cd> fa(m, cd(0, 0)), fb(m, cd(0, 0));
  for (size_t j = 0; j < n; ++j) fa[j] = a[j] * chirp[j];
  for (size_t j = 0; j < n; ++j) {
    cd b = std::conj(chirp[j]);
    fb[j] = b;
    if (j) fb[m - j] = b;
  }
  fft_pow2(fa, false);
  fft_pow2(fb, false);
  for (size_t j = 0; j < m; ++j) fa[j] *= fb[j];
  fft_pow2(fa, true);
  for (size_t k = 0; k < n; ++k) a[k] = fa[k] * chirp[k];
  if (inverse) {
    double scale = 1.0 / static_cast<double>(n);
    for (auto& x : a) x *= scale;
  }
}

}  // namespace fft_detail

// Unnormalized forward DFT / normalized inverse, any length.
inline void fft_inplace(std::vector<cd>& a, bool inverse) {
  if (fft_detail::is_pow2(a.size()))
    fft_detail::fft_pow2(a, inverse);
  else
    fft_detail::fft_bluestein(a, inverse);
}

// Truncated spectrum of a real signal: modes 0..floor(N/2), which fully
// determine the signal through Hermitian symmetry.
struct ComplexSpectrum {
  int64_t signal_len = 0;
  std::vector<cd> modes;

  int64_t n_modes() const { return static_cast<int64_t>(modes.size()); }
};

inline ComplexSpectrum fft_forward(std::span<const double> x) {
  const size_t n = x.size();
  if (n < 2) throw Error("fft_forward requires length >= 2");
  for (double v : x)
    if (!std::isfinite(v)) throw NumericError("fft_forward: non-finite input");
  std::vector<cd> a(n);
  for (size_t i = 0; i < n; ++i) a[i] = cd(x[i], 0.0);
  fft_inplace(a, false);
  ComplexSpectrum s;
  s.signal_len = static_cast<int64_t>(n);
  s.modes.assign(a.begin(), a.begin() + static_cast<long>(n / 2 + 1));
  return s;
}

inline std::vector<double> fft_inverse(const ComplexSpectrum& s) {
  const size_t n = static_cast<size_t>(s.signal_len);
  if (n < 2) throw Error("fft_inverse: bad signal length");
  if (s.modes.size() != n / 2 + 1) throw Error("fft_inverse: mode count does not match length");
  std::vector<cd> a(n);
  for (size_t k = 0; k <= n / 2; ++k) a[k] = s.modes[k];
  for (size_t k = n / 2 + 1; k < n; ++k) a[k] = std::conj(s.modes[n - k]);
  fft_inplace(a, true);
  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = a[i].real();
  return out;
}

}  // namespace mno
