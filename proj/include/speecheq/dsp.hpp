// dsp.hpp  -- small fixed-purpose DSP kernels (FFT, windows, convolution)
//
// Copyright 2026 The speecheq authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef SPEECHEQ_DSP_HPP
#define SPEECHEQ_DSP_HPP

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "speecheq/common.hpp"

namespace speecheq::dsp {

inline size_t next_pow2(size_t n) {
  size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// In-place iterative radix-2 FFT. Size must be a power of two. The inverse
// transform includes the 1/N scaling.
inline void fft(std::vector<std::complex<real>>& a, bool inverse) {
  const size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0) throw ParameterError("fft size must be a power of two");
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const real ang = 2.0 * std::numbers::pi / static_cast<real>(len) * (inverse ? 1.0 : -1.0);
    const std::complex<real> wlen(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<real> w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        std::complex<real> u = a[i + k];
        std::complex<real> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
  if (inverse) {
    for (auto& x : a) x /= static_cast<real>(n);
  }
}

inline std::vector<real> hamming_window(size_t n) {
  std::vector<real> w(n);
  if (n == 1) {
    w[0] = 1.0;
    return w;
  }
  for (size_t i = 0; i < n; ++i)
    w[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<real>(i) /
                                  static_cast<real>(n - 1));
  return w;
}

inline std::vector<real> hann_window(size_t n) {
  std::vector<real> w(n);
  if (n == 1) {
    w[0] = 1.0;
    return w;
  }
  for (size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<real>(i) /
                                static_cast<real>(n - 1));
  return w;
}

// Full linear convolution, output length |x| + |h| - 1.
inline std::vector<real> convolve(const std::vector<real>& x, const std::vector<real>& h) {
  if (x.empty() || h.empty()) throw ParameterError("convolve: empty input");
  std::vector<real> y(x.size() + h.size() - 1, 0.0);
  for (size_t i = 0; i < x.size(); ++i) {
    const real xi = x[i];
    for (size_t j = 0; j < h.size(); ++j) y[i + j] += xi * h[j];
  }
  return y;
}

inline real signal_power(const std::vector<real>& x) {
  real acc = 0.0;
  for (real v : x) acc += v * v;
  return x.empty() ? 0.0 : acc / static_cast<real>(x.size());
}

}  // namespace speecheq::dsp

#endif  // SPEECHEQ_DSP_HPP
