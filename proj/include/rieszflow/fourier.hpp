#pragma once
// Minimal discrete Fourier machinery for the torus spectral paths:
// radix-2 FFT with a direct-DFT fallback, axis-wise transforms of
// row-major d-dimensional arrays, and signed lattice frequencies.

#include <complex>
#include <vector>

#include "core.hpp"

namespace rieszflow {

using cplx = std::complex<double>;

inline bool is_pow2(size_t n) { return n > 0 && (n & (n - 1)) == 0; }

inline void fft_pow2(std::vector<cplx>& a, bool inverse) {
  const size_t n = a.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    double ang = 2.0 * std::numbers::pi / double(len) * (inverse ? 1.0 : -1.0);
    cplx wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      cplx w(1.0, 0.0);
      for (size_t j = 0; j < len / 2; ++j) {
        cplx u = a[i + j], v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wl;
      }
    }
  }
  if (inverse)
    for (auto& z : a) z /= double(n);
}

inline void dft_direct(std::vector<cplx>& a, bool inverse) {
  const size_t n = a.size();
  std::vector<cplx> out(n, cplx(0, 0));
  double sgn = inverse ? 1.0 : -1.0;
  for (size_t k = 0; k < n; ++k) {
    cplx acc(0, 0);
    for (size_t c = 0; c < n; ++c) {
      double ang = sgn * 2.0 * std::numbers::pi * double(k * c % n) / double(n);
      acc += a[c] * cplx(std::cos(ang), std::sin(ang));
    }
    out[k] = inverse ? acc / double(n) : acc;
  }
  a = std::move(out);
}

inline void fft_line(std::vector<cplx>& a, bool inverse) {
  if (is_pow2(a.size()))
    fft_pow2(a, inverse);
  else
    dft_direct(a, inverse);
}

// Transform along every axis of a row-major array of the given shape.
inline void dft_nd(std::vector<cplx>& data, const std::vector<int>& shape, bool inverse) {
  const int d = static_cast<int>(shape.size());
  size_t total = 1;
  for (int n : shape) total *= size_t(n);
  require(data.size() == total, Err::bad_argument, "dft shape mismatch");
  size_t stride = 1;  // stride of the current (last-to-first) axis
  for (int axis = d - 1; axis >= 0; --axis) {
    const size_t n = size_t(shape[size_t(axis)]);
    const size_t block = stride * n;
    std::vector<cplx> line(n);
    for (size_t base = 0; base < total; base += block) {
      for (size_t off = 0; off < stride; ++off) {
        for (size_t i = 0; i < n; ++i) line[i] = data[base + off + i * stride];
        fft_line(line, inverse);
        for (size_t i = 0; i < n; ++i) data[base + off + i * stride] = line[i];
      }
    }
    stride = block;
  }
}

// Signed frequency of DFT index k on a length-n axis (k - n for k > n/2).
inline int signed_freq(int k, int n) { return (2 * k > n) ? k - n : k; }

// |k~|^2 over the flattened frequency index.
inline double freq_norm2(size_t flat, const std::vector<int>& shape) {
  double s = 0;
  for (int a = static_cast<int>(shape.size()) - 1; a >= 0; --a) {
    int n = shape[size_t(a)];
    int k = static_cast<int>(flat % size_t(n));
    flat /= size_t(n);
    double f = double(signed_freq(k, n));
    s += f * f;
  }
  return s;
}

}  // namespace rieszflow
