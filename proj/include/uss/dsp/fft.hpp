#pragma once

// Iterative radix-2 FFT, double precision. Window sizes in this codebase are
// powers of two; the transform is exact enough for < 1e-6 round-trip error.

#include <complex>
#include <vector>

#include "uss/core/error.hpp"

namespace uss::dsp {

using cplx = std::complex<double>;

inline bool is_pow2(int64_t n) { return n > 0 && (n & (n - 1)) == 0; }

class Fft {
public:
  explicit Fft(int64_t n) : n_(n) {
    check(is_pow2(n), "fft: size must be a power of two, got " + std::to_string(n));
    twiddles_.resize(static_cast<size_t>(n / 2));
    for (int64_t k = 0; k < n / 2; ++k) {
      const double a = -6.283185307179586476925286766559 * static_cast<double>(k) /
                       static_cast<double>(n);
      twiddles_[static_cast<size_t>(k)] = {std::cos(a), std::sin(a)};
    }
    rev_.resize(static_cast<size_t>(n));
    int64_t bits = 0;
    while ((int64_t(1) << bits) < n) ++bits;
    for (int64_t i = 0; i < n; ++i) {
      int64_t r = 0;
      for (int64_t b = 0; b < bits; ++b)
        if (i & (int64_t(1) << b)) r |= int64_t(1) << (bits - 1 - b);
      rev_[static_cast<size_t>(i)] = r;
    }
  }

  int64_t size() const { return n_; }

  // In-place forward DFT (no normalization).
  void forward(cplx* x) const {
    for (int64_t i = 0; i < n_; ++i) {
      const int64_t r = rev_[static_cast<size_t>(i)];
      if (i < r) std::swap(x[i], x[r]);
    }
    for (int64_t len = 2; len <= n_; len <<= 1) {
      const int64_t half = len >> 1;
      const int64_t step = n_ / len;
      for (int64_t i = 0; i < n_; i += len) {
        for (int64_t j = 0; j < half; ++j) {
          const cplx w = twiddles_[static_cast<size_t>(j * step)];
          const cplx u = x[i + j];
          const cplx v = x[i + j + half] * w;
          x[i + j] = u + v;
          x[i + j + half] = u - v;
        }
      }
    }
  }

  // In-place inverse DFT including the 1/N factor.
  void inverse(cplx* x) const {
    for (int64_t i = 0; i < n_; ++i) x[i] = std::conj(x[i]);
    forward(x);
    const double inv = 1.0 / static_cast<double>(n_);
    for (int64_t i = 0; i < n_; ++i) x[i] = std::conj(x[i]) * inv;
  }

  // Real input -> one-sided spectrum of n/2 + 1 bins.
  void rfft(const double* in, cplx* out) const {
    std::vector<cplx> buf(static_cast<size_t>(n_));
    for (int64_t i = 0; i < n_; ++i) buf[static_cast<size_t>(i)] = {in[i], 0.0};
    forward(buf.data());
    for (int64_t f = 0; f <= n_ / 2; ++f) out[f] = buf[static_cast<size_t>(f)];
  }

  // One-sided spectrum -> real output of n samples.
  void irfft(const cplx* in, double* out) const {
    std::vector<cplx> buf(static_cast<size_t>(n_));
    for (int64_t f = 0; f <= n_ / 2; ++f) buf[static_cast<size_t>(f)] = in[f];
    for (int64_t f = n_ / 2 + 1; f < n_; ++f)
      buf[static_cast<size_t>(f)] = std::conj(in[n_ - f]);
    inverse(buf.data());
    for (int64_t i = 0; i < n_; ++i) out[i] = buf[static_cast<size_t>(i)].real();
  }

private:
  int64_t n_;
  std::vector<cplx> twiddles_;
  std::vector<int64_t> rev_;
};

}  // namespace uss::dsp
