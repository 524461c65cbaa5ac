#pragma once

// Mel filterbank features: triangular area-normalized filters spanning
// 0..Nyquist on the HTK mel scale, applied to the power spectrum, floored at
// 1e-10 before the log.

#include <cmath>
#include <vector>

#include "uss/core/tensor.hpp"
#include "uss/dsp/stft.hpp"

namespace uss::dsp {

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) {
  return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0);
}

namespace detail {

// Integral of the unit triangle (lo, mid, hi) over [a, b].
inline double triangle_integral(double lo, double mid, double hi, double a,
                                double b) {
  double acc = 0.0;
  const double r0 = std::max(a, lo), r1 = std::min(b, mid);
  if (r1 > r0)
    acc += ((r1 - lo) * (r1 - lo) - (r0 - lo) * (r0 - lo)) / (2.0 * (mid - lo));
  const double f0 = std::max(a, mid), f1 = std::min(b, hi);
  if (f1 > f0)
    acc += ((hi - f0) * (hi - f0) - (hi - f1) * (hi - f1)) / (2.0 * (hi - mid));
  return acc;
}

}  // namespace detail

// (n_mels, bins) filter matrix. Each triangle is averaged over the frequency
// interval of every bin, so filters narrower than a bin still land on it and
// adjacent filters always share support; triangles are normalized to unit
// area.
inline Tensor<double> mel_filterbank(int64_t n_mels, int64_t bins,
                                     int sample_rate, int64_t window_size) {
  check(n_mels >= 1, "mel: n_mels must be >= 1");
  check(n_mels <= bins, "mel: n_mels " + std::to_string(n_mels) +
                            " exceeds spectrum bins " + std::to_string(bins));
  const double nyquist = sample_rate / 2.0;
  const double mel_max = hz_to_mel(nyquist);
  std::vector<double> edges(static_cast<size_t>(n_mels + 2));
  for (int64_t k = 0; k < n_mels + 2; ++k)
    edges[static_cast<size_t>(k)] =
        mel_to_hz(mel_max * static_cast<double>(k) / static_cast<double>(n_mels + 1));

  const double bin_width =
      static_cast<double>(sample_rate) / static_cast<double>(window_size);
  Tensor<double> fb({n_mels, bins});
  for (int64_t k = 0; k < n_mels; ++k) {
    const double lo = edges[static_cast<size_t>(k)];
    const double mid = edges[static_cast<size_t>(k + 1)];
    const double hi = edges[static_cast<size_t>(k + 2)];
    const double norm = 2.0 / (hi - lo);
    for (int64_t b = 0; b < bins; ++b) {
      const double f = static_cast<double>(b) * bin_width;
      const double a0 = std::max(0.0, f - bin_width / 2.0);
      const double a1 = std::min(nyquist, f + bin_width / 2.0);
      fb.at(k, b) =
          detail::triangle_integral(lo, mid, hi, a0, a1) / bin_width * norm;
    }
  }
  return fb;
}

// log(mel power + 1e-10), shape (frames, n_mels).
inline Tensor<double> mel_spectrogram(const data::AudioClip& clip, int64_t n_mels,
                                      const StftConfig& cfg) {
  const Spectrogram spec = stft(clip, cfg);
  const Tensor<double> fb =
      mel_filterbank(n_mels, spec.bins, cfg.sample_rate, cfg.window_size);
  Tensor<double> out({spec.frames, n_mels});
  std::vector<double> power(static_cast<size_t>(spec.bins));
  for (int64_t t = 0; t < spec.frames; ++t) {
    for (int64_t b = 0; b < spec.bins; ++b)
      power[static_cast<size_t>(b)] = std::norm(spec.at(t, b));
    for (int64_t k = 0; k < n_mels; ++k) {
      double acc = 0.0;
      const double* row = fb.data() + k * spec.bins;
      for (int64_t b = 0; b < spec.bins; ++b) acc += row[b] * power[static_cast<size_t>(b)];
      out.at(t, k) = std::log(acc + 1e-10);
    }
  }
  return out;
}

}  // namespace uss::dsp
