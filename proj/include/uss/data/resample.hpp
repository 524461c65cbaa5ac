#pragma once

// Rational-factor resampling with a Hann-windowed sinc kernel. Each output
// phase is normalized to unit DC gain, so constant signals pass through
// exactly up to edge effects.

#include <cmath>
#include <numeric>

#include "uss/core/error.hpp"
#include "uss/data/audio_clip.hpp"

namespace uss::data {

inline AudioClip resample(const AudioClip& clip, int target_rate) {
  check(target_rate > 0, "resample: target rate must be positive");
  check(clip.sample_rate > 0, "resample: source rate must be positive");
  if (target_rate == clip.sample_rate) return clip;

  const int g = std::gcd(clip.sample_rate, target_rate);
  const int64_t p = target_rate / g;   // upsample factor
  const int64_t q = clip.sample_rate / g;  // downsample factor
  check(p <= 2000 && q <= 2000,
        "resample: ratio " + std::to_string(clip.sample_rate) + " -> " +
            std::to_string(target_rate) + " is not a supported rational factor");

  const int64_t in_len = clip.length();
  check(in_len >= 1, "resample: empty signal");
  const int64_t out_len = static_cast<int64_t>(
      std::llround(static_cast<double>(in_len) * p / q));

  // anti-alias cutoff in input cycles/sample; half-width scaled for decimation
  const double cutoff = std::min(1.0, static_cast<double>(p) / q);
  const int64_t half = static_cast<int64_t>(std::ceil(16.0 / cutoff));

  AudioClip out;
  out.sample_rate = target_rate;
  out.label = clip.label;
  out.samples.resize(static_cast<size_t>(out_len));
  for (int64_t n = 0; n < out_len; ++n) {
    const double center = static_cast<double>(n) * q / p;
    const int64_t m0 = static_cast<int64_t>(std::ceil(center)) - half;
    const int64_t m1 = static_cast<int64_t>(std::floor(center)) + half;
    double acc = 0.0, norm = 0.0;
    for (int64_t m = m0; m <= m1; ++m) {
      const double t = static_cast<double>(m) - center;
      const double st = cutoff * t;
      const double sinc =
          st == 0.0 ? 1.0 : std::sin(3.141592653589793 * st) / (3.141592653589793 * st);
      const double win =
          0.5 + 0.5 * std::cos(3.141592653589793 * t / static_cast<double>(half + 1));
      const double h = cutoff * sinc * win;
      norm += h;
      if (m >= 0 && m < in_len) acc += clip.samples[static_cast<size_t>(m)] * h;
    }
    out.samples[static_cast<size_t>(n)] = acc / norm;
  }
  return out;
}

}  // namespace uss::data
