#pragma once

// Complex ideal ratio mask: nonnegative magnitude plus a unit-normalized
// (cos, sin) phase pair per time-frequency cell.

#include <cmath>

#include "uss/core/tensor.hpp"
#include "uss/dsp/stft.hpp"

namespace uss::dsp {

struct ComplexMask {
  Tensor<double> magnitude;  // (T, F), in [0, magnitude_cap]
  Tensor<double> phase_cos;  // (T, F)
  Tensor<double> phase_sin;  // (T, F), cos^2 + sin^2 = 1
  double magnitude_cap = 2.0;

  static ComplexMask identity(int64_t frames, int64_t bins, double cap = 2.0) {
    ComplexMask m;
    m.magnitude = Tensor<double>::full({frames, bins}, 1.0);
    m.phase_cos = Tensor<double>::full({frames, bins}, 1.0);
    m.phase_sin = Tensor<double>({frames, bins});
    m.magnitude_cap = cap;
    return m;
  }

  void validate() const {
    check(magnitude.shape() == phase_cos.shape() &&
              magnitude.shape() == phase_sin.shape(),
          "mask: component shapes disagree");
    for (int64_t i = 0; i < magnitude.size(); ++i) {
      check(magnitude[i] >= 0.0 && magnitude[i] <= magnitude_cap,
            "mask: magnitude outside [0, cap]");
      const double n = phase_cos[i] * phase_cos[i] + phase_sin[i] * phase_sin[i];
      check(std::abs(n - 1.0) < 1e-6, "mask: phase pair not unit-normalized");
    }
  }
};

// out = |M| * (cos + j sin) ⊙ mix, elementwise.
inline Spectrogram apply_mask(const Spectrogram& mix, const ComplexMask& mask) {
  check(mask.magnitude.rank() == 2 && mask.magnitude.dim(0) == mix.frames &&
            mask.magnitude.dim(1) == mix.bins,
        "apply_mask: mask shape " + shape_str(mask.magnitude.shape()) +
            " does not match spectrogram (" + std::to_string(mix.frames) + ", " +
            std::to_string(mix.bins) + ")");
  Spectrogram out = mix;
  for (int64_t i = 0; i < mask.magnitude.size(); ++i) {
    const cplx m(mask.magnitude[i] * mask.phase_cos[i],
                 mask.magnitude[i] * mask.phase_sin[i]);
    out.v[static_cast<size_t>(i)] = m * mix.v[static_cast<size_t>(i)];
  }
  return out;
}

}  // namespace uss::dsp
