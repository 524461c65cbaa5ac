#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "uss/core/error.hpp"

namespace uss::data {

// Mono waveform in [-1, 1]. Synthetic clips carry their ground-truth event
// activity track (0/1 per frame at `activity_frame_rate`), which doubles as
// the oracle for sound-event detection.
struct AudioClip {
  std::vector<double> samples;
  int sample_rate = 32000;
  std::optional<int> label;
  std::optional<std::vector<uint8_t>> event_activity;
  int activity_frame_rate = 100;

  int64_t length() const { return static_cast<int64_t>(samples.size()); }
  double duration() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }

  double energy() const {
    double e = 0.0;
    for (double s : samples) e += s * s;
    return e;
  }

  double peak() const {
    double p = 0.0;
    for (double s : samples) p = std::max(p, std::abs(s));
    return p;
  }
};

}  // namespace uss::data
