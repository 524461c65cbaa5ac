#pragma once

// STFT analysis and weighted-overlap-add synthesis. Framing is centered with
// reflect padding and produces ceil(len / hop) frames, so a 2-second clip at
// 32 kHz with hop 320 gives exactly 200 frames; optional zero-frame padding
// extends that to a fixed frame count (224 in the separation pipeline).
// Synthesis normalizes by the per-sample window power, which keeps exact
// reconstruction even though Hann 1024 with hop 320 is not a COLA pair.

#include <cmath>
#include <complex>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "uss/core/error.hpp"
#include "uss/data/audio_clip.hpp"
#include "uss/dsp/fft.hpp"

namespace uss::dsp {

struct StftConfig {
  int64_t window_size = 1024;
  int64_t hop_size = 320;
  int sample_rate = 32000;
  std::optional<int64_t> pad_to_frames;

  int64_t bins() const { return window_size / 2 + 1; }
  double frame_rate() const {
    return static_cast<double>(sample_rate) / static_cast<double>(hop_size);
  }
  void validate() const {
    check(window_size >= 2 && is_pow2(window_size),
          "stft: window_size must be a power of two >= 2");
    check(hop_size >= 1 && hop_size <= window_size,
          "stft: hop_size must be in [1, window_size]");
    check(sample_rate > 0, "stft: sample_rate must be positive");
  }
};

struct Spectrogram {
  int64_t frames = 0;
  int64_t bins = 0;
  std::vector<cplx> v;  // row-major (frames, bins)
  StftConfig config;

  cplx& at(int64_t t, int64_t f) { return v[static_cast<size_t>(t * bins + f)]; }
  const cplx& at(int64_t t, int64_t f) const {
    return v[static_cast<size_t>(t * bins + f)];
  }
  double energy() const {
    double e = 0.0;
    for (const cplx& c : v) e += std::norm(c);
    return e;
  }
};

// Periodic Hann, the analysis and synthesis window.
inline std::vector<double> hann_window(int64_t n) {
  std::vector<double> w(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i)
    w[static_cast<size_t>(i)] =
        0.5 - 0.5 * std::cos(6.283185307179586 * static_cast<double>(i) /
                             static_cast<double>(n));
  return w;
}

namespace detail {

// Symmetric reflection (no edge repeat) folded into [0, len).
inline int64_t reflect_index(int64_t i, int64_t len) {
  if (len == 1) return 0;
  const int64_t period = 2 * (len - 1);
  i = ((i % period) + period) % period;
  return i < len ? i : period - i;
}

}  // namespace detail

// Number of analysis frames a signal of `len` samples produces.
inline int64_t stft_frame_count(int64_t len, const StftConfig& cfg) {
  return (len + cfg.hop_size - 1) / cfg.hop_size;
}

inline Spectrogram stft(const data::AudioClip& clip, const StftConfig& cfg) {
  cfg.validate();
  const int64_t len = clip.length();
  check(len >= 1, "stft: empty signal");
  check(clip.sample_rate == cfg.sample_rate,
        "stft: clip sample rate " + std::to_string(clip.sample_rate) +
            " does not match config " + std::to_string(cfg.sample_rate));
  const int64_t n = cfg.window_size, hop = cfg.hop_size, half = n / 2;
  const int64_t sig_frames = stft_frame_count(len, cfg);
  int64_t total_frames = sig_frames;
  if (cfg.pad_to_frames) {
    check(*cfg.pad_to_frames >= sig_frames,
          "stft: pad_to_frames " + std::to_string(*cfg.pad_to_frames) +
              " is less than the " + std::to_string(sig_frames) +
              " produced frames");
    total_frames = *cfg.pad_to_frames;
  }

  // Centered framing: frame t reads padded[t*hop, t*hop + n), where padded
  // has a reflect-padded half window on the left and enough on the right.
  const int64_t padded_len = (sig_frames - 1) * hop + n;
  std::vector<double> padded(static_cast<size_t>(padded_len));
  for (int64_t i = 0; i < padded_len; ++i)
    padded[static_cast<size_t>(i)] =
        clip.samples[static_cast<size_t>(detail::reflect_index(i - half, len))];

  const std::vector<double> window = hann_window(n);
  Fft fft(n);
  Spectrogram spec;
  spec.frames = total_frames;
  spec.bins = cfg.bins();
  spec.config = cfg;
  spec.v.assign(static_cast<size_t>(total_frames * spec.bins), cplx(0.0, 0.0));

  std::vector<double> frame(static_cast<size_t>(n));
  for (int64_t t = 0; t < sig_frames; ++t) {
    const double* src = padded.data() + t * hop;
    for (int64_t i = 0; i < n; ++i)
      frame[static_cast<size_t>(i)] = src[i] * window[static_cast<size_t>(i)];
    fft.rfft(frame.data(), spec.v.data() + t * spec.bins);
  }
  return spec;
}

// Per-sample window power sum over `frames` synthesis frames, in padded
// coordinates (length (frames-1)*hop + window).
inline std::vector<double> window_power_partition(int64_t frames,
                                                  const StftConfig& cfg) {
  const int64_t n = cfg.window_size, hop = cfg.hop_size;
  const std::vector<double> window = hann_window(n);
  std::vector<double> p(static_cast<size_t>((frames - 1) * hop + n), 0.0);
  for (int64_t t = 0; t < frames; ++t)
    for (int64_t i = 0; i < n; ++i)
      p[static_cast<size_t>(t * hop + i)] +=
          window[static_cast<size_t>(i)] * window[static_cast<size_t>(i)];
  return p;
}

// Weighted-overlap-add synthesis with window-power normalization, trimmed to
// target_len samples. Only the frames that a target_len signal would have
// produced take part; trailing zero-pad frames are ignored.
inline data::AudioClip istft(const Spectrogram& spec, int64_t target_len) {
  const StftConfig& cfg = spec.config;
  cfg.validate();
  check(target_len >= 1, "istft: target length must be positive");
  const int64_t n = cfg.window_size, hop = cfg.hop_size, half = n / 2;
  const int64_t frames = std::min(spec.frames, stft_frame_count(target_len, cfg));
  check(frames >= 1, "istft: no frames to synthesize");
  check((frames - 1) * hop + n >= half + target_len,
        "istft: spectrogram too short for requested length");

  const std::vector<double> window = hann_window(n);
  const std::vector<double> power = window_power_partition(frames, cfg);
  std::vector<double> acc(power.size(), 0.0);

  Fft fft(n);
  std::vector<double> frame(static_cast<size_t>(n));
  for (int64_t t = 0; t < frames; ++t) {
    fft.irfft(spec.v.data() + t * spec.bins, frame.data());
    double* dst = acc.data() + t * hop;
    for (int64_t i = 0; i < n; ++i)
      dst[i] += frame[static_cast<size_t>(i)] * window[static_cast<size_t>(i)];
  }

  data::AudioClip out;
  out.sample_rate = cfg.sample_rate;
  out.samples.resize(static_cast<size_t>(target_len));
  for (int64_t i = 0; i < target_len; ++i) {
    const double p = power[static_cast<size_t>(half + i)];
    check(p > 1e-12, "istft: degenerate window/hop, zero synthesis weight");
    out.samples[static_cast<size_t>(i)] = acc[static_cast<size_t>(half + i)] / p;
  }
  return out;
}

// ------------------------------------------------------------- dump format
// Text header followed by row-major interleaved re/im doubles, for external
// plotting of spectrogram figures.

inline void save_spectrogram(const Spectrogram& spec, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  check(f.good(), "spectrogram dump: cannot open '" + path + "'");
  f << "USSPEC1\n"
    << "frames " << spec.frames << "\n"
    << "bins " << spec.bins << "\n"
    << "window_size " << spec.config.window_size << "\n"
    << "hop_size " << spec.config.hop_size << "\n"
    << "sample_rate " << spec.config.sample_rate << "\n"
    << "pad_to_frames " << (spec.config.pad_to_frames ? *spec.config.pad_to_frames : -1)
    << "\n"
    << "data\n";
  std::vector<double> buf;
  buf.reserve(spec.v.size() * 2);
  for (const cplx& c : spec.v) {
    buf.push_back(c.real());
    buf.push_back(c.imag());
  }
  f.write(reinterpret_cast<const char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(double)));
  check(f.good(), "spectrogram dump: write failed for '" + path + "'");
}

inline Spectrogram load_spectrogram(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), "spectrogram dump: cannot open '" + path + "'");
  std::string magic;
  std::getline(f, magic);
  check(magic == "USSPEC1", "spectrogram dump: bad magic in '" + path + "'");
  Spectrogram spec;
  int64_t pad = -1;
  std::string key;
  while (f >> key && key != "data") {
    int64_t value;
    check(static_cast<bool>(f >> value), "spectrogram dump: bad header field");
    if (key == "frames") spec.frames = value;
    else if (key == "bins") spec.bins = value;
    else if (key == "window_size") spec.config.window_size = value;
    else if (key == "hop_size") spec.config.hop_size = value;
    else if (key == "sample_rate") spec.config.sample_rate = static_cast<int>(value);
    else if (key == "pad_to_frames") pad = value;
    else throw Error("spectrogram dump: unknown header field '" + key + "'");
  }
  check(key == "data", "spectrogram dump: missing data marker");
  f.get();  // newline after "data"
  if (pad >= 0) spec.config.pad_to_frames = pad;
  std::vector<double> buf(static_cast<size_t>(spec.frames * spec.bins * 2));
  f.read(reinterpret_cast<char*>(buf.data()),
         static_cast<std::streamsize>(buf.size() * sizeof(double)));
  check(f.gcount() == static_cast<std::streamsize>(buf.size() * sizeof(double)),
        "spectrogram dump: truncated data in '" + path + "'");
  spec.v.resize(static_cast<size_t>(spec.frames * spec.bins));
  for (size_t i = 0; i < spec.v.size(); ++i)
    spec.v[i] = {buf[2 * i], buf[2 * i + 1]};
  return spec;
}

}  // namespace uss::dsp
