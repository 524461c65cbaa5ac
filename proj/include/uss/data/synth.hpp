#pragma once

// Synthetic multi-class sound corpus. Six generator families occupy disjoint
// frequency bands so classes stay spectrally distinguishable:
//
//   tone_low    pure sine, 420-600 Hz
//   square_bass odd harmonics of 80-110 Hz, bandlimited below 360 Hz
//   chirp_mid   repeating linear up-chirps, 1.2-2.4 kHz
//   noise_band  bandpassed noise, 3.0-4.5 kHz
//   click_train decaying-sine pings at 8-14 Hz rate, 4.8-5.8 kHz
//   noise_high  amplitude-modulated noise, 6.5-9.5 kHz
//
// Each clip holds one class's events covering 30-90% of its duration with
// silent gaps, and records a per-frame 0/1 activity track at the detection
// frame rate. Generation is deterministic under the corpus seed.

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "uss/core/rng.hpp"
#include "uss/data/audio_clip.hpp"
#include "uss/data/manifest.hpp"
#include "uss/data/wav.hpp"
#include "uss/dsp/fft.hpp"

namespace uss::data {

enum class GeneratorKind { kSine, kChirp, kSquare, kAmNoise, kFilteredNoise, kClickTrain };

struct SynthClass {
  std::string name;
  GeneratorKind kind;
  double f_lo = 0.0;  // band edges, Hz
  double f_hi = 0.0;
  double rate_lo = 0.0;  // repetition / modulation rate, Hz (clicks, AM)
  double rate_hi = 0.0;
};

inline std::vector<SynthClass> default_synth_classes() {
  return {
      {"tone_low", GeneratorKind::kSine, 420.0, 600.0, 0.0, 0.0},
      {"square_bass", GeneratorKind::kSquare, 80.0, 110.0, 0.0, 0.0},
      {"chirp_mid", GeneratorKind::kChirp, 1200.0, 2400.0, 0.0, 0.0},
      {"noise_band", GeneratorKind::kFilteredNoise, 3000.0, 4500.0, 0.0, 0.0},
      {"click_train", GeneratorKind::kClickTrain, 4800.0, 5800.0, 8.0, 14.0},
      {"noise_high", GeneratorKind::kAmNoise, 6500.0, 9500.0, 2.0, 6.0},
  };
}

struct CorpusSpec {
  std::vector<SynthClass> classes = default_synth_classes();
  int clips_per_class = 32;
  double clip_len_s = 10.0;
  int sample_rate = 32000;
  int activity_frame_rate = 100;
  uint64_t seed = 7;
  WavFormat wav_format = WavFormat::kPcm16;
};

namespace detail {

// Gaussian noise confined to [f_lo, f_hi], peak-normalized to 1.
inline std::vector<double> band_noise(int64_t n, double f_lo, double f_hi,
                                      int sample_rate, Rng& rng) {
  int64_t nfft = 1;
  while (nfft < n) nfft <<= 1;
  dsp::Fft fft(nfft);
  std::vector<dsp::cplx> spec(static_cast<size_t>(nfft / 2 + 1), {0.0, 0.0});
  const int64_t b_lo = static_cast<int64_t>(f_lo * nfft / sample_rate);
  const int64_t b_hi =
      std::min<int64_t>(nfft / 2, static_cast<int64_t>(f_hi * nfft / sample_rate));
  for (int64_t b = b_lo; b <= b_hi; ++b)
    spec[static_cast<size_t>(b)] = {rng.normal(), rng.normal()};
  std::vector<double> buf(static_cast<size_t>(nfft));
  fft.irfft(spec.data(), buf.data());
  buf.resize(static_cast<size_t>(n));
  double peak = 1e-12;
  for (double v : buf) peak = std::max(peak, std::abs(v));
  for (double& v : buf) v /= peak;
  return buf;
}

// One event waveform of n samples for the class, peak at most 1.
inline std::vector<double> event_waveform(const SynthClass& cls, int64_t n,
                                          int sample_rate, Rng& rng) {
  std::vector<double> w(static_cast<size_t>(n), 0.0);
  const double sr = sample_rate;
  switch (cls.kind) {
    case GeneratorKind::kSine: {
      const double f = rng.uniform(cls.f_lo, cls.f_hi);
      const double phase = rng.uniform(0.0, 6.283185307179586);
      for (int64_t i = 0; i < n; ++i)
        w[static_cast<size_t>(i)] = std::sin(6.283185307179586 * f * i / sr + phase);
      break;
    }
    case GeneratorKind::kSquare: {
      const double f0 = rng.uniform(cls.f_lo, cls.f_hi);
      const double phase = rng.uniform(0.0, 6.283185307179586);
      // odd harmonics kept below 360 Hz so the band stays clear of tone_low
      double norm = 0.0;
      for (int k = 1; k * f0 < 360.0; k += 2) norm += 1.0 / k;
      for (int64_t i = 0; i < n; ++i) {
        double v = 0.0;
        for (int k = 1; k * f0 < 360.0; k += 2)
          v += std::sin(6.283185307179586 * k * f0 * i / sr + k * phase) / k;
        w[static_cast<size_t>(i)] = v / norm;
      }
      break;
    }
    case GeneratorKind::kChirp: {
      const double f0 = rng.uniform(cls.f_lo, cls.f_lo + 300.0);
      const double f1 = rng.uniform(cls.f_hi - 500.0, cls.f_hi);
      const double sweep_s = rng.uniform(0.2, 0.35);
      const int64_t sweep_n = static_cast<int64_t>(sweep_s * sr);
      for (int64_t i = 0; i < n; ++i) {
        const int64_t j = i % sweep_n;
        const double u = static_cast<double>(j) / static_cast<double>(sweep_n);
        const double phase =
            6.283185307179586 * (f0 * j + 0.5 * (f1 - f0) * u * j) / sr;
        w[static_cast<size_t>(i)] = std::sin(phase);
      }
      break;
    }
    case GeneratorKind::kFilteredNoise: {
      w = band_noise(n, cls.f_lo, cls.f_hi, sample_rate, rng);
      break;
    }
    case GeneratorKind::kAmNoise: {
      w = band_noise(n, cls.f_lo, cls.f_hi, sample_rate, rng);
      const double f_am = rng.uniform(cls.rate_lo, cls.rate_hi);
      for (int64_t i = 0; i < n; ++i)
        w[static_cast<size_t>(i)] *=
            0.55 + 0.45 * std::sin(6.283185307179586 * f_am * i / sr);
      break;
    }
    case GeneratorKind::kClickTrain: {
      const double rate = rng.uniform(cls.rate_lo, cls.rate_hi);
      const double f = rng.uniform(cls.f_lo, cls.f_hi);
      const int64_t period = static_cast<int64_t>(sr / rate);
      const double tau = 0.008 * sr;  // decay constant, samples
      for (int64_t start = 0; start < n; start += period) {
        const int64_t click_len = std::min<int64_t>(n - start,
                                                    static_cast<int64_t>(0.030 * sr));
        for (int64_t i = 0; i < click_len; ++i)
          w[static_cast<size_t>(start + i)] +=
              std::exp(-static_cast<double>(i) / tau) *
              std::sin(6.283185307179586 * f * i / sr);
      }
      double peak = 1e-12;
      for (double v : w) peak = std::max(peak, std::abs(v));
      for (double& v : w) v /= peak;
      break;
    }
  }
  return w;
}

}  // namespace detail

// One clip: events of the class placed with silent gaps until the drawn duty
// target is reached, active fraction kept inside [0.3, 0.9].
inline AudioClip synthesize_clip(const SynthClass& cls, int class_id,
                                 const CorpusSpec& spec, Rng rng) {
  const int64_t n = static_cast<int64_t>(spec.clip_len_s * spec.sample_rate);
  const double sr = spec.sample_rate;
  AudioClip clip;
  clip.sample_rate = spec.sample_rate;
  clip.label = class_id;
  clip.activity_frame_rate = spec.activity_frame_rate;
  clip.samples.assign(static_cast<size_t>(n), 0.0);
  const int64_t frames = static_cast<int64_t>(
      std::ceil(spec.clip_len_s * spec.activity_frame_rate));
  std::vector<uint8_t> activity(static_cast<size_t>(frames), 0);

  const double duty_target = rng.uniform(0.35, 0.8);
  const int64_t fade = static_cast<int64_t>(0.010 * sr);
  int64_t cursor = static_cast<int64_t>(rng.uniform(0.0, 0.8) * sr);
  int64_t active_total = 0;
  bool first = true;
  while (cursor < n &&
         static_cast<double>(active_total) < duty_target * static_cast<double>(n)) {
    double dur_s = first ? rng.uniform(2.2, 3.2) : rng.uniform(0.6, 1.8);
    first = false;
    int64_t dur = static_cast<int64_t>(dur_s * sr);
    dur = std::min(dur, n - cursor);
    dur = std::min(dur, static_cast<int64_t>(0.88 * n) - active_total);
    if (dur < 4 * fade) break;

    const double amp = rng.uniform(0.3, 0.8);
    const std::vector<double> wave =
        detail::event_waveform(cls, dur, spec.sample_rate, rng);
    for (int64_t i = 0; i < dur; ++i) {
      double env = 1.0;
      if (i < fade) env = 0.5 - 0.5 * std::cos(3.141592653589793 * i / fade);
      if (dur - 1 - i < fade)
        env = std::min(env, 0.5 - 0.5 * std::cos(3.141592653589793 *
                                                 (dur - 1 - i) / fade));
      clip.samples[static_cast<size_t>(cursor + i)] =
          amp * env * wave[static_cast<size_t>(i)];
    }
    const int64_t f0 = static_cast<int64_t>(std::llround(
        static_cast<double>(cursor) / sr * spec.activity_frame_rate));
    const int64_t f1 = static_cast<int64_t>(std::llround(
        static_cast<double>(cursor + dur) / sr * spec.activity_frame_rate));
    for (int64_t t = f0; t < std::min(f1, frames); ++t)
      activity[static_cast<size_t>(t)] = 1;

    active_total += dur;
    cursor += dur + static_cast<int64_t>(rng.uniform(0.4, 1.4) * sr);
  }
  clip.event_activity = std::move(activity);
  return clip;
}

// Activity sidecar: "<clip>.act" next to each WAV, one '0'/'1' byte per
// frame, so the ground-truth track survives the WAV round trip.
inline std::string activity_path(const std::string& wav_path) {
  return std::filesystem::path(wav_path).replace_extension(".act").string();
}

inline void save_activity(const AudioClip& clip, const std::string& path) {
  check(clip.event_activity.has_value(), "activity: clip has no track");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  check(f.good(), "activity: cannot open '" + path + "'");
  f << "USSACT1 " << clip.activity_frame_rate << " "
    << clip.event_activity->size() << "\n";
  for (uint8_t a : *clip.event_activity) f.put(a ? '1' : '0');
  check(f.good(), "activity: write failed for '" + path + "'");
}

inline void load_activity(AudioClip& clip, const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), "activity: cannot open '" + path + "'");
  std::string magic;
  int frame_rate = 0;
  size_t frames = 0;
  f >> magic >> frame_rate >> frames;
  check(magic == "USSACT1" && frame_rate > 0, "activity: bad header in '" + path + "'");
  f.get();  // newline
  std::vector<uint8_t> track(frames);
  for (size_t i = 0; i < frames; ++i) {
    const int c = f.get();
    check(c == '0' || c == '1', "activity: bad payload in '" + path + "'");
    track[i] = static_cast<uint8_t>(c == '1');
  }
  clip.event_activity = std::move(track);
  clip.activity_frame_rate = frame_rate;
}

// Writes <out_dir>/<class>_<idx>.wav (+ .act sidecar) for every clip plus
// manifest.jsonl; returns the manifest. Bit-identical re-runs under the same
// seed.
inline Manifest synthesize_corpus(const CorpusSpec& spec,
                                  const std::string& out_dir) {
  check(spec.classes.size() >= 2, "corpus: need at least 2 classes");
  check(spec.clip_len_s >= 2.0, "corpus: clips must be at least 2 s");
  check(spec.clips_per_class >= 1, "corpus: clips_per_class must be >= 1");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  check(!ec, "corpus: cannot create directory '" + out_dir + "': " + ec.message());

  Rng corpus_rng(spec.seed);
  Manifest manifest;
  for (size_t k = 0; k < spec.classes.size(); ++k) {
    const SynthClass& cls = spec.classes[k];
    for (int i = 0; i < spec.clips_per_class; ++i) {
      Rng clip_rng = corpus_rng.fork(k * 100000 + static_cast<uint64_t>(i));
      AudioClip clip = synthesize_clip(cls, static_cast<int>(k), spec, clip_rng);
      char name[128];
      std::snprintf(name, sizeof(name), "%s_%03d.wav", cls.name.c_str(), i);
      const std::string path = (std::filesystem::path(out_dir) / name).string();
      try {
        write_wav(clip, path, spec.wav_format);
        save_activity(clip, activity_path(path));
      } catch (const Error& e) {
        throw Error("corpus: failed writing '" + path + "': " + e.what());
      }
      manifest.records.push_back({path, static_cast<int>(k), cls.name,
                                  spec.sample_rate, spec.clip_len_s});
    }
  }
  save_manifest(manifest, (std::filesystem::path(out_dir) / "manifest.jsonl").string());
  return manifest;
}

// Loads a manifest clip with its label and, when the sidecar exists, its
// ground-truth activity track.
inline AudioClip load_clip(const ManifestRecord& rec) {
  AudioClip clip = read_wav(rec.path);
  clip.label = rec.class_id;
  const std::string act = activity_path(rec.path);
  if (std::filesystem::exists(act)) load_activity(clip, act);
  return clip;
}

// Deterministic per-class split into train / store / eval index ranges.
struct ManifestSplit {
  Manifest train, store, eval;
};

inline ManifestSplit split_manifest(const Manifest& m, int store_per_class,
                                    int eval_per_class) {
  ManifestSplit out;
  const int k = m.num_classes();
  for (int c = 0; c < k; ++c) {
    auto clips = m.of_class(c);
    check(static_cast<int>(clips.size()) > store_per_class + eval_per_class,
          "split: class " + std::to_string(c) + " has too few clips");
    const size_t n_train = clips.size() - store_per_class - eval_per_class;
    for (size_t i = 0; i < clips.size(); ++i) {
      if (i < n_train) out.train.records.push_back(clips[i]);
      else if (i < n_train + static_cast<size_t>(store_per_class))
        out.store.records.push_back(clips[i]);
      else out.eval.records.push_back(clips[i]);
    }
  }
  return out;
}

}  // namespace uss::data
