#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "uss/data/manifest.hpp"
#include "uss/data/resample.hpp"
#include "uss/data/synth.hpp"
#include "uss/data/wav.hpp"
#include "uss/dsp/stft.hpp"

using namespace uss;
using data::AudioClip;

namespace {

std::string temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("uss_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

std::vector<char> read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("float32 wav round trip is bit exact") {
  AudioClip c;
  c.sample_rate = 32000;
  Rng rng(3);
  for (int i = 0; i < 4096; ++i)
    c.samples.push_back(static_cast<double>(static_cast<float>(rng.uniform(-1, 1))));
  const std::string dir = temp_dir("wav_f32");
  const std::string path = dir + "/x.wav";
  data::write_wav(c, path, data::WavFormat::kFloat32);
  auto back = data::read_wav(path);
  REQUIRE(back.samples.size() == c.samples.size());
  CHECK(back.sample_rate == 32000);
  bool identical = true;
  for (size_t i = 0; i < c.samples.size(); ++i)
    identical &= back.samples[i] == c.samples[i];
  CHECK(identical);
}

TEST_CASE("pcm16 full-scale square wave loads as +-32767/32768") {
  AudioClip c;
  c.sample_rate = 16000;
  for (int i = 0; i < 64; ++i) c.samples.push_back(i % 2 ? 1.0 : -1.0);
  const std::string path = temp_dir("wav_pcm") + "/sq.wav";
  data::write_wav(c, path, data::WavFormat::kPcm16);
  auto back = data::read_wav(path);
  const double expect = 32767.0 / 32768.0;
  for (size_t i = 0; i < back.samples.size(); ++i)
    CHECK(back.samples[i] == Catch::Approx(i % 2 ? expect : -expect).margin(1e-12));
}

TEST_CASE("stereo wav is averaged to mono") {
  // hand-build a 2-channel PCM16 file: L = 8192, R = -4096
  std::vector<char> bytes;
  auto put_str = [&](const char* s) { bytes.insert(bytes.end(), s, s + 4); };
  put_str("RIFF");
  data::detail::put_u32(bytes, 36 + 16);
  put_str("WAVE");
  put_str("fmt ");
  data::detail::put_u32(bytes, 16);
  data::detail::put_u16(bytes, 1);
  data::detail::put_u16(bytes, 2);
  data::detail::put_u32(bytes, 8000);
  data::detail::put_u32(bytes, 8000 * 4);
  data::detail::put_u16(bytes, 4);
  data::detail::put_u16(bytes, 16);
  put_str("data");
  data::detail::put_u32(bytes, 16);
  for (int i = 0; i < 4; ++i) {
    data::detail::put_u16(bytes, 8192);
    data::detail::put_u16(bytes, static_cast<uint16_t>(-4096));
  }
  const std::string path = temp_dir("wav_stereo") + "/st.wav";
  std::ofstream(path, std::ios::binary).write(bytes.data(), bytes.size());
  auto clip = data::read_wav(path);
  REQUIRE(clip.samples.size() == 4);
  for (double s : clip.samples)
    CHECK(s == Catch::Approx((8192.0 - 4096.0) / 2.0 / 32768.0).margin(1e-12));
}

TEST_CASE("malformed wav headers are rejected with a cause") {
  const std::string dir = temp_dir("wav_bad");
  const std::string path = dir + "/bad.wav";
  std::ofstream(path, std::ios::binary) << "NOTARIFFFILE____";
  CHECK_THROWS_WITH(data::read_wav(path), Catch::Matchers::ContainsSubstring("RIFF"));
  CHECK_THROWS_AS(data::read_wav(dir + "/missing.wav"), Error);
}

TEST_CASE("resample identity and spectral-peak preservation") {
  // identity
  AudioClip c;
  c.sample_rate = 32000;
  Rng rng(4);
  for (int i = 0; i < 1000; ++i) c.samples.push_back(rng.uniform(-1, 1));
  auto same = data::resample(c, 32000);
  CHECK(same.samples == c.samples);

  // 1 kHz sine upsampled 16k -> 32k keeps its dominant bin
  AudioClip sine;
  sine.sample_rate = 16000;
  sine.samples.resize(32000);
  for (size_t i = 0; i < sine.samples.size(); ++i)
    sine.samples[i] = 0.5 * std::sin(6.283185307179586 * 1000.0 * i / 16000.0);
  auto up = data::resample(sine, 32000);
  CHECK(up.samples.size() == 64000);
  dsp::StftConfig cfg;
  auto spec = dsp::stft(up, cfg);
  const int64_t t = spec.frames / 2;
  int64_t argmax = 0;
  double best = -1;
  for (int64_t f = 0; f < spec.bins; ++f)
    if (std::abs(spec.at(t, f)) > best) {
      best = std::abs(spec.at(t, f));
      argmax = f;
    }
  const double peak_hz = static_cast<double>(argmax) * 32000.0 / 1024.0;
  CHECK(std::abs(peak_hz - 1000.0) < 32000.0 / 1024.0);
}

TEST_CASE("resample preserves DC") {
  AudioClip c;
  c.sample_rate = 16000;
  c.samples.assign(8000, 0.25);
  auto up = data::resample(c, 32000);
  // away from the edges the windowed-sinc branches are normalized to 1
  for (size_t i = 200; i + 200 < up.samples.size(); ++i)
    CHECK(up.samples[i] == Catch::Approx(0.25).epsilon(1e-3));
}

TEST_CASE("resample rejects unsupported ratios") {
  AudioClip c;
  c.sample_rate = 44100;
  c.samples.assign(100, 0.0);
  CHECK_THROWS_AS(data::resample(c, 32003), Error);  // coprime, huge factor
}

TEST_CASE("corpus generation is deterministic and in bounds") {
  data::CorpusSpec spec;
  spec.clips_per_class = 2;
  spec.clip_len_s = 4.0;
  spec.classes = data::default_synth_classes();
  spec.seed = 7;

  const std::string dir_a = temp_dir("corpus_a");
  const std::string dir_b = temp_dir("corpus_b");
  auto ma = data::synthesize_corpus(spec, dir_a);
  auto mb = data::synthesize_corpus(spec, dir_b);
  REQUIRE(ma.records.size() == 12);
  ma.validate_class_ids();

  for (size_t i = 0; i < ma.records.size(); ++i) {
    auto a = read_bytes(ma.records[i].path);
    auto b = read_bytes(mb.records[i].path);
    REQUIRE(!a.empty());
    CHECK(a == b);  // bit-identical under the same seed
  }

  for (const auto& rec : ma.records) {
    auto clip = data::load_clip(rec);
    REQUIRE(clip.event_activity.has_value());
    CHECK(clip.label == rec.class_id);
    for (double s : clip.samples) CHECK(std::abs(s) <= 1.0);

    // duty cycle within [0.3, 0.9]
    const auto& act = *clip.event_activity;
    double active = 0;
    for (uint8_t a : act) active += a;
    const double duty = active / static_cast<double>(act.size());
    INFO(rec.path);
    CHECK(duty >= 0.3);
    CHECK(duty <= 0.9);

    // active frames carry at least 10x the mean energy of silent frames
    const int64_t hop = clip.sample_rate / clip.activity_frame_rate;
    double e_active = 0, e_silent = 0;
    int64_t n_active = 0, n_silent = 0;
    for (size_t t = 0; t < act.size(); ++t) {
      double e = 0;
      for (int64_t i = 0; i < hop; ++i) {
        const size_t idx = t * hop + i;
        if (idx < clip.samples.size()) e += clip.samples[idx] * clip.samples[idx];
      }
      if (act[t]) {
        e_active += e;
        ++n_active;
      } else {
        e_silent += e;
        ++n_silent;
      }
    }
    REQUIRE(n_active > 0);
    REQUIRE(n_silent > 0);
    CHECK(e_active / n_active >= 10.0 * (e_silent / std::max<int64_t>(1, n_silent)));
  }
}

TEST_CASE("sine-class clip concentrates energy at the generated band") {
  data::CorpusSpec spec;
  spec.clips_per_class = 1;
  spec.clip_len_s = 4.0;
  spec.seed = 21;
  const std::string dir = temp_dir("corpus_sine");
  auto m = data::synthesize_corpus(spec, dir);
  auto clip = data::load_clip(m.records[0]);  // tone_low, 420-600 Hz
  dsp::StftConfig cfg;
  auto spec_m = dsp::stft(clip, cfg);
  // pick the frame with the most energy, its peak bin must sit in the band
  double best_e = -1;
  int64_t best_t = 0;
  for (int64_t t = 0; t < spec_m.frames; ++t) {
    double e = 0;
    for (int64_t f = 0; f < spec_m.bins; ++f) e += std::norm(spec_m.at(t, f));
    if (e > best_e) {
      best_e = e;
      best_t = t;
    }
  }
  int64_t argmax = 0;
  double best = -1;
  for (int64_t f = 0; f < spec_m.bins; ++f)
    if (std::abs(spec_m.at(best_t, f)) > best) {
      best = std::abs(spec_m.at(best_t, f));
      argmax = f;
    }
  const double hz = static_cast<double>(argmax) * cfg.sample_rate / cfg.window_size;
  CHECK(hz >= 400.0);
  CHECK(hz <= 620.0);
}

TEST_CASE("manifest round trip and validation") {
  const std::string dir = temp_dir("manifest");
  data::Manifest m;
  const std::string wav = dir + "/a.wav";
  AudioClip c;
  c.sample_rate = 32000;
  c.samples.assign(100, 0.1);
  data::write_wav(c, wav);
  m.records.push_back({wav, 0, "tone_low", 32000, 2.0});
  const std::string path = dir + "/manifest.jsonl";
  data::save_manifest(m, path);
  auto back = data::load_manifest(path);
  REQUIRE(back.records.size() == 1);
  CHECK(back.records[0].class_name == "tone_low");

  // a manifest pointing at a missing file is rejected
  m.records[0].path = dir + "/gone.wav";
  data::save_manifest(m, path);
  CHECK_THROWS_AS(data::load_manifest(path), Error);

  // non-dense class ids are rejected
  m.records[0] = {wav, 2, "x", 32000, 2.0};
  data::save_manifest(m, path);
  CHECK_THROWS_AS(data::load_manifest(path), Error);
}
