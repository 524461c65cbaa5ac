#pragma once

// RIFF/WAVE reader-writer for PCM16 and IEEE float32, mono or stereo.
// Stereo is averaged to mono on load; PCM16 samples are scaled by 1/32768.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "uss/core/error.hpp"
#include "uss/data/audio_clip.hpp"

namespace uss::data {

enum class WavFormat { kPcm16, kFloat32 };

namespace detail {

inline void put_u32(std::vector<char>& v, uint32_t x) {
  v.push_back(static_cast<char>(x & 0xff));
  v.push_back(static_cast<char>((x >> 8) & 0xff));
  v.push_back(static_cast<char>((x >> 16) & 0xff));
  v.push_back(static_cast<char>((x >> 24) & 0xff));
}
inline void put_u16(std::vector<char>& v, uint16_t x) {
  v.push_back(static_cast<char>(x & 0xff));
  v.push_back(static_cast<char>((x >> 8) & 0xff));
}
inline uint32_t get_u32(const char* p) {
  return static_cast<uint8_t>(p[0]) | (static_cast<uint8_t>(p[1]) << 8) |
         (static_cast<uint8_t>(p[2]) << 16) |
         (static_cast<uint32_t>(static_cast<uint8_t>(p[3])) << 24);
}
inline uint16_t get_u16(const char* p) {
  return static_cast<uint16_t>(static_cast<uint8_t>(p[0]) |
                               (static_cast<uint8_t>(p[1]) << 8));
}

}  // namespace detail

inline AudioClip read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), "wav: cannot open '" + path + "'");
  std::vector<char> bytes((std::istreambuf_iterator<char>(f)),
                          std::istreambuf_iterator<char>());
  check(bytes.size() >= 12, "wav: '" + path + "' too short for a RIFF header");
  check(std::memcmp(bytes.data(), "RIFF", 4) == 0 &&
            std::memcmp(bytes.data() + 8, "WAVE", 4) == 0,
        "wav: '" + path + "' is not a RIFF/WAVE file");

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t sample_rate = 0;
  const char* data = nullptr;
  uint32_t data_bytes = 0;
  size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const char* id = bytes.data() + pos;
    const uint32_t size = detail::get_u32(bytes.data() + pos + 4);
    pos += 8;
    check(pos + size <= bytes.size(), "wav: truncated chunk in '" + path + "'");
    if (std::memcmp(id, "fmt ", 4) == 0) {
      check(size >= 16, "wav: fmt chunk too small in '" + path + "'");
      const char* fmt = bytes.data() + pos;
      format = detail::get_u16(fmt);
      channels = detail::get_u16(fmt + 2);
      sample_rate = detail::get_u32(fmt + 4);
      bits = detail::get_u16(fmt + 14);
    } else if (std::memcmp(id, "data", 4) == 0) {
      data = bytes.data() + pos;
      data_bytes = size;
    }
    pos += size + (size & 1);  // chunks are word-aligned
  }
  check(format != 0, "wav: '" + path + "' has no fmt chunk");
  check(data != nullptr, "wav: '" + path + "' has no data chunk");
  check(channels >= 1 && channels <= 2,
        "wav: '" + path + "' has " + std::to_string(channels) +
            " channels, only mono/stereo supported");
  const bool pcm16 = format == 1 && bits == 16;
  const bool f32 = format == 3 && bits == 32;
  check(pcm16 || f32, "wav: '" + path + "' uses codec (format=" +
                          std::to_string(format) + ", bits=" +
                          std::to_string(bits) +
                          "), only PCM16 and IEEE float32 supported");

  const uint32_t bytes_per_sample = bits / 8;
  const uint32_t frame_bytes = bytes_per_sample * channels;
  check(data_bytes % frame_bytes == 0,
        "wav: data size not a multiple of the frame size in '" + path + "'");
  const size_t n_frames = data_bytes / frame_bytes;

  AudioClip clip;
  clip.sample_rate = static_cast<int>(sample_rate);
  clip.samples.resize(n_frames);
  for (size_t i = 0; i < n_frames; ++i) {
    double acc = 0.0;
    for (uint16_t ch = 0; ch < channels; ++ch) {
      const char* p = data + i * frame_bytes + ch * bytes_per_sample;
      if (pcm16) {
        int16_t s;
        std::memcpy(&s, p, 2);
        acc += static_cast<double>(s) / 32768.0;
      } else {
        float s;
        std::memcpy(&s, p, 4);
        acc += static_cast<double>(s);
      }
    }
    clip.samples[i] = acc / channels;
  }
  return clip;
}

inline void write_wav(const AudioClip& clip, const std::string& path,
                      WavFormat format = WavFormat::kFloat32) {
  const uint16_t bits = format == WavFormat::kPcm16 ? 16 : 32;
  const uint16_t fmt_tag = format == WavFormat::kPcm16 ? 1 : 3;
  const uint32_t n = static_cast<uint32_t>(clip.samples.size());
  const uint32_t data_bytes = n * (bits / 8);

  std::vector<char> out;
  out.reserve(44 + data_bytes);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  detail::put_u32(out, 36 + data_bytes);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  detail::put_u32(out, 16);
  detail::put_u16(out, fmt_tag);
  detail::put_u16(out, 1);  // mono
  detail::put_u32(out, static_cast<uint32_t>(clip.sample_rate));
  detail::put_u32(out, static_cast<uint32_t>(clip.sample_rate) * (bits / 8));
  detail::put_u16(out, static_cast<uint16_t>(bits / 8));
  detail::put_u16(out, bits);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  detail::put_u32(out, data_bytes);

  if (format == WavFormat::kPcm16) {
    for (double v : clip.samples) {
      double scaled = std::lround(v * 32767.0);
      scaled = std::min(32767.0, std::max(-32768.0, scaled));
      const int16_t s = static_cast<int16_t>(scaled);
      out.push_back(static_cast<char>(s & 0xff));
      out.push_back(static_cast<char>((s >> 8) & 0xff));
    }
  } else {
    for (double v : clip.samples) {
      const float s = static_cast<float>(v);
      char buf[4];
      std::memcpy(buf, &s, 4);
      out.insert(out.end(), buf, buf + 4);
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  check(f.good(), "wav: cannot open '" + path + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  check(f.good(), "wav: write failed for '" + path + "'");
}

}  // namespace uss::data
