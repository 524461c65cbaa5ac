#pragma once

// Frame-wise event-presence maps and mining of fixed-length anchor windows.
// The oracle detector turns a clip's synthesis activity track into the
// probability map; the miner picks the window with the highest mean class
// probability (earliest on ties) using prefix sums.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "uss/core/error.hpp"
#include "uss/core/tensor.hpp"
#include "uss/data/audio_clip.hpp"

namespace uss::sed {

struct ProbabilityMap {
  Tensor<double> p;  // (T frames, K classes), entries in [0, 1]
  double frame_rate = 100.0;

  int64_t frames() const { return p.dim(0); }
  int64_t classes() const { return p.dim(1); }
};

struct AnchorSegment {
  std::string clip_path;  // empty when mined from an in-memory clip
  int64_t start_frame = 0;
  int64_t length_frames = 200;  // 2 s at 100 frames/s
  int class_id = 0;
  double score = 0.0;  // mean presence probability over the window
};

// Oracle detector: probability = activity in the labeled class column,
// nearest-frame resampled when the track's rate differs from `frame_rate`.
inline ProbabilityMap oracle_sed(const data::AudioClip& clip, int num_classes,
                                 double frame_rate = 100.0) {
  check(clip.event_activity.has_value(),
        "oracle_sed: clip carries no activity track");
  check(clip.label.has_value(), "oracle_sed: clip carries no class label");
  check(*clip.label >= 0 && *clip.label < num_classes,
        "oracle_sed: label outside [0, K)");
  const auto& act = *clip.event_activity;
  const double native_rate = clip.activity_frame_rate;
  const int64_t frames = static_cast<int64_t>(
      std::llround(static_cast<double>(act.size()) * frame_rate / native_rate));

  ProbabilityMap map;
  map.frame_rate = frame_rate;
  map.p = Tensor<double>({frames, num_classes});
  for (int64_t t = 0; t < frames; ++t) {
    int64_t src = static_cast<int64_t>(
        std::llround(static_cast<double>(t) * native_rate / frame_rate));
    src = std::min<int64_t>(src, static_cast<int64_t>(act.size()) - 1);
    map.p.at(t, *clip.label) = act[static_cast<size_t>(src)] ? 1.0 : 0.0;
  }
  return map;
}

// Best window by mean probability, earliest start on ties. Window sums come
// from a prefix-sum array; candidates within a 1e-12 relative band of the
// running best count as ties so the result matches a naive exhaustive scan
// even when rounding differs.
inline std::optional<AnchorSegment> mine_anchor(const ProbabilityMap& map,
                                                int class_id,
                                                int64_t window_frames = 200) {
  const int64_t T = map.frames(), K = map.classes();
  check(class_id >= 0 && class_id < K, "mine_anchor: class out of range");
  check(window_frames >= 1 && window_frames <= T,
        "mine_anchor: window must be in [1, T]");

  std::vector<double> prefix(static_cast<size_t>(T + 1), 0.0);
  bool any_nonzero = false;
  for (int64_t t = 0; t < T; ++t) {
    const double v = map.p.at(t, class_id);
    check(v >= 0.0 && v <= 1.0, "mine_anchor: probability outside [0, 1]");
    any_nonzero |= v != 0.0;
    prefix[static_cast<size_t>(t + 1)] = prefix[static_cast<size_t>(t)] + v;
  }
  if (!any_nonzero) return std::nullopt;

  int64_t best_start = 0;
  double best_sum = prefix[static_cast<size_t>(window_frames)];
  for (int64_t s = 1; s + window_frames <= T; ++s) {
    const double sum = prefix[static_cast<size_t>(s + window_frames)] -
                       prefix[static_cast<size_t>(s)];
    if (sum > best_sum + 1e-12 * std::max(1.0, std::abs(best_sum))) {
      best_sum = sum;
      best_start = s;
    }
  }
  AnchorSegment a;
  a.start_frame = best_start;
  a.length_frames = window_frames;
  a.class_id = class_id;
  a.score = best_sum / static_cast<double>(window_frames);
  return a;
}

// Cuts the anchor window out of the clip: frames map to samples through the
// hop implied by the map frame rate; a short tail is zero-padded.
inline data::AudioClip extract_segment(const data::AudioClip& clip,
                                       const AnchorSegment& anchor,
                                       double frame_rate = 100.0) {
  const double hop = static_cast<double>(clip.sample_rate) / frame_rate;
  const int64_t start =
      static_cast<int64_t>(std::llround(anchor.start_frame * hop));
  const int64_t len =
      static_cast<int64_t>(std::llround(anchor.length_frames * hop));
  check(anchor.start_frame >= 0 && start < clip.length(),
        "extract_segment: anchor outside clip bounds");
  data::AudioClip out;
  out.sample_rate = clip.sample_rate;
  out.label = clip.label;
  out.samples.assign(static_cast<size_t>(len), 0.0);
  const int64_t avail = std::min(len, clip.length() - start);
  for (int64_t i = 0; i < avail; ++i)
    out.samples[static_cast<size_t>(i)] = clip.samples[static_cast<size_t>(start + i)];
  return out;
}

// ------------------------------------------------------------ anchor lists

inline void save_anchors(const std::vector<AnchorSegment>& anchors,
                         const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  check(f.good(), "anchors: cannot open '" + path + "'");
  for (const auto& a : anchors) {
    nlohmann::json j;
    j["clip_path"] = a.clip_path;
    j["class_id"] = a.class_id;
    j["start_frame"] = a.start_frame;
    j["length_frames"] = a.length_frames;
    j["score"] = a.score;
    f << j.dump() << "\n";
  }
  check(f.good(), "anchors: write failed for '" + path + "'");
}

inline std::vector<AnchorSegment> load_anchors(const std::string& path) {
  std::ifstream f(path);
  check(f.good(), "anchors: cannot open '" + path + "'");
  std::vector<AnchorSegment> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    check(!j.is_discarded(), "anchors: bad JSON line in '" + path + "'");
    AnchorSegment a;
    a.clip_path = j.at("clip_path").get<std::string>();
    a.class_id = j.at("class_id").get<int>();
    a.start_frame = j.at("start_frame").get<int64_t>();
    a.length_frames = j.at("length_frames").get<int64_t>();
    a.score = j.at("score").get<double>();
    out.push_back(std::move(a));
  }
  return out;
}

}  // namespace uss::sed
