#include <catch2/catch_amalgamated.hpp>

#include "uss/core/rng.hpp"
#include "uss/sed/anchor.hpp"

using namespace uss;
using data::AudioClip;
using sed::ProbabilityMap;

namespace {

// Naive exhaustive argmax over window sums, strict improvement, earliest tie.
int64_t brute_force_best_start(const ProbabilityMap& map, int class_id,
                               int64_t window) {
  int64_t best_start = 0;
  double best = -1.0;
  for (int64_t s = 0; s + window <= map.frames(); ++s) {
    double sum = 0.0;
    for (int64_t t = s; t < s + window; ++t) sum += map.p.at(t, class_id);
    if (sum > best) {
      best = sum;
      best_start = s;
    }
  }
  return best_start;
}

ProbabilityMap random_map(int64_t T, int64_t K, Rng& rng) {
  ProbabilityMap map;
  map.p = Tensor<double>({T, K});
  for (int64_t i = 0; i < map.p.size(); ++i) map.p[i] = rng.real();
  return map;
}

}  // namespace

TEST_CASE("oracle sed reproduces the activity track in the label column") {
  AudioClip clip;
  clip.sample_rate = 32000;
  clip.label = 2;
  clip.activity_frame_rate = 100;
  std::vector<uint8_t> act(1000, 0);
  for (int t = 100; t < 500; ++t) act[t] = 1;
  clip.event_activity = act;

  auto map = sed::oracle_sed(clip, 6);
  REQUIRE(map.frames() == 1000);
  REQUIRE(map.classes() == 6);
  for (int64_t t = 0; t < 1000; ++t)
    for (int64_t k = 0; k < 6; ++k) {
      const double expect = (k == 2 && t >= 100 && t < 500) ? 1.0 : 0.0;
      CHECK(map.p.at(t, k) == expect);
    }
}

TEST_CASE("oracle sed of a silent clip is all zero and missing tracks reject") {
  AudioClip clip;
  clip.label = 0;
  clip.event_activity = std::vector<uint8_t>(500, 0);
  auto map = sed::oracle_sed(clip, 3);
  for (int64_t i = 0; i < map.p.size(); ++i) CHECK(map.p[i] == 0.0);

  AudioClip no_track;
  no_track.label = 0;
  CHECK_THROWS_AS(sed::oracle_sed(no_track, 3), Error);
}

TEST_CASE("oracle sed resamples a mismatched frame rate by nearest frame") {
  AudioClip clip;
  clip.label = 0;
  clip.activity_frame_rate = 50;  // native 50 fps, target 100 fps
  std::vector<uint8_t> act(100, 0);
  for (int t = 20; t < 40; ++t) act[t] = 1;
  clip.event_activity = act;

  auto map = sed::oracle_sed(clip, 1, 100.0);
  REQUIRE(map.frames() == 200);
  // brute-force re-binning oracle: out[t] = act[nearest]
  for (int64_t t = 0; t < 200; ++t) {
    int64_t src = static_cast<int64_t>(std::llround(t * 50.0 / 100.0));
    src = std::min<int64_t>(src, 99);
    CHECK(map.p.at(t, 0) == (act[static_cast<size_t>(src)] ? 1.0 : 0.0));
  }
}

TEST_CASE("mine_anchor finds the fully active window") {
  ProbabilityMap map;
  map.p = Tensor<double>({600, 3});
  for (int64_t t = 100; t < 300; ++t) map.p.at(t, 1) = 1.0;
  auto a = sed::mine_anchor(map, 1, 200);
  REQUIRE(a.has_value());
  CHECK(a->start_frame == 100);
  CHECK(a->score == Catch::Approx(1.0));
}

TEST_CASE("mine_anchor breaks ties at the earliest start") {
  ProbabilityMap map;
  map.p = Tensor<double>({500, 2});
  for (int64_t t = 0; t < 500; ++t) map.p.at(t, 0) = 0.37;
  auto a = sed::mine_anchor(map, 0, 128);
  REQUIRE(a.has_value());
  CHECK(a->start_frame == 0);
}

TEST_CASE("mine_anchor returns no anchor for an all-zero column") {
  ProbabilityMap map;
  map.p = Tensor<double>({300, 2});
  for (int64_t t = 0; t < 300; ++t) map.p.at(t, 1) = 0.5;
  CHECK_FALSE(sed::mine_anchor(map, 0, 100).has_value());
}

TEST_CASE("mine_anchor equals brute force on random maps") {
  Rng rng(99);
  for (int trial = 0; trial < 60; ++trial) {
    const int64_t T = 50 + static_cast<int64_t>(rng.below(1951));
    const int64_t K = 1 + static_cast<int64_t>(rng.below(10));
    const int64_t W = 1 + static_cast<int64_t>(rng.below(static_cast<uint64_t>(T)));
    auto map = random_map(T, K, rng);
    const int cls = static_cast<int>(rng.below(static_cast<uint64_t>(K)));
    auto mined = sed::mine_anchor(map, cls, W);
    REQUIRE(mined.has_value());
    const int64_t expect = brute_force_best_start(map, cls, W);
    INFO("T=" << T << " K=" << K << " W=" << W << " class=" << cls);
    CHECK(mined->start_frame == expect);
  }
}

TEST_CASE("prefix-sum window means match the naive computation to 1e-12") {
  Rng rng(123);
  auto map = random_map(800, 4, rng);
  const int64_t W = 150;
  std::vector<double> prefix(801, 0.0);
  for (int64_t t = 0; t < 800; ++t) prefix[t + 1] = prefix[t] + map.p.at(t, 2);
  for (int64_t s = 0; s + W <= 800; ++s) {
    double naive = 0.0;
    for (int64_t t = s; t < s + W; ++t) naive += map.p.at(t, 2);
    CHECK(std::abs((prefix[s + W] - prefix[s]) - naive) < 1e-12 * std::max(1.0, naive));
  }
}

TEST_CASE("extract_segment maps frames to samples with zero-padded tails") {
  AudioClip clip;
  clip.sample_rate = 32000;
  clip.samples.resize(320000);
  Rng rng(5);
  for (auto& s : clip.samples) s = rng.uniform(-1, 1);

  sed::AnchorSegment a;
  a.start_frame = 0;
  a.length_frames = 200;
  auto seg = sed::extract_segment(clip, a);
  REQUIRE(seg.samples.size() == 64000);
  for (int64_t i = 0; i < 64000; ++i) CHECK(seg.samples[i] == clip.samples[i]);

  // anchor whose tail runs 1000 samples past the clip end
  sed::AnchorSegment tail;
  tail.start_frame = (320000 - 63000) / 320;  // start so ~1000 samples missing
  tail.length_frames = 200;
  auto seg2 = sed::extract_segment(clip, tail);
  REQUIRE(seg2.samples.size() == 64000);
  const int64_t start = tail.start_frame * 320;
  const int64_t avail = 320000 - start;
  for (int64_t i = avail; i < 64000; ++i) CHECK(seg2.samples[i] == 0.0);
  CHECK(seg2.samples[avail - 1] == clip.samples[320000 - 1]);

  sed::AnchorSegment oob;
  oob.start_frame = 2000;  // starts past the clip end
  CHECK_THROWS_AS(sed::extract_segment(clip, oob), Error);
}

TEST_CASE("the true activity block has the highest window energy") {
  AudioClip clip;
  clip.sample_rate = 32000;
  clip.samples.assign(320000, 0.0);
  // single 2.5-s event at 3.0 s
  for (int64_t i = 96000; i < 176000; ++i)
    clip.samples[i] = 0.5 * std::sin(0.1 * static_cast<double>(i));
  clip.label = 0;
  std::vector<uint8_t> act(1000, 0);
  for (int t = 300; t < 550; ++t) act[t] = 1;
  clip.event_activity = act;

  auto map = sed::oracle_sed(clip, 1);
  auto anchor = sed::mine_anchor(map, 0, 200);
  REQUIRE(anchor.has_value());
  auto seg = sed::extract_segment(clip, *anchor);
  const double anchor_energy = seg.energy();

  Rng rng(17);
  for (int trial = 0; trial < 30; ++trial) {
    sed::AnchorSegment r;
    r.start_frame = static_cast<int64_t>(rng.below(800));
    r.length_frames = 200;
    auto rseg = sed::extract_segment(clip, r);
    // windows fully inside the same event tie up to sine-phase wobble
    CHECK(anchor_energy >= 0.999 * rseg.energy());
  }
}

TEST_CASE("anchor list export round trips") {
  std::vector<sed::AnchorSegment> anchors;
  anchors.push_back({"clips/a.wav", 120, 200, 3, 0.87});
  anchors.push_back({"clips/b.wav", 0, 200, 1, 1.0});
  const std::string path = "anchors_test.jsonl";
  sed::save_anchors(anchors, path);
  auto back = sed::load_anchors(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].clip_path == "clips/a.wav");
  CHECK(back[0].start_frame == 120);
  CHECK(back[1].score == 1.0);
  std::remove(path.c_str());
}
