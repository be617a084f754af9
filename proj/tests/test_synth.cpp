#include <doctest.h>

#include "skelreid/synth.hpp"

#include <cmath>
#include <numbers>
#include <set>

using namespace skelreid;

namespace {

double max_frame_displacement(const SkeletonFrame& a, const SkeletonFrame& b) {
  double worst = 0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    worst = std::max(worst, std::hypot(a[j].x - b[j].x, a[j].y - b[j].y, a[j].z - b[j].z));
  }
  return worst;
}

}  // namespace

TEST_CASE("identities are deterministic and inside their ranges") {
  CHECK(generate_identity(7, 3) == generate_identity(7, 3));
  CHECK_FALSE(generate_identity(7, 3) == generate_identity(8, 3));
  CHECK_THROWS(generate_identity(7, -1));
  for (int id = 0; id < 10; ++id) {
    const GaitIdentity g = generate_identity(7, id);
    CHECK(g.id == id);
    CHECK(g.frequency > 0);
    for (double v : {g.upper_arm, g.forearm, g.thigh, g.shin, g.torso, g.shoulder_width, g.hip_width}) CHECK(v > 0);
    const auto n = g.normalized();
    CHECK(n.size() == 17);
    for (double v : n) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    CHECK(g.frequency >= 0.7);
    CHECK(g.frequency <= 1.3);
    CHECK(g.bob <= 0.04);
  }
}

TEST_CASE("ten identities are pairwise separated") {
  std::vector<std::vector<double>> params;
  for (int id = 0; id < 10; ++id) params.push_back(generate_identity(7, id).normalized());
  for (int a = 0; a < 10; ++a) {
    for (int b = a + 1; b < 10; ++b) {
      double d = 0;
      for (std::size_t i = 0; i < params[a].size(); ++i) d += (params[a][i] - params[b][i]) * (params[a][i] - params[b][i]);
      CHECK(std::sqrt(d) >= kIdentitySeparation);
    }
  }
}

TEST_CASE("videos are bit-deterministic") {
  const GaitIdentity g = generate_identity(7, 2);
  const auto a = generate_video(g, "c0", "cam0", 80, 0.02, 123);
  const auto b = generate_video(g, "c0", "cam0", 80, 0.02, 123);
  CHECK(a == b);
  CHECK_FALSE(a == generate_video(g, "c0", "cam0", 80, 0.02, 124));
  CHECK(a.frames.size() == 80);
  CHECK(a.joint_count() == 33);
  CHECK(a.labels.person_id == "p02");
  CHECK(a.labels.clothes_id == "c0");
  CHECK_THROWS(generate_video(g, "c0", "cam0", 0, 0.0, 1));
  CHECK_THROWS(generate_video(g, "c0", "cam0", 10, -0.1, 1));
}

TEST_CASE("without noise, clothes change nothing but the labels") {
  const GaitIdentity g = generate_identity(7, 4);
  const auto a = generate_video(g, "c0", "cam0", 60, 0.0, 5);
  const auto b = generate_video(g, "c1", "cam0", 60, 0.0, 5);
  CHECK(a.frames == b.frames);
  CHECK(a.labels.clothes_id != b.labels.clothes_id);

  // Different video seeds only move the phase origin.
  const auto c = generate_video(g, "c1", "cam1", 60, 0.0, 6);
  const double step = 2.0 * std::numbers::pi * g.frequency / kSynthFps;
  for (int t = 0; t < 60; t += 7) {
    CHECK(max_frame_displacement(a.frames[t], pose_at(g, video_phase_origin(5) + step * t)) < 1e-12);
    CHECK(max_frame_displacement(c.frames[t], pose_at(g, video_phase_origin(6) + step * t)) < 1e-12);
  }
}

TEST_CASE("confidence stays in the unit interval") {
  const GaitIdentity g = generate_identity(7, 0);
  for (const auto& f : generate_video(g, "c0", "cam0", 20, 0.0, 1).frames) {
    for (const Joint& j : f) CHECK(j.c == 1.0);
  }
  bool hit_zero = false;
  for (const auto& f : generate_video(g, "c0", "cam0", 40, 1.5, 1).frames) {
    for (const Joint& j : f) {
      CHECK(j.c >= 0.0);
      CHECK(j.c <= 1.0);
      hit_zero = hit_zero || j.c == 0.0;
    }
  }
  CHECK(hit_zero);
}

TEST_CASE("different identities move differently") {
  // Same seed, so the same phase origin; separation comes from the gait.
  const int frames = 64;
  for (int a = 0; a < 4; ++a) {
    for (int b = a + 1; b < 4; ++b) {
      const auto va = generate_video(generate_identity(7, a), "c0", "cam0", frames, 0.0, 11);
      const auto vb = generate_video(generate_identity(7, b), "c0", "cam0", frames, 0.0, 11);
      double worst = 0;
      for (int t = 0; t < frames; ++t) worst = std::max(worst, max_frame_displacement(va.frames[t], vb.frames[t]));
      CHECK(worst > 0.05);
    }
  }
}

TEST_CASE("default benchmark layout") {
  const SynthConfig cfg;
  const SynthBenchmark b = generate_benchmark(cfg);
  CHECK(b.train.size() == 10 * 2 * 2);
  CHECK(b.query.size() == 20);
  CHECK(b.gallery.size() == 20);
  std::set<std::string> videos;
  for (const auto* part : {&b.train, &b.query, &b.gallery}) {
    for (const auto& v : *part) {
      CHECK(v.frames.size() >= 60);
      CHECK(v.frames.size() <= 160);
      videos.insert(v.labels.video_id);
    }
  }
  CHECK(videos.size() == 80);
  CHECK(generate_benchmark(cfg).query == b.query);

  SynthConfig bad;
  bad.videos_per_clothes = 2;
  CHECK_THROWS(generate_benchmark(bad));
  bad = SynthConfig{};
  bad.min_frames = 200;
  CHECK_THROWS(bad.validate());
}
