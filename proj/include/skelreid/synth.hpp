#pragma once

#include "skelreid/skeleton.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace skelreid {

/// Walking-in-place gait parameters for one synthetic person on the
/// 33-joint BlazePose layout. Lengths are in meters.
struct GaitIdentity {
  int id = 0;
  double height_scale = 1;  // [0.85, 1.15]

  // Segment lengths after scaling.
  double upper_arm = 0;
  double forearm = 0;
  double thigh = 0;
  double shin = 0;
  double torso = 0;
  double shoulder_width = 0;
  double hip_width = 0;

  double frequency = 1;    // Hz, [0.7, 1.3]
  double arm_swing = 0;    // rad, [0.25, 0.75]
  double leg_swing = 0;    // rad, [0.2, 0.5]
  double elbow_flex = 0;   // rad, [0.1, 0.7]
  double knee_flex = 0;    // rad, [0.2, 0.9]
  double arm_phase = 0;    // rad, [-0.6, 0.6], arm lag relative to the opposite leg
  double asymmetry = 0;    // rad, [-0.6, 0.6], right side lag relative to left
  double knee_phase = 0;   // rad, [-0.6, 0.6]
  double bob = 0;          // vertical bob, [0, 0.04]

  /// Every drawn parameter mapped to [0, 1] by its range.
  std::vector<double> normalized() const;

  friend bool operator==(const GaitIdentity&, const GaitIdentity&) = default;
};

/// Minimum Euclidean distance between two identities' normalized parameters.
inline constexpr double kIdentitySeparation = 0.15;

/// Deterministic in (seed, id). Identities 0..id are drawn in order and a
/// candidate is redrawn until it keeps kIdentitySeparation from every
/// earlier identity.
GaitIdentity generate_identity(std::uint64_t seed, int id);

/// Noise-free pose at gait phase `phase` (radians). Confidence is 1.
SkeletonFrame pose_at(const GaitIdentity& identity, double phase);

inline constexpr double kSynthFps = 16.0;

/// Gait phase at frame 0 of a video generated with `seed`.
double video_phase_origin(std::uint64_t seed);

/// T frames of walking with seeded Gaussian jitter of `noise` times the
/// length of the bone ending at each joint. Confidence is
/// clamp(1 - noise * |n|, 0, 1) for a standard normal n. The clothes and
/// camera ids are labels only.
SkeletonSequence generate_video(const GaitIdentity& identity, const std::string& clothes_id,
                                const std::string& camera_id, int frames, double noise, std::uint64_t seed);

struct SynthConfig {
  int identities = 10;
  int clothes = 2;
  int videos_per_clothes = 4;
  int min_frames = 60;
  int max_frames = 160;
  double noise = 0.02;
  std::uint64_t seed = 7;

  /// Throws std::invalid_argument.
  void validate() const;
};

/// Per identity and clothes, videos 0..n-3 train, n-2 query, n-1 gallery.
struct SynthBenchmark {
  std::vector<SkeletonSequence> train;
  std::vector<SkeletonSequence> query;
  std::vector<SkeletonSequence> gallery;
};

SynthBenchmark generate_benchmark(const SynthConfig& config);

}  // namespace skelreid
