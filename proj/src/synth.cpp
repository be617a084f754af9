#include "skelreid/synth.hpp"

#include "skelreid/random.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <stdexcept>

namespace skelreid {

namespace {

using Vec3 = Eigen::Vector3d;

// Segment lengths of a unit-scale body.
constexpr std::array<double, 7> kBaseLengths = {0.30, 0.26, 0.44, 0.42, 0.50, 0.38, 0.26};
constexpr double kLimbMin = 0.85;
constexpr double kLimbMax = 1.15;

struct Range {
  double lo;
  double hi;
  double map(double u) const { return lo + (hi - lo) * u; }
  double unmap(double v) const { return (v - lo) / (hi - lo); }
};

constexpr Range kHeight{0.85, 1.15};
constexpr Range kFrequency{0.7, 1.3};
constexpr Range kArmSwing{0.25, 0.75};
constexpr Range kLegSwing{0.2, 0.5};
constexpr Range kElbowFlex{0.1, 0.7};
constexpr Range kKneeFlex{0.2, 0.9};
constexpr Range kPhase{-0.6, 0.6};
constexpr Range kBob{0.0, 0.04};

double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::array<double*, 7> lengths(GaitIdentity& g) {
  return {&g.upper_arm, &g.forearm, &g.thigh, &g.shin, &g.torso, &g.shoulder_width, &g.hip_width};
}

GaitIdentity draw_identity(std::uint64_t seed, int id, int attempt) {
  std::mt19937_64 rng(derive_seed(seed, {0x6964, static_cast<std::uint64_t>(id), static_cast<std::uint64_t>(attempt)}));
  GaitIdentity g;
  g.id = id;
  g.height_scale = kHeight.map(unit(rng));
  auto ls = lengths(g);
  for (std::size_t i = 0; i < ls.size(); ++i) {
    *ls[i] = kBaseLengths[i] * g.height_scale * (kLimbMin + (kLimbMax - kLimbMin) * unit(rng));
  }
  g.frequency = kFrequency.map(unit(rng));
  g.arm_swing = kArmSwing.map(unit(rng));
  g.leg_swing = kLegSwing.map(unit(rng));
  g.elbow_flex = kElbowFlex.map(unit(rng));
  g.knee_flex = kKneeFlex.map(unit(rng));
  g.arm_phase = kPhase.map(unit(rng));
  g.asymmetry = kPhase.map(unit(rng));
  g.knee_phase = kPhase.map(unit(rng));
  g.bob = kBob.map(unit(rng));
  return g;
}

double separation(const GaitIdentity& a, const GaitIdentity& b) {
  const auto u = a.normalized();
  const auto v = b.normalized();
  double s = 0;
  for (std::size_t i = 0; i < u.size(); ++i) s += (u[i] - v[i]) * (u[i] - v[i]);
  return std::sqrt(s);
}

// Unit direction hanging down and rotated forward by `angle` in the
// sagittal plane (y up, z forward).
Vec3 limb_dir(double angle) { return {0.0, -std::cos(angle), std::sin(angle)}; }

}  // namespace

std::vector<double> GaitIdentity::normalized() const {
  std::vector<double> out{kHeight.unmap(height_scale)};
  GaitIdentity copy = *this;
  auto ls = lengths(copy);
  for (std::size_t i = 0; i < ls.size(); ++i) {
    out.push_back((*ls[i] / (kBaseLengths[i] * height_scale) - kLimbMin) / (kLimbMax - kLimbMin));
  }
  for (auto [r, v] : {std::pair{kFrequency, frequency}, {kArmSwing, arm_swing}, {kLegSwing, leg_swing},
                      {kElbowFlex, elbow_flex}, {kKneeFlex, knee_flex}, {kPhase, arm_phase}, {kPhase, asymmetry},
                      {kPhase, knee_phase}, {kBob, bob}}) {
    out.push_back(r.unmap(v));
  }
  return out;
}

GaitIdentity generate_identity(std::uint64_t seed, int id) {
  if (id < 0) throw std::invalid_argument("generate_identity: id must be non-negative");
  std::vector<GaitIdentity> accepted;
  for (int i = 0; i <= id; ++i) {
    for (int attempt = 0;; ++attempt) {
      GaitIdentity candidate = draw_identity(seed, i, attempt);
      const bool far = std::all_of(accepted.begin(), accepted.end(), [&](const GaitIdentity& other) {
        return separation(candidate, other) >= kIdentitySeparation;
      });
      if (far) {
        accepted.push_back(candidate);
        break;
      }
    }
  }
  return accepted.back();
}

SkeletonFrame pose_at(const GaitIdentity& g, double phase) {
  const double s = g.height_scale;
  std::array<Vec3, 33> p;

  // Hip-centered body frame.
  const Vec3 pelvis(0.0, g.bob * std::cos(2.0 * phase), 0.0);
  const Vec3 chest = pelvis + Vec3(0.0, g.torso, 0.0);

  // side 0 is the subject's left (+x), side 1 the right.
  for (int side = 0; side < 2; ++side) {
    const double sign = side == 0 ? 1.0 : -1.0;
    const double leg_phase = side == 0 ? phase : phase + std::numbers::pi + g.asymmetry;

    const Vec3 hip = pelvis + Vec3(sign * 0.5 * g.hip_width, 0.0, 0.0);
    const double thigh_angle = g.leg_swing * std::sin(leg_phase);
    const double knee_bend = g.knee_flex * (0.5 + 0.5 * std::sin(leg_phase + g.knee_phase));
    const Vec3 knee = hip + g.thigh * limb_dir(thigh_angle);
    const Vec3 ankle = knee + g.shin * limb_dir(thigh_angle - knee_bend);
    p[23 + side] = hip;
    p[25 + side] = knee;
    p[27 + side] = ankle;
    p[29 + side] = ankle + s * Vec3(0.0, -0.06, -0.05);
    p[31 + side] = ankle + s * Vec3(0.0, -0.07, 0.16);

    // Arms swing against the leg on the same side.
    const Vec3 shoulder = chest + Vec3(sign * 0.5 * g.shoulder_width, 0.0, 0.0);
    const double arm_angle = -g.arm_swing * std::sin(leg_phase + g.arm_phase);
    const double fore_angle = arm_angle + g.elbow_flex * (0.5 + 0.5 * std::sin(leg_phase + g.arm_phase));
    const Vec3 elbow = shoulder + g.upper_arm * limb_dir(arm_angle);
    const Vec3 fore = limb_dir(fore_angle);
    const Vec3 wrist = elbow + g.forearm * fore;
    p[11 + side] = shoulder;
    p[13 + side] = elbow;
    p[15 + side] = wrist;
    p[17 + side] = wrist + s * (0.08 * fore + Vec3(sign * 0.02, 0.0, 0.0));
    p[19 + side] = wrist + s * 0.09 * fore;
    p[21 + side] = wrist + s * (0.05 * fore + Vec3(0.0, 0.0, 0.03));
  }

  const Vec3 nose = chest + s * Vec3(0.0, 0.24, 0.10);
  p[0] = nose;
  const std::array<Vec3, 3> eye = {Vec3(0.015, 0.03, -0.01), Vec3(0.03, 0.03, -0.015), Vec3(0.045, 0.03, -0.02)};
  for (int i = 0; i < 3; ++i) {
    p[1 + i] = nose + s * eye[i];
    p[4 + i] = nose + s * Vec3(-eye[i].x(), eye[i].y(), eye[i].z());
  }
  p[7] = nose + s * Vec3(0.075, 0.0, -0.08);
  p[8] = nose + s * Vec3(-0.075, 0.0, -0.08);
  p[9] = nose + s * Vec3(0.025, -0.035, -0.01);
  p[10] = nose + s * Vec3(-0.025, -0.035, -0.01);

  SkeletonFrame frame(p.size());
  for (std::size_t j = 0; j < p.size(); ++j) frame[j] = {p[j].x(), p[j].y(), p[j].z(), 1.0};
  return frame;
}

double video_phase_origin(std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, {0x706861}));
  return 2.0 * std::numbers::pi * unit(rng);
}

SkeletonSequence generate_video(const GaitIdentity& identity, const std::string& clothes_id,
                                const std::string& camera_id, int frames, double noise, std::uint64_t seed) {
  if (frames < 1) throw std::invalid_argument("generate_video: need at least one frame");
  if (!(noise >= 0.0)) throw std::invalid_argument("generate_video: noise must be non-negative");

  const Topology& topo = Topology::blazepose33();
  const SkeletonFrame rest = pose_at(identity, 0.0);
  std::vector<double> bone(rest.size(), 0.0);
  double mean_bone = 0;
  for (std::size_t j = 0; j < rest.size(); ++j) {
    const int parent = topo.parents()[j];
    if (parent < 0) continue;
    const Joint& a = rest[j];
    const Joint& b = rest[static_cast<std::size_t>(parent)];
    bone[j] = std::sqrt((a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y) + (a.z - b.z) * (a.z - b.z));
    mean_bone += bone[j];
  }
  bone[static_cast<std::size_t>(topo.root())] = mean_bone / static_cast<double>(rest.size() - 1);

  char person_id[16];
  std::snprintf(person_id, sizeof(person_id), "p%02d", identity.id);
  SkeletonSequence seq;
  seq.labels = {std::string(person_id) + "_" + clothes_id + "_" + camera_id, person_id, camera_id, clothes_id};

  std::mt19937_64 rng(derive_seed(seed, {0x6e6f6973}));
  std::normal_distribution<double> normal;
  const double origin = video_phase_origin(seed);
  const double step = 2.0 * std::numbers::pi * identity.frequency / kSynthFps;
  for (int t = 0; t < frames; ++t) {
    SkeletonFrame frame = pose_at(identity, origin + step * t);
    if (noise > 0) {
      for (std::size_t j = 0; j < frame.size(); ++j) {
        const double sigma = noise * bone[j];
        frame[j].x += sigma * normal(rng);
        frame[j].y += sigma * normal(rng);
        frame[j].z += sigma * normal(rng);
        frame[j].c = std::clamp(1.0 - noise * std::abs(normal(rng)), 0.0, 1.0);
      }
    }
    seq.frames.push_back(std::move(frame));
  }
  return seq;
}

void SynthConfig::validate() const {
  if (identities < 2) throw std::invalid_argument("synth: need at least 2 identities");
  if (identities > 100) throw std::invalid_argument("synth: at most 100 identities");
  if (clothes < 1) throw std::invalid_argument("synth: need at least 1 clothes id");
  if (videos_per_clothes < 3) throw std::invalid_argument("synth: need at least 3 videos per clothes (train, query, gallery)");
  if (min_frames < 1 || max_frames < min_frames) throw std::invalid_argument("synth: need 1 <= min_frames <= max_frames");
  if (!(noise >= 0.0)) throw std::invalid_argument("synth: noise must be non-negative");
}

SynthBenchmark generate_benchmark(const SynthConfig& config) {
  config.validate();
  SynthBenchmark out;
  GaitIdentity identity;
  for (int i = 0; i < config.identities; ++i) {
    identity = generate_identity(config.seed, i);
    for (int c = 0; c < config.clothes; ++c) {
      for (int k = 0; k < config.videos_per_clothes; ++k) {
        const auto key = {static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(k)};
        std::mt19937_64 length_rng(derive_seed(config.seed, {0x6c656e, static_cast<std::uint64_t>(i),
                                                              static_cast<std::uint64_t>(c),
                                                              static_cast<std::uint64_t>(k)}));
        const auto span = static_cast<std::uint64_t>(config.max_frames - config.min_frames + 1);
        const int frames = config.min_frames + static_cast<int>(length_rng() % span);
        const std::uint64_t video_seed = derive_seed(config.seed, key);
        SkeletonSequence seq = generate_video(identity, "c" + std::to_string(c), "cam" + std::to_string(k), frames,
                                              config.noise, video_seed);
        if (k < config.videos_per_clothes - 2) {
          out.train.push_back(std::move(seq));
        } else if (k == config.videos_per_clothes - 2) {
          out.query.push_back(std::move(seq));
        } else {
          out.gallery.push_back(std::move(seq));
        }
      }
    }
  }
  return out;
}

}  // namespace skelreid
