#pragma once

#include <Eigen/Core>

#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace skelreid {

using Real = double;

/// Malformed input text. `line()` is 1-based, 0 when not line-oriented.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Well-formed input that violates a structural invariant.
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Joint {
  Real x = 0;
  Real y = 0;
  Real z = 0;
  Real c = 0;  // confidence, [0, 1]

  friend bool operator==(const Joint&, const Joint&) = default;
};

using SkeletonFrame = std::vector<Joint>;

struct VideoLabels {
  std::string video_id;
  std::string person_id;
  std::string camera_id;
  std::string clothes_id;

  friend bool operator==(const VideoLabels&, const VideoLabels&) = default;
};

struct SkeletonSequence {
  VideoLabels labels;
  std::vector<SkeletonFrame> frames;

  std::size_t joint_count() const { return frames.empty() ? 0 : frames.front().size(); }
  friend bool operator==(const SkeletonSequence&, const SkeletonSequence&) = default;
};

/// Kinematic tree over the joints; edges are (parent, child).
class Topology {
 public:
  Topology(int joint_count, int root, std::vector<std::pair<int, int>> edges);

  /// 33-landmark BlazePose skeleton as a tree rooted at the nose.
  static const Topology& blazepose33();

  int joint_count() const { return joint_count_; }
  int root() const { return root_; }
  const std::vector<std::pair<int, int>>& edges() const { return edges_; }
  /// Parent of each joint; -1 at the root.
  const std::vector<int>& parents() const { return parents_; }

 private:
  int joint_count_;
  int root_;
  std::vector<std::pair<int, int>> edges_;
  std::vector<int> parents_;
};

Topology parse_topology(std::istream& in);

/// Spatial adjacency used by the graph convolution, indexed [source][target]
/// so that features aggregate as f * A (column i gathers into node i).
struct AdjacencySet {
  Eigen::MatrixXd incoming;   // A0: parent -> child, columns normalized
  Eigen::MatrixXd outgoing;   // A1: child -> parent, columns normalized
  Eigen::MatrixXd self_loop;  // A2: identity

  const Eigen::MatrixXd& operator[](int k) const {
    return k == 0 ? incoming : (k == 1 ? outgoing : self_loop);
  }
  Eigen::Index nodes() const { return self_loop.rows(); }
};

AdjacencySet build_adjacency(const Topology& topo);

struct Segment {
  VideoLabels labels;
  int start = 0;
  std::vector<SkeletonFrame> frames;

  /// "<video_id>@<start>"
  std::string segment_id() const;
};

inline constexpr int kSegmentLength = 50;
inline constexpr int kSegmentStride = 25;

/// Fixed-length windows at 0, stride, 2*stride, ...; a tail window at T-K
/// when the stride grid misses the end; cyclic padding when T < K.
std::vector<Segment> segment_video(const SkeletonSequence& seq, int length = kSegmentLength,
                                   int stride = kSegmentStride);

/// Bone node at child i = joint i - joint parent(i), confidence max of the
/// two. The root carries a zero vector with its own confidence.
SkeletonFrame derive_bones(const SkeletonFrame& frame, const Topology& topo);

struct ParseOptions {
  bool center_on_root = false;
};

std::vector<SkeletonSequence> parse_dataset(std::istream& in, const Topology& topo, ParseOptions options = {});
void write_dataset(std::ostream& out, std::span<const SkeletonSequence> sequences);

}  // namespace skelreid
