#include "skelreid/skeleton.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

namespace skelreid {

using nlohmann::json;

Topology::Topology(int joint_count, int root, std::vector<std::pair<int, int>> edges)
    : joint_count_(joint_count), root_(root), edges_(std::move(edges)) {
  if (joint_count_ < 1) throw SchemaError("topology: joint_count must be positive");
  if (root_ < 0 || root_ >= joint_count_) throw SchemaError("topology: root index out of range");
  if (static_cast<int>(edges_.size()) != joint_count_ - 1) {
    throw SchemaError("topology: a tree over " + std::to_string(joint_count_) + " joints needs " +
                      std::to_string(joint_count_ - 1) + " edges, got " + std::to_string(edges_.size()));
  }
  parents_.assign(static_cast<std::size_t>(joint_count_), -1);
  for (auto [parent, child] : edges_) {
    if (parent < 0 || parent >= joint_count_ || child < 0 || child >= joint_count_) {
      throw SchemaError("topology: edge (" + std::to_string(parent) + ", " + std::to_string(child) +
                        ") out of range");
    }
    if (child == root_) throw SchemaError("topology: root cannot have a parent");
    if (parents_[child] != -1) throw SchemaError("topology: joint " + std::to_string(child) + " has two parents");
    parents_[child] = parent;
  }
  // Every joint must reach the root by following parents.
  for (int j = 0; j < joint_count_; ++j) {
    int node = j;
    int steps = 0;
    while (node != root_) {
      node = parents_[node];
      if (node < 0 || ++steps > joint_count_) {
        throw SchemaError("topology: joint " + std::to_string(j) + " is not connected to the root");
      }
    }
  }
}

const Topology& Topology::blazepose33() {
  static const Topology topo(33, 0,
                             {
                                 // face
                                 {0, 1}, {1, 2}, {2, 3}, {3, 7}, {0, 4}, {4, 5}, {5, 6}, {6, 8},
                                 {0, 9}, {0, 10},
                                 // shoulders hang off the head
                                 {0, 11}, {0, 12},
                                 // arms and hands
                                 {11, 13}, {13, 15}, {15, 17}, {15, 19}, {15, 21},
                                 {12, 14}, {14, 16}, {16, 18}, {16, 20}, {16, 22},
                                 // torso
                                 {11, 23}, {12, 24},
                                 // legs and feet
                                 {23, 25}, {25, 27}, {27, 29}, {27, 31},
                                 {24, 26}, {26, 28}, {28, 30}, {28, 32},
                             });
  return topo;
}

Topology parse_topology(std::istream& in) {
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("topology: ") + e.what(), 0);
  }
  try {
    std::vector<std::pair<int, int>> edges;
    for (const auto& edge : doc.at("edges")) {
      if (!edge.is_array() || edge.size() != 2) throw SchemaError("topology: edges must be [parent, child] pairs");
      edges.emplace_back(edge[0].get<int>(), edge[1].get<int>());
    }
    return Topology(doc.at("joint_count").get<int>(), doc.at("root").get<int>(), std::move(edges));
  } catch (const json::exception& e) {
    throw SchemaError(std::string("topology: ") + e.what());
  }
}

AdjacencySet build_adjacency(const Topology& topo) {
  const Eigen::Index n = topo.joint_count();
  AdjacencySet adj{Eigen::MatrixXd::Zero(n, n), Eigen::MatrixXd::Zero(n, n), Eigen::MatrixXd::Identity(n, n)};
  for (auto [parent, child] : topo.edges()) {
    adj.incoming(parent, child) = 1.0;
    adj.outgoing(child, parent) = 1.0;
  }
  for (Eigen::MatrixXd* a : {&adj.incoming, &adj.outgoing}) {
    for (Eigen::Index col = 0; col < n; ++col) {
      const double sum = a->col(col).sum();
      if (sum > 0) a->col(col) /= sum;
    }
  }
  return adj;
}

std::string Segment::segment_id() const { return labels.video_id + "@" + std::to_string(start); }

std::vector<Segment> segment_video(const SkeletonSequence& seq, int length, int stride) {
  if (length <= 0) throw std::invalid_argument("segment_video: length must be positive");
  if (stride <= 0 || stride > length) throw std::invalid_argument("segment_video: need 0 < stride <= length");
  if (seq.frames.empty()) throw SchemaError("segment_video: sequence '" + seq.labels.video_id + "' has no frames");

  const int total = static_cast<int>(seq.frames.size());
  std::vector<Segment> segments;
  auto window = [&](int start) {
    Segment seg{seq.labels, start, {}};
    seg.frames.reserve(static_cast<std::size_t>(length));
    for (int t = 0; t < length; ++t) seg.frames.push_back(seq.frames[static_cast<std::size_t>((start + t) % total)]);
    segments.push_back(std::move(seg));
  };

  if (total < length) {
    window(0);
    return segments;
  }
  int start = 0;
  for (; start + length <= total; start += stride) window(start);
  const int last = start - stride;
  if (last != total - length) window(total - length);
  return segments;
}

SkeletonFrame derive_bones(const SkeletonFrame& frame, const Topology& topo) {
  if (static_cast<int>(frame.size()) != topo.joint_count()) {
    throw SchemaError("derive_bones: frame has " + std::to_string(frame.size()) + " joints, topology has " +
                      std::to_string(topo.joint_count()));
  }
  SkeletonFrame bones(frame.size());
  bones[topo.root()] = Joint{0, 0, 0, frame[topo.root()].c};
  for (auto [parent, child] : topo.edges()) {
    const Joint& p = frame[parent];
    const Joint& q = frame[child];
    bones[child] = Joint{q.x - p.x, q.y - p.y, q.z - p.z, std::max(q.c, p.c)};
  }
  return bones;
}

namespace {

std::string label_field(const json& record, const char* key) {
  const json& value = record.at(key);
  if (!value.is_string()) throw SchemaError(std::string("'") + key + "' must be a string");
  return value.get<std::string>();
}

SkeletonFrame parse_frame(const json& frame, int joints) {
  if (!frame.is_array()) throw SchemaError("frame must be an array of joints");
  if (static_cast<int>(frame.size()) != joints) {
    throw SchemaError("frame has " + std::to_string(frame.size()) + " joints, topology expects " +
                      std::to_string(joints));
  }
  SkeletonFrame out;
  out.reserve(frame.size());
  for (const json& joint : frame) {
    if (!joint.is_array() || joint.size() != 4) throw SchemaError("joint must be [x, y, z, c]");
    for (const json& v : joint) {
      if (!v.is_number()) throw SchemaError("joint values must be numbers");
    }
    Joint j{joint[0].get<Real>(), joint[1].get<Real>(), joint[2].get<Real>(), joint[3].get<Real>()};
    if (!std::isfinite(j.x) || !std::isfinite(j.y) || !std::isfinite(j.z)) {
      throw SchemaError("joint coordinates must be finite");
    }
    if (!(j.c >= 0.0 && j.c <= 1.0)) throw SchemaError("joint confidence must lie in [0, 1]");
    out.push_back(j);
  }
  return out;
}

}  // namespace

std::vector<SkeletonSequence> parse_dataset(std::istream& in, const Topology& topo, ParseOptions options) {
  std::vector<SkeletonSequence> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(e.what(), line_no);
    }
    try {
      if (!record.is_object()) throw SchemaError("record must be a JSON object");
      SkeletonSequence seq;
      seq.labels = {label_field(record, "video_id"), label_field(record, "person_id"),
                    label_field(record, "camera_id"), label_field(record, "clothes_id")};
      const json& frames = record.at("frames");
      if (!frames.is_array() || frames.empty()) throw SchemaError("'frames' must be a non-empty array");
      seq.frames.reserve(frames.size());
      for (const json& frame : frames) seq.frames.push_back(parse_frame(frame, topo.joint_count()));
      if (options.center_on_root) {
        for (SkeletonFrame& frame : seq.frames) {
          const Joint root = frame[topo.root()];
          for (Joint& j : frame) {
            j.x -= root.x;
            j.y -= root.y;
            j.z -= root.z;
          }
        }
      }
      out.push_back(std::move(seq));
    } catch (const SchemaError& e) {
      throw SchemaError("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const json::exception& e) {
      throw SchemaError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void write_dataset(std::ostream& out, std::span<const SkeletonSequence> sequences) {
  for (const SkeletonSequence& seq : sequences) {
    json frames = json::array();
    for (const SkeletonFrame& frame : seq.frames) {
      json joints = json::array();
      for (const Joint& j : frame) joints.push_back({j.x, j.y, j.z, j.c});
      frames.push_back(std::move(joints));
    }
    json record = {{"video_id", seq.labels.video_id},
                   {"person_id", seq.labels.person_id},
                   {"camera_id", seq.labels.camera_id},
                   {"clothes_id", seq.labels.clothes_id},
                   {"frames", std::move(frames)}};
    out << record.dump() << '\n';
  }
}

}  // namespace skelreid
