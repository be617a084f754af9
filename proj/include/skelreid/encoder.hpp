#pragma once

#include "skelreid/checkpoint.hpp"
#include "skelreid/skeleton.hpp"
#include "skelreid/tensor.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace skelreid {

using Descriptor = Eigen::VectorXd;

struct EncoderConfig {
  /// Per-node channel counts from input to output; the first entry is the
  /// input (x, y, z, c) and must be 4.
  std::vector<int> channels{4, 16, 32, 64, 128, 256};
  int temporal_width = 9;
  int temporal_stride = 2;

  int blocks() const { return static_cast<int>(channels.size()) - 1; }
  int stream_size() const { return channels.back(); }
  void validate() const;
};

/// One spatio-temporal block: graph convolution over the three adjacency
/// matrices, ReLU, strided temporal convolution plus bias, ReLU.
struct GcnBlock {
  std::array<ParamTensor<Real>, 3> spatial;  // C_out x C_in, one per adjacency
  ParamTensor<Real> temporal;                // C_out x C_out x W
  ParamTensor<Real> bias;                    // C_out

  Index in_channels() const { return spatial[0].value.dim(1); }
  Index out_channels() const { return spatial[0].value.dim(0); }
};

struct BlockTrace {
  Tensor<Real> input;
  std::array<Tensor<Real>, 2> propagated;  // input * A0, input * A1
  Tensor<Real> spatial_pre;
  Tensor<Real> spatial_out;
  Tensor<Real> temporal_pre;
};

struct StreamTrace {
  std::vector<BlockTrace> blocks;
  Tensor<Real> final_map;  // C x (T' * J)
  Tensor<Real> pooled;
  std::vector<Shape> feature_shapes;  // input, then the output of every block
  bool ready = false;
};

/// sum_k W_k * x * A_k per time step; ReLU applied when `activate`.
Tensor<Real> spatial_gcn(const Tensor<Real>& x, const GcnBlock& block, const AdjacencySet& adj, bool activate = true);

Tensor<Real> block_forward(const Tensor<Real>& x, const GcnBlock& block, const AdjacencySet& adj, int stride = 2,
                           BlockTrace* trace = nullptr);

class StreamEncoder {
 public:
  StreamEncoder(const EncoderConfig& config, AdjacencySet adjacency, std::uint64_t seed);

  /// x is 4 x T x J; returns the pooled C_last descriptor half.
  Tensor<Real> encode(const Tensor<Real>& x, StreamTrace* trace = nullptr) const;

  /// Accumulates parameter gradients for d loss / d output.
  void backward(const StreamTrace& trace, std::span<const Real> d_output);

  std::vector<GcnBlock>& blocks() { return blocks_; }
  const std::vector<GcnBlock>& blocks() const { return blocks_; }
  const AdjacencySet& adjacency() const { return adjacency_; }
  std::vector<ParamTensor<Real>*> parameters();

 private:
  EncoderConfig config_;
  AdjacencySet adjacency_;
  std::vector<GcnBlock> blocks_;
};

struct EncoderTrace {
  StreamTrace joints;
  StreamTrace bones;
};

/// 4 x T x J tensor with channels (x, y, z, c).
Tensor<Real> frames_tensor(std::span<const SkeletonFrame> frames);
Tensor<Real> bones_tensor(std::span<const SkeletonFrame> frames, const Topology& topo);

/// Joints and bones streams sharing one topology; the descriptor is the
/// joints half followed by the bones half.
class TwoStreamEncoder {
 public:
  TwoStreamEncoder(Topology topo, EncoderConfig config, std::uint64_t seed);

  Descriptor encode(const Segment& segment, EncoderTrace* trace = nullptr) const;
  Descriptor encode(const Tensor<Real>& joints, const Tensor<Real>& bones, EncoderTrace* trace = nullptr) const;

  /// Accumulates gradients into every parameter. Requires a trace filled by
  /// encode(); throws std::logic_error otherwise.
  void backward(const EncoderTrace& trace, const Descriptor& d_descriptor);

  std::vector<ParamTensor<Real>*> parameters();
  void zero_grad();

  StreamEncoder& joints() { return joints_; }
  StreamEncoder& bones() { return bones_; }
  const StreamEncoder& joints() const { return joints_; }
  const StreamEncoder& bones() const { return bones_; }
  const Topology& topology() const { return topo_; }
  const EncoderConfig& config() const { return config_; }
  Index descriptor_size() const { return 2 * config_.stream_size(); }

  Checkpoint to_checkpoint() const;
  static TwoStreamEncoder from_checkpoint(const Checkpoint& ckpt);

 private:
  Topology topo_;
  EncoderConfig config_;
  StreamEncoder joints_;
  StreamEncoder bones_;
};

}  // namespace skelreid
