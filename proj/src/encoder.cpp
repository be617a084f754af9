#include "skelreid/encoder.hpp"

#include "skelreid/random.hpp"

#include <json.hpp>

#include <cmath>
#include <random>
#include <stdexcept>

namespace skelreid {

void EncoderConfig::validate() const {
  if (channels.size() < 2) throw std::invalid_argument("encoder: need at least one block");
  if (channels.front() != 4) throw std::invalid_argument("encoder: input channels must be 4 (x, y, z, c)");
  for (int c : channels) {
    if (c < 1) throw std::invalid_argument("encoder: channel counts must be positive");
  }
  if (temporal_stride < 1 || temporal_width < temporal_stride) {
    throw std::invalid_argument("encoder: need 1 <= temporal_stride <= temporal_width");
  }
}

namespace {

Tensor<Real> propagate(const Tensor<Real>& x, const Eigen::MatrixXd& a) {
  const Index rows = x.dim(0) * x.dim(1);
  Tensor<Real> out(x.shape());
  out.matrix(rows, x.dim(2)).noalias() = x.matrix(rows, x.dim(2)) * a;
  return out;
}

void check_block_input(const Tensor<Real>& x, const GcnBlock& block, const AdjacencySet& adj) {
  if (x.rank() != 3 || x.dim(0) != block.in_channels() || x.dim(2) != adj.nodes()) {
    throw ShapeError("gcn block expects " + std::to_string(block.in_channels()) + " x T x " +
                     std::to_string(adj.nodes()) + ", got " + shape_string(x.shape()));
  }
}

Tensor<Real> spatial_pre_activation(const Tensor<Real>& x, const GcnBlock& block, const AdjacencySet& adj,
                                    BlockTrace* trace) {
  check_block_input(x, block, adj);
  const Index cin = x.dim(0);
  const Index cout = block.out_channels();
  const Index cols = x.dim(1) * x.dim(2);
  Tensor<Real> out({cout, x.dim(1), x.dim(2)});
  auto om = out.matrix(cout, cols);
  for (int k = 0; k < 3; ++k) {
    const auto w = block.spatial[k].value.matrix(cout, cin);
    if (k == 2) {
      // A2 is the identity.
      om.noalias() += w * x.matrix(cin, cols);
      continue;
    }
    Tensor<Real> p = propagate(x, adj[k]);
    om.noalias() += w * p.matrix(cin, cols);
    if (trace) trace->propagated[k] = std::move(p);
  }
  return out;
}

void he_uniform(Tensor<Real>& t, Index fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Index i = 0; i < t.size(); ++i) t[i] = dist(rng);
}

/// Backward through one block; returns d loss / d input when wanted.
Tensor<Real> block_backward(GcnBlock& block, const AdjacencySet& adj, const BlockTrace& trace,
                            const Tensor<Real>& d_out, int stride, bool want_input_grad) {
  const Tensor<Real> d_pre = relu_backward(trace.temporal_pre, d_out);
  const Index cout = block.out_channels();
  const Index cin = block.in_channels();
  block.bias.grad.values() += d_pre.matrix(cout, d_pre.size() / cout).rowwise().sum();

  auto conv = conv_temporal_backward(trace.spatial_out, block.temporal.value, d_pre, stride);
  block.temporal.grad.values() += conv.dkernel.values();

  const Tensor<Real> d_spatial = relu_backward(trace.spatial_pre, conv.dx);
  const Index cols = trace.input.dim(1) * trace.input.dim(2);
  const auto ds = d_spatial.matrix(cout, cols);

  Tensor<Real> d_input;
  if (want_input_grad) d_input = Tensor<Real>(trace.input.shape());
  for (int k = 0; k < 3; ++k) {
    const Tensor<Real>& p = k == 2 ? trace.input : trace.propagated[k];
    block.spatial[k].grad.matrix(cout, cin).noalias() += ds * p.matrix(cin, cols).transpose();
    if (!want_input_grad) continue;
    const auto w = block.spatial[k].value.matrix(cout, cin);
    if (k == 2) {
      d_input.matrix(cin, cols).noalias() += w.transpose() * ds;
    } else {
      RowMatrix<Real> dp = w.transpose() * ds;
      const Index rows = cin * trace.input.dim(1);
      d_input.matrix(rows, trace.input.dim(2)).noalias() +=
          Eigen::Map<const RowMatrix<Real>>(dp.data(), rows, trace.input.dim(2)) * adj[k].transpose();
    }
  }
  return d_input;
}

}  // namespace

Tensor<Real> spatial_gcn(const Tensor<Real>& x, const GcnBlock& block, const AdjacencySet& adj, bool activate) {
  Tensor<Real> pre = spatial_pre_activation(x, block, adj, nullptr);
  return activate ? relu(pre) : pre;
}

Tensor<Real> block_forward(const Tensor<Real>& x, const GcnBlock& block, const AdjacencySet& adj, int stride,
                           BlockTrace* trace) {
  Tensor<Real> spatial_pre = spatial_pre_activation(x, block, adj, trace);
  Tensor<Real> spatial_out = relu(spatial_pre);
  Tensor<Real> temporal_pre = conv_temporal(spatial_out, block.temporal.value, stride);
  const Index cout = block.out_channels();
  temporal_pre.matrix(cout, temporal_pre.size() / cout).colwise() += block.bias.value.values();
  Tensor<Real> out = relu(temporal_pre);
  if (trace) {
    trace->input = x;
    trace->spatial_pre = std::move(spatial_pre);
    trace->spatial_out = std::move(spatial_out);
    trace->temporal_pre = std::move(temporal_pre);
  }
  return out;
}

StreamEncoder::StreamEncoder(const EncoderConfig& config, AdjacencySet adjacency, std::uint64_t seed)
    : config_(config), adjacency_(std::move(adjacency)) {
  config_.validate();
  std::mt19937_64 rng(seed);
  for (int b = 0; b < config_.blocks(); ++b) {
    const Index cin = config_.channels[b];
    const Index cout = config_.channels[b + 1];
    GcnBlock block;
    for (auto& w : block.spatial) {
      w = ParamTensor<Real>(Shape{cout, cin});
      he_uniform(w.value, 3 * cin, rng);
    }
    block.temporal = ParamTensor<Real>(Shape{cout, cout, config_.temporal_width});
    he_uniform(block.temporal.value, cout * config_.temporal_width, rng);
    block.bias = ParamTensor<Real>(Shape{cout});
    blocks_.push_back(std::move(block));
  }
}

Tensor<Real> StreamEncoder::encode(const Tensor<Real>& x, StreamTrace* trace) const {
  if (x.rank() != 3 || x.dim(0) != config_.channels.front() || x.dim(2) != adjacency_.nodes()) {
    throw ShapeError("stream encoder expects " + std::to_string(config_.channels.front()) + " x T x " +
                     std::to_string(adjacency_.nodes()) + ", got " + shape_string(x.shape()));
  }
  if (trace) {
    trace->ready = false;
    trace->blocks.assign(blocks_.size(), BlockTrace{});
    trace->feature_shapes = {x.shape()};
  }
  Tensor<Real> h = x;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    h = block_forward(h, blocks_[b], adjacency_, config_.temporal_stride, trace ? &trace->blocks[b] : nullptr);
    if (trace) trace->feature_shapes.push_back(h.shape());
  }
  const Index channels = h.dim(0);
  Tensor<Real> final_map = h.reshaped({channels, h.size() / channels});
  Tensor<Real> pooled = l3_pool(final_map);
  if (trace) {
    trace->final_map = std::move(final_map);
    trace->pooled = pooled;
    trace->ready = true;
  }
  return pooled;
}

void StreamEncoder::backward(const StreamTrace& trace, std::span<const Real> d_output) {
  if (!trace.ready || trace.blocks.size() != blocks_.size()) {
    throw std::logic_error("encoder backward called without a cached forward pass");
  }
  if (static_cast<Index>(d_output.size()) != trace.pooled.size()) {
    throw ShapeError("encoder backward: gradient length does not match descriptor");
  }
  Tensor<Real> d_pool({trace.pooled.size()});
  std::copy(d_output.begin(), d_output.end(), d_pool.data());
  Tensor<Real> d = l3_pool_backward(trace.final_map, trace.pooled, d_pool).reshaped(trace.feature_shapes.back());
  for (std::size_t b = blocks_.size(); b-- > 0;) {
    d = block_backward(blocks_[b], adjacency_, trace.blocks[b], d, config_.temporal_stride, b > 0);
  }
}

std::vector<ParamTensor<Real>*> StreamEncoder::parameters() {
  std::vector<ParamTensor<Real>*> out;
  for (GcnBlock& block : blocks_) {
    for (auto& w : block.spatial) out.push_back(&w);
    out.push_back(&block.temporal);
    out.push_back(&block.bias);
  }
  return out;
}

Tensor<Real> frames_tensor(std::span<const SkeletonFrame> frames) {
  if (frames.empty()) throw ShapeError("frames_tensor: no frames");
  const Index t_len = static_cast<Index>(frames.size());
  const Index nodes = static_cast<Index>(frames.front().size());
  Tensor<Real> out({4, t_len, nodes});
  for (Index t = 0; t < t_len; ++t) {
    const SkeletonFrame& frame = frames[static_cast<std::size_t>(t)];
    if (static_cast<Index>(frame.size()) != nodes) throw ShapeError("frames_tensor: ragged joint counts");
    for (Index j = 0; j < nodes; ++j) {
      const Joint& p = frame[static_cast<std::size_t>(j)];
      out(0, t, j) = p.x;
      out(1, t, j) = p.y;
      out(2, t, j) = p.z;
      out(3, t, j) = p.c;
    }
  }
  return out;
}

Tensor<Real> bones_tensor(std::span<const SkeletonFrame> frames, const Topology& topo) {
  std::vector<SkeletonFrame> bones;
  bones.reserve(frames.size());
  for (const SkeletonFrame& frame : frames) bones.push_back(derive_bones(frame, topo));
  return frames_tensor(bones);
}

TwoStreamEncoder::TwoStreamEncoder(Topology topo, EncoderConfig config, std::uint64_t seed)
    : topo_(std::move(topo)),
      config_(std::move(config)),
      joints_(config_, build_adjacency(topo_), derive_seed(seed, {1})),
      bones_(config_, build_adjacency(topo_), derive_seed(seed, {2})) {}

Descriptor TwoStreamEncoder::encode(const Segment& segment, EncoderTrace* trace) const {
  return encode(frames_tensor(segment.frames), bones_tensor(segment.frames, topo_), trace);
}

Descriptor TwoStreamEncoder::encode(const Tensor<Real>& joints, const Tensor<Real>& bones,
                                    EncoderTrace* trace) const {
  const Tensor<Real> fj = joints_.encode(joints, trace ? &trace->joints : nullptr);
  const Tensor<Real> fb = bones_.encode(bones, trace ? &trace->bones : nullptr);
  Descriptor out(fj.size() + fb.size());
  out << fj.values(), fb.values();
  return out;
}

void TwoStreamEncoder::backward(const EncoderTrace& trace, const Descriptor& d_descriptor) {
  if (d_descriptor.size() != descriptor_size()) throw ShapeError("backward: descriptor gradient has wrong length");
  const auto half = static_cast<std::size_t>(config_.stream_size());
  std::span<const Real> all(d_descriptor.data(), static_cast<std::size_t>(d_descriptor.size()));
  joints_.backward(trace.joints, all.first(half));
  bones_.backward(trace.bones, all.subspan(half));
}

std::vector<ParamTensor<Real>*> TwoStreamEncoder::parameters() {
  auto out = joints_.parameters();
  auto more = bones_.parameters();
  out.insert(out.end(), more.begin(), more.end());
  return out;
}

void TwoStreamEncoder::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

namespace {

void add_stream(Checkpoint& ckpt, const std::string& prefix, const StreamEncoder& stream) {
  for (std::size_t b = 0; b < stream.blocks().size(); ++b) {
    const GcnBlock& block = stream.blocks()[b];
    const std::string base = prefix + ".block" + std::to_string(b) + ".";
    for (int k = 0; k < 3; ++k) ckpt.tensors.emplace_back(base + "spatial" + std::to_string(k), block.spatial[k].value);
    ckpt.tensors.emplace_back(base + "temporal", block.temporal.value);
    ckpt.tensors.emplace_back(base + "bias", block.bias.value);
  }
}

void load_stream(const Checkpoint& ckpt, const std::string& prefix, StreamEncoder& stream) {
  for (std::size_t b = 0; b < stream.blocks().size(); ++b) {
    GcnBlock& block = stream.blocks()[b];
    const std::string base = prefix + ".block" + std::to_string(b) + ".";
    auto assign = [&](ParamTensor<Real>& p, const std::string& name) {
      const Tensor<Real>& t = ckpt.at(name);
      if (t.shape() != p.shape()) {
        throw SchemaError("checkpoint: tensor '" + name + "' has shape " + shape_string(t.shape()) + ", expected " +
                          shape_string(p.shape()));
      }
      p = ParamTensor<Real>(t);
    };
    for (int k = 0; k < 3; ++k) assign(block.spatial[k], base + "spatial" + std::to_string(k));
    assign(block.temporal, base + "temporal");
    assign(block.bias, base + "bias");
  }
}

}  // namespace

Checkpoint TwoStreamEncoder::to_checkpoint() const {
  nlohmann::json edges = nlohmann::json::array();
  for (auto [p, c] : topo_.edges()) edges.push_back({p, c});
  const nlohmann::json meta = {
      {"format", "skelreid-two-stream-encoder"},
      {"channels", config_.channels},
      {"temporal_width", config_.temporal_width},
      {"temporal_stride", config_.temporal_stride},
      {"topology", {{"joint_count", topo_.joint_count()}, {"root", topo_.root()}, {"edges", edges}}},
  };
  Checkpoint ckpt;
  ckpt.metadata = meta.dump();
  add_stream(ckpt, "joints", joints_);
  add_stream(ckpt, "bones", bones_);
  return ckpt;
}

TwoStreamEncoder TwoStreamEncoder::from_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(ckpt.metadata);
    EncoderConfig config;
    config.channels = meta.at("channels").get<std::vector<int>>();
    config.temporal_width = meta.at("temporal_width").get<int>();
    config.temporal_stride = meta.at("temporal_stride").get<int>();
    const auto& t = meta.at("topology");
    std::vector<std::pair<int, int>> edges;
    for (const auto& e : t.at("edges")) edges.emplace_back(e.at(0).get<int>(), e.at(1).get<int>());
    TwoStreamEncoder enc(Topology(t.at("joint_count").get<int>(), t.at("root").get<int>(), std::move(edges)),
                         std::move(config), 0);
    load_stream(ckpt, "joints", enc.joints_);
    load_stream(ckpt, "bones", enc.bones_);
    return enc;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("checkpoint metadata: ") + e.what());
  }
}

}  // namespace skelreid
