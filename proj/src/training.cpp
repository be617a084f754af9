#include "skelreid/training.hpp"

#include "skelreid/format.hpp"
#include "skelreid/random.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

namespace skelreid {

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (!(margin > 0)) throw std::invalid_argument("margin must be > 0");
  if (identities_per_batch < 2) throw std::invalid_argument("identities_per_batch must be >= 2");
  if (segments_per_identity < 2) throw std::invalid_argument("segments_per_identity must be >= 2");
  if (segment_length < 1 || segment_stride < 1 || segment_stride > segment_length) {
    throw std::invalid_argument("need 0 < segment_stride <= segment_length");
  }
  optim.validate();
  encoder.validate();
}

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return {};
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream in(value);
  T out{};
  in >> out;
  if (in.fail() || !in.eof()) throw std::invalid_argument("config: bad value for '" + key + "': '" + value + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "on") return true;
  if (value == "false" || value == "0" || value == "off") return false;
  throw std::invalid_argument("config: bad boolean for '" + key + "': '" + value + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
  std::vector<int> out;
  std::stringstream in(value);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(parse_number<int>(key, trim(item)));
  if (out.empty()) throw std::invalid_argument("config: empty list for '" + key + "'");
  return out;
}

}  // namespace

void apply_train_setting(TrainConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "epochs") cfg.epochs = parse_number<int>(key, value);
  else if (key == "margin") cfg.margin = parse_number<double>(key, value);
  else if (key == "identities_per_batch") cfg.identities_per_batch = parse_number<int>(key, value);
  else if (key == "segments_per_identity") cfg.segments_per_identity = parse_number<int>(key, value);
  else if (key == "seed") cfg.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "segment_length") cfg.segment_length = parse_number<int>(key, value);
  else if (key == "segment_stride") cfg.segment_stride = parse_number<int>(key, value);
  else if (key == "learning_rate") cfg.optim.learning_rate = parse_number<double>(key, value);
  else if (key == "momentum") cfg.optim.momentum = parse_number<double>(key, value);
  else if (key == "decay_factor") cfg.optim.decay_factor = parse_number<double>(key, value);
  else if (key == "decay_every") cfg.optim.decay_every = parse_number<int>(key, value);
  else if (key == "nesterov") cfg.optim.nesterov = parse_bool(key, value);
  else if (key == "channels") cfg.encoder.channels = parse_int_list(key, value);
  else if (key == "temporal_width") cfg.encoder.temporal_width = parse_number<int>(key, value);
  else if (key == "temporal_stride") cfg.encoder.temporal_stride = parse_number<int>(key, value);
  else throw std::invalid_argument("config: unknown key '" + key + "'");
}

TrainConfig parse_train_config(std::istream& in, TrainConfig base) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": expected key = value");
    }
    apply_train_setting(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return base;
}

std::string canonical_string(const TrainConfig& cfg) {
  std::ostringstream out;
  out << "epochs=" << cfg.epochs << ";margin=" << format_double(cfg.margin)
      << ";identities_per_batch=" << cfg.identities_per_batch
      << ";segments_per_identity=" << cfg.segments_per_identity << ";seed=" << cfg.seed
      << ";segment_length=" << cfg.segment_length << ";segment_stride=" << cfg.segment_stride
      << ";learning_rate=" << format_double(cfg.optim.learning_rate)
      << ";momentum=" << format_double(cfg.optim.momentum)
      << ";decay_factor=" << format_double(cfg.optim.decay_factor) << ";decay_every=" << cfg.optim.decay_every
      << ";nesterov=" << (cfg.optim.nesterov ? "true" : "false") << ";channels=";
  for (std::size_t i = 0; i < cfg.encoder.channels.size(); ++i) out << (i ? "," : "") << cfg.encoder.channels[i];
  out << ";temporal_width=" << cfg.encoder.temporal_width << ";temporal_stride=" << cfg.encoder.temporal_stride;
  return out.str();
}

namespace {

// 1 - cos computed as |x/|x| - y/|y||^2 / 2, which keeps full relative
// precision when the two vectors are nearly parallel.
double unit_gap(const Eigen::Ref<const Eigen::VectorXd>& x, double nx, const Eigen::Ref<const Eigen::VectorXd>& y,
                double ny) {
  return std::clamp(0.5 * (x / nx - y / ny).squaredNorm(), 0.0, 2.0);
}

}  // namespace

double cosine_distance(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& y) {
  const double nx = x.norm();
  const double ny = y.norm();
  if (nx == 0.0 || ny == 0.0) return 1.0;
  return unit_gap(x, nx, y, ny);
}

CosineDistanceGrad cosine_distance_grad(const Eigen::Ref<const Eigen::VectorXd>& x,
                                        const Eigen::Ref<const Eigen::VectorXd>& y) {
  CosineDistanceGrad out{1.0, Eigen::VectorXd::Zero(x.size()), Eigen::VectorXd::Zero(y.size())};
  const double nx = x.norm();
  const double ny = y.norm();
  if (nx == 0.0 || ny == 0.0) return out;
  out.distance = unit_gap(x, nx, y, ny);
  const double cos = 1.0 - out.distance;
  // d cos / dx = y / (|x||y|) - cos x / |x|^2
  out.dx = -(y / (nx * ny) - (cos / (nx * nx)) * x);
  out.dy = -(x / (nx * ny) - (cos / (ny * ny)) * y);
  return out;
}

double triplet_loss(const Descriptor& a, const Descriptor& p, const Descriptor& n, double margin) {
  return std::max(0.0, cosine_distance(a, p) - cosine_distance(a, n) + margin);
}

std::vector<Triplet> mine_triplets(std::span<const Descriptor> descriptors, std::span<const int> labels) {
  if (descriptors.size() != labels.size()) throw std::invalid_argument("mine_triplets: label count mismatch");
  const int n = static_cast<int>(descriptors.size());
  if (n == 0 || std::all_of(labels.begin(), labels.end(), [&](int l) { return l == labels.front(); })) {
    throw std::invalid_argument("mine_triplets: batch needs at least two identities");
  }
  Eigen::MatrixXd dist(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) dist(i, j) = cosine_distance(descriptors[i], descriptors[j]);
  }
  std::vector<Triplet> out;
  for (int a = 0; a < n; ++a) {
    int pos = -1;
    int neg = -1;
    for (int j = 0; j < n; ++j) {
      if (j == a) continue;
      if (labels[j] == labels[a]) {
        if (pos < 0 || dist(a, j) > dist(a, pos)) pos = j;
      } else if (neg < 0 || dist(a, j) < dist(a, neg)) {
        neg = j;
      }
    }
    if (pos >= 0) out.push_back({a, pos, neg});
  }
  return out;
}

BatchLoss batch_triplet_loss(std::span<const Descriptor> descriptors, std::span<const int> labels, double margin) {
  BatchLoss out;
  out.triplets = mine_triplets(descriptors, labels);
  out.gradients.assign(descriptors.size(), Descriptor::Zero(descriptors.empty() ? 0 : descriptors[0].size()));
  if (out.triplets.empty()) return out;
  const double scale = 1.0 / static_cast<double>(out.triplets.size());
  for (const Triplet& t : out.triplets) {
    const auto ap = cosine_distance_grad(descriptors[t.anchor], descriptors[t.positive]);
    const auto an = cosine_distance_grad(descriptors[t.anchor], descriptors[t.negative]);
    const double hinge = ap.distance - an.distance + margin;
    if (hinge <= 0) continue;
    out.loss += hinge * scale;
    out.gradients[t.anchor] += scale * (ap.dx - an.dx);
    out.gradients[t.positive] += scale * ap.dy;
    out.gradients[t.negative] -= scale * an.dy;
  }
  return out;
}

std::vector<std::vector<int>> sample_pk_batches(std::span<const int> labels, int identities, int per_identity,
                                                std::mt19937_64& rng) {
  std::map<int, std::vector<int>> by_label;
  for (std::size_t i = 0; i < labels.size(); ++i) by_label[labels[i]].push_back(static_cast<int>(i));

  std::map<int, std::vector<std::vector<int>>> chunks;
  for (auto& [label, members] : by_label) {
    std::vector<int> pool = members;
    while (static_cast<int>(pool.size()) < per_identity) {
      std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
      pool.push_back(members[pick(rng)]);
    }
    std::shuffle(pool.begin(), pool.end(), rng);
    auto& list = chunks[label];
    for (std::size_t at = 0; at + static_cast<std::size_t>(per_identity) <= pool.size(); at += per_identity) {
      list.emplace_back(pool.begin() + static_cast<std::ptrdiff_t>(at),
                        pool.begin() + static_cast<std::ptrdiff_t>(at + per_identity));
    }
  }

  std::vector<int> available;
  for (const auto& [label, list] : chunks) available.push_back(label);
  std::map<int, std::size_t> next;
  std::vector<std::vector<int>> batches;
  while (static_cast<int>(available.size()) >= identities) {
    std::vector<int> order = available;
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(static_cast<std::size_t>(identities));
    std::vector<int> batch;
    for (int label : order) {
      const auto& chunk = chunks[label][next[label]++];
      batch.insert(batch.end(), chunk.begin(), chunk.end());
      if (next[label] == chunks[label].size()) std::erase(available, label);
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

TrainResult train(std::span<const SkeletonSequence> dataset, const Topology& topo, const TrainConfig& cfg,
                  const std::function<void(const EpochLog&)>& on_epoch) {
  cfg.validate();

  std::map<std::string, int> label_index;
  for (const auto& seq : dataset) label_index.emplace(seq.labels.person_id, 0);
  int next_label = 0;
  for (auto& [name, idx] : label_index) idx = next_label++;

  std::vector<Tensor<Real>> joints;
  std::vector<Tensor<Real>> bones;
  std::vector<int> labels;
  for (const auto& seq : dataset) {
    for (const Segment& seg : segment_video(seq, cfg.segment_length, cfg.segment_stride)) {
      joints.push_back(frames_tensor(seg.frames));
      bones.push_back(bones_tensor(seg.frames, topo));
      labels.push_back(label_index.at(seg.labels.person_id));
    }
  }
  std::map<int, int> per_label;
  for (int l : labels) ++per_label[l];
  const auto full = std::count_if(per_label.begin(), per_label.end(),
                                  [&](const auto& kv) { return kv.second >= cfg.segments_per_identity; });
  if (full < cfg.identities_per_batch) {
    throw DatasetTooSmall("training needs " + std::to_string(cfg.identities_per_batch) + " identities with >= " +
                          std::to_string(cfg.segments_per_identity) + " segments each, found " +
                          std::to_string(full));
  }

  TrainResult result{TwoStreamEncoder(topo, cfg.encoder, derive_seed(cfg.seed, {0x656e63})), {}};
  TwoStreamEncoder& enc = result.encoder;
  auto params = enc.parameters();
  std::mt19937_64 sampler(derive_seed(cfg.seed, {0x73616d70}));

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = scheduled_learning_rate(cfg.optim, epoch);
    const auto batches = sample_pk_batches(labels, cfg.identities_per_batch, cfg.segments_per_identity, sampler);
    double total = 0;
    for (const auto& batch : batches) {
      enc.zero_grad();
      std::vector<EncoderTrace> traces(batch.size());
      std::vector<Descriptor> descs;
      std::vector<int> batch_labels;
      descs.reserve(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) {
        descs.push_back(enc.encode(joints[batch[i]], bones[batch[i]], &traces[i]));
        batch_labels.push_back(labels[batch[i]]);
      }
      const BatchLoss loss = batch_triplet_loss(descs, batch_labels, cfg.margin);
      for (std::size_t i = 0; i < batch.size(); ++i) {
        if ((loss.gradients[i].array() != 0.0).any()) enc.backward(traces[i], loss.gradients[i]);
      }
      sgd_nesterov_step<Real>(params, cfg.optim, lr);
      total += loss.loss;
    }
    const double mean = batches.empty() ? 0.0 : total / static_cast<double>(batches.size());
    if (!std::isfinite(mean)) throw std::runtime_error("training diverged at epoch " + std::to_string(epoch));
    result.history.push_back({epoch, mean, lr});
    if (on_epoch) on_epoch(result.history.back());
  }
  return result;
}

void write_loss_csv(std::ostream& out, std::span<const EpochLog> history) {
  out << "epoch,mean_loss,lr\n";
  for (const EpochLog& e : history) {
    out << e.epoch << ',' << format_double(e.mean_loss) << ',' << format_double(e.learning_rate) << '\n';
  }
}

}  // namespace skelreid
