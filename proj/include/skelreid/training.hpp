#pragma once

#include "skelreid/encoder.hpp"
#include "skelreid/optim.hpp"
#include "skelreid/skeleton.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace skelreid {

struct TrainConfig {
  int epochs = 50;
  double margin = 0.3;
  int identities_per_batch = 8;   // P
  int segments_per_identity = 4;  // Q
  std::uint64_t seed = 7;
  int segment_length = kSegmentLength;
  int segment_stride = kSegmentStride;
  OptimConfig optim;
  EncoderConfig encoder;

  void validate() const;
};

/// Reads `key = value` lines ('#' starts a comment) over `base`. Keys:
/// epochs, margin, identities_per_batch, segments_per_identity, seed,
/// segment_length, segment_stride, learning_rate, momentum, decay_factor,
/// decay_every, nesterov, channels (comma separated), temporal_width,
/// temporal_stride. Unknown keys and bad values throw std::invalid_argument.
TrainConfig parse_train_config(std::istream& in, TrainConfig base = {});
void apply_train_setting(TrainConfig& cfg, const std::string& key, const std::string& value);

/// Stable one-line rendering of every field, used for logging and hashing.
std::string canonical_string(const TrainConfig& cfg);

/// 1 - cos(x, y); 1 when either vector is all-zero.
double cosine_distance(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& y);

struct CosineDistanceGrad {
  double distance;
  Eigen::VectorXd dx;
  Eigen::VectorXd dy;
};
CosineDistanceGrad cosine_distance_grad(const Eigen::Ref<const Eigen::VectorXd>& x,
                                        const Eigen::Ref<const Eigen::VectorXd>& y);

/// max(0, d(a, p) - d(a, n) + margin) with cosine distance.
double triplet_loss(const Descriptor& a, const Descriptor& p, const Descriptor& n, double margin);

struct Triplet {
  int anchor;
  int positive;
  int negative;
  friend bool operator==(const Triplet&, const Triplet&) = default;
};

/// Batch-hard mining: for each anchor the farthest positive and the closest
/// negative, ties going to the lowest index. Anchors without a positive are
/// skipped. Throws when the batch holds a single identity.
std::vector<Triplet> mine_triplets(std::span<const Descriptor> descriptors, std::span<const int> labels);

struct BatchLoss {
  double loss = 0;  // mean over mined triplets
  std::vector<Triplet> triplets;
  std::vector<Descriptor> gradients;  // d loss / d descriptor, per batch entry
};

BatchLoss batch_triplet_loss(std::span<const Descriptor> descriptors, std::span<const int> labels, double margin);

/// P x Q identity sampler over one epoch. Identities with fewer than Q
/// entries are topped up by drawing with replacement; each identity's
/// shuffled list is cut into chunks of Q, and batches take one chunk from
/// each of P distinct identities until fewer than P identities remain.
std::vector<std::vector<int>> sample_pk_batches(std::span<const int> labels, int identities, int per_identity,
                                                std::mt19937_64& rng);

struct EpochLog {
  int epoch;
  double mean_loss;
  double learning_rate;
};

struct TrainResult {
  TwoStreamEncoder encoder;
  std::vector<EpochLog> history;
};

/// Thrown when the dataset cannot fill a P x Q batch.
class DatasetTooSmall : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

TrainResult train(std::span<const SkeletonSequence> dataset, const Topology& topo, const TrainConfig& cfg,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

/// CSV with header `epoch,mean_loss,lr`; values printed round-trip exact.
void write_loss_csv(std::ostream& out, std::span<const EpochLog> history);

}  // namespace skelreid
