#pragma once

#include "skelreid/encoder.hpp"
#include "skelreid/skeleton.hpp"

#include <Eigen/Core>

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace skelreid {

struct EmbeddingEntry {
  std::string segment_id;
  std::string video_id;
  std::string person_id;
  std::string camera_id;
  std::string clothes_id;

  friend bool operator==(const EmbeddingEntry&, const EmbeddingEntry&) = default;
};

/// Labeled segment embeddings; row i of `vectors` belongs to entries[i].
struct EmbeddingSet {
  std::vector<EmbeddingEntry> entries;
  Eigen::MatrixXd vectors;

  Index size() const { return static_cast<Index>(entries.size()); }
  Index dim() const { return vectors.cols(); }
  /// Throws SchemaError on row/entry mismatch or duplicate segment ids.
  void validate() const;
  EmbeddingSet subset(std::span<const Index> rows) const;
};

/// JSON Lines: segment_id, video_id, person_id, camera_id, clothes_id, vector.
EmbeddingSet read_embeddings(std::istream& in);
void write_embeddings(std::ostream& out, const EmbeddingSet& set);

/// Segments every video and encodes each segment.
EmbeddingSet embed_dataset(const TwoStreamEncoder& encoder, std::span<const SkeletonSequence> dataset,
                           int length = kSegmentLength, int stride = kSegmentStride);

using DistanceMatrix = Eigen::MatrixXd;

/// Cosine distance between every query row and gallery row.
DistanceMatrix pairwise_distances(const Eigen::MatrixXd& queries, const Eigen::MatrixXd& gallery);
DistanceMatrix pairwise_distances(const EmbeddingSet& queries, const EmbeddingSet& gallery);

void write_distance_csv(std::ostream& out, const DistanceMatrix& dist, const EmbeddingSet& queries,
                        const EmbeddingSet& gallery);

struct RerankParams {
  int k1 = 20;
  int k2 = 6;
  double lambda = 0.3;
};

/// k-reciprocal re-ranking over the joint query + gallery neighbor graph.
///
/// `full` is the (Q+G) x (Q+G) distance matrix with queries first. Returns
/// the Q x G matrix lambda * original + (1 - lambda) * Jaccard, where the
/// Jaccard term compares Gaussian-weighted k-reciprocal encodings (with the
/// k1/2 expansion and k2 query expansion). k1/k2 larger than the sample
/// count are clamped; a message is appended to `warnings` when that happens.
DistanceMatrix k_reciprocal_rerank(const DistanceMatrix& full, Index num_queries, const RerankParams& params,
                                   std::vector<std::string>* warnings = nullptr);

/// Convenience overload computing cosine distances first.
DistanceMatrix k_reciprocal_rerank(const Eigen::MatrixXd& queries, const Eigen::MatrixXd& gallery,
                                   const RerankParams& params, std::vector<std::string>* warnings = nullptr);

/// Distinct gallery identities in label order, and each sample's identity.
struct IdentityIndex {
  std::vector<std::string> labels;
  std::vector<int> of_sample;

  int size() const { return static_cast<int>(labels.size()); }
};
IdentityIndex index_identities(std::span<const EmbeddingEntry> gallery);

/// r[i][j]: 1-based rank of gallery identity j for query segment i.
using RankMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Ranks identities by their closest gallery sample; ties by label order.
std::vector<int> segment_id_ranks(const Eigen::Ref<const Eigen::RowVectorXd>& distances,
                                  std::span<const int> sample_identity, int identities);

RankMatrix rank_matrix(const DistanceMatrix& rows, const IdentityIndex& gallery);

struct VoteResult {
  std::vector<double> scores;       // per identity
  std::vector<int> identity_order;  // best first
  std::vector<int> sample_order;    // gallery samples, best first (filled by the match functions)
};

/// V(g) = sum_i 1 / r[i][g]. Ordered by descending V (compared exactly),
/// then best single rank, then label order.
VoteResult dowdall_vote(const RankMatrix& ranks);

/// Weight K - r for r < K, else 0; same tie-breaks as dowdall_vote.
VoteResult borda_vote(const RankMatrix& ranks, int k);

enum class VoteMethod { None, Dowdall, Borda };

VoteMethod parse_vote_method(const std::string& name);
std::string to_string(VoteMethod method);

struct MatchOptions {
  bool rerank = false;
  RerankParams rerank_params;
  VoteMethod vote = VoteMethod::Dowdall;
  int borda_k = 10;
};

/// Ranks gallery identities and samples for one query video from its rows
/// of the (possibly re-ranked) distance matrix. Gallery samples take their
/// identity's position, ties broken by the closest query-segment distance,
/// then sample index. VoteMethod::None orders identities and samples by the
/// minimum distance over the rows (plain nearest neighbor).
VoteResult vote_on_rows(const DistanceMatrix& rows, const IdentityIndex& gallery, const MatchOptions& options);

/// Full pipeline for a single query video.
VoteResult match_video(const EmbeddingSet& query_segments, const EmbeddingSet& gallery, const MatchOptions& options);

struct QueryMatch {
  std::string query_id;  // video id, or segment id when matching per segment
  EmbeddingEntry labels;
  VoteResult result;
};

/// Matches every query unit. With per_segment, each query segment is its own
/// query; otherwise segments are grouped by video_id (in first-seen order).
/// Re-ranking, when enabled, runs once over all query segments jointly.
std::vector<QueryMatch> match_queries(const EmbeddingSet& queries, const EmbeddingSet& gallery,
                                      const MatchOptions& options, bool per_segment = false,
                                      std::vector<std::string>* warnings = nullptr);

}  // namespace skelreid
