#include "skelreid/matching.hpp"

#include "skelreid/format.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <set>

namespace skelreid {

using nlohmann::json;

void EmbeddingSet::validate() const {
  if (static_cast<Index>(entries.size()) != vectors.rows()) {
    throw SchemaError("embedding set: " + std::to_string(entries.size()) + " entries but " +
                      std::to_string(vectors.rows()) + " vectors");
  }
  std::set<std::string> seen;
  for (const auto& e : entries) {
    if (!seen.insert(e.segment_id).second) throw SchemaError("embedding set: duplicate segment_id '" + e.segment_id + "'");
  }
  if (!vectors.allFinite()) throw SchemaError("embedding set: non-finite vector entries");
}

EmbeddingSet EmbeddingSet::subset(std::span<const Index> rows) const {
  EmbeddingSet out;
  out.vectors.resize(static_cast<Index>(rows.size()), dim());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.entries.push_back(entries.at(static_cast<std::size_t>(rows[i])));
    out.vectors.row(static_cast<Index>(i)) = vectors.row(rows[i]);
  }
  return out;
}

EmbeddingSet read_embeddings(std::istream& in) {
  std::vector<EmbeddingEntry> entries;
  std::vector<std::vector<double>> rows;
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
      entries.push_back({record.at("segment_id").get<std::string>(), record.at("video_id").get<std::string>(),
                         record.at("person_id").get<std::string>(), record.at("camera_id").get<std::string>(),
                         record.at("clothes_id").get<std::string>()});
      rows.push_back(record.at("vector").get<std::vector<double>>());
    } catch (const json::exception& e) {
      throw SchemaError("line " + std::to_string(line_no) + ": " + e.what());
    }
    if (rows.back().size() != rows.front().size()) {
      throw SchemaError("line " + std::to_string(line_no) + ": vector length " + std::to_string(rows.back().size()) +
                        " differs from " + std::to_string(rows.front().size()));
    }
  }
  EmbeddingSet set;
  set.entries = std::move(entries);
  set.vectors.resize(static_cast<Index>(rows.size()), rows.empty() ? 0 : static_cast<Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    set.vectors.row(static_cast<Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(rows[i].data(), set.vectors.cols());
  }
  set.validate();
  return set;
}

void write_embeddings(std::ostream& out, const EmbeddingSet& set) {
  set.validate();
  for (Index i = 0; i < set.size(); ++i) {
    const auto& e = set.entries[static_cast<std::size_t>(i)];
    std::vector<double> v(set.vectors.row(i).begin(), set.vectors.row(i).end());
    json record = {{"segment_id", e.segment_id}, {"video_id", e.video_id}, {"person_id", e.person_id},
                   {"camera_id", e.camera_id},   {"clothes_id", e.clothes_id}, {"vector", v}};
    out << record.dump() << '\n';
  }
}

EmbeddingSet embed_dataset(const TwoStreamEncoder& encoder, std::span<const SkeletonSequence> dataset, int length,
                           int stride) {
  std::vector<Segment> segments;
  for (const auto& seq : dataset) {
    for (Segment& seg : segment_video(seq, length, stride)) segments.push_back(std::move(seg));
  }
  EmbeddingSet set;
  set.vectors.resize(static_cast<Index>(segments.size()), encoder.descriptor_size());
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const Segment& seg = segments[i];
    set.entries.push_back({seg.segment_id(), seg.labels.video_id, seg.labels.person_id, seg.labels.camera_id,
                           seg.labels.clothes_id});
    set.vectors.row(static_cast<Index>(i)) = encoder.encode(seg).transpose();
  }
  set.validate();
  return set;
}

namespace {

Eigen::MatrixXd normalized_rows(const Eigen::MatrixXd& m) {
  Eigen::MatrixXd out = m;
  for (Index i = 0; i < out.rows(); ++i) {
    const double n = out.row(i).norm();
    if (n > 0) out.row(i) /= n;
  }
  return out;
}

}  // namespace

DistanceMatrix pairwise_distances(const Eigen::MatrixXd& queries, const Eigen::MatrixXd& gallery) {
  if (queries.cols() != gallery.cols()) {
    throw ShapeError("pairwise_distances: dimension " + std::to_string(queries.cols()) + " vs " +
                     std::to_string(gallery.cols()));
  }
  const Eigen::MatrixXd qn = normalized_rows(queries);
  const Eigen::MatrixXd gn = normalized_rows(gallery);
  DistanceMatrix d = (1.0 - (qn * gn.transpose()).array().max(-1.0).min(1.0)).matrix();
  for (Index i = 0; i < queries.rows(); ++i) {
    if (queries.row(i).isZero(0.0)) d.row(i).setOnes();
  }
  for (Index j = 0; j < gallery.rows(); ++j) {
    if (gallery.row(j).isZero(0.0)) d.col(j).setOnes();
  }
  return d;
}

DistanceMatrix pairwise_distances(const EmbeddingSet& queries, const EmbeddingSet& gallery) {
  return pairwise_distances(queries.vectors, gallery.vectors);
}

void write_distance_csv(std::ostream& out, const DistanceMatrix& dist, const EmbeddingSet& queries,
                        const EmbeddingSet& gallery) {
  out << "query";
  for (const auto& g : gallery.entries) out << ',' << g.segment_id;
  out << '\n';
  for (Index i = 0; i < dist.rows(); ++i) {
    out << queries.entries[static_cast<std::size_t>(i)].segment_id;
    for (Index j = 0; j < dist.cols(); ++j) out << ',' << format_double(dist(i, j));
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// k-reciprocal re-ranking

namespace {

std::vector<int> argsort_row(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  std::vector<int> idx(static_cast<std::size_t>(row.size()));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return row[a] < row[b]; });
  return idx;
}

/// Members of the first k+1 neighbors of `i` whose own first k+1 neighbors
/// contain `i`.
std::vector<int> reciprocal_neighbors(const std::vector<std::vector<int>>& rank, int i, int k) {
  std::vector<int> out;
  for (int f = 0; f <= k; ++f) {
    const int cand = rank[i][f];
    const auto& back = rank[cand];
    if (std::find(back.begin(), back.begin() + k + 1, i) != back.begin() + k + 1) out.push_back(cand);
  }
  return out;
}

}  // namespace

DistanceMatrix k_reciprocal_rerank(const DistanceMatrix& full, Index num_queries, const RerankParams& params,
                                   std::vector<std::string>* warnings) {
  const Index n = full.rows();
  if (full.cols() != n) throw ShapeError("k_reciprocal_rerank: distance matrix must be square");
  if (num_queries < 0 || num_queries > n) throw ShapeError("k_reciprocal_rerank: bad query count");
  if (params.k1 < 1 || params.k2 < 1 || params.k2 > params.k1) {
    throw std::invalid_argument("k_reciprocal_rerank: need k1 >= k2 >= 1");
  }
  if (!(params.lambda >= 0.0 && params.lambda <= 1.0)) throw std::invalid_argument("k_reciprocal_rerank: lambda in [0, 1]");

  const Index num_gallery = n - num_queries;
  if (n == 0 || num_gallery == 0 || num_queries == 0) return full.block(0, num_queries, num_queries, num_gallery);

  int k1 = params.k1;
  int k2 = params.k2;
  if (k1 > n - 1) {
    if (warnings) {
      warnings->push_back("re-ranking: k1=" + std::to_string(k1) + " exceeds sample count, clamped to " +
                          std::to_string(n - 1));
    }
    k1 = static_cast<int>(n - 1);
  }
  k2 = std::min(k2, std::max(k1, 1));
  const int half = static_cast<int>(std::nearbyint(k1 / 2.0));

  // Gaussian weights use distances scaled by each row's maximum.
  DistanceMatrix scaled = full;
  for (Index i = 0; i < n; ++i) {
    const double m = scaled.row(i).maxCoeff();
    if (m > 0) scaled.row(i) /= m;
  }
  std::vector<std::vector<int>> rank(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) rank[static_cast<std::size_t>(i)] = argsort_row(scaled.row(i));

  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    const std::vector<int> recip = reciprocal_neighbors(rank, i, k1);
    std::set<int> expansion(recip.begin(), recip.end());
    for (int cand : recip) {
      const std::vector<int> cand_recip = reciprocal_neighbors(rank, cand, half);
      const auto shared = std::count_if(cand_recip.begin(), cand_recip.end(), [&](int x) {
        return std::find(recip.begin(), recip.end(), x) != recip.end();
      });
      if (static_cast<double>(shared) > 2.0 / 3.0 * static_cast<double>(cand_recip.size())) {
        expansion.insert(cand_recip.begin(), cand_recip.end());
      }
    }
    double total = 0;
    for (int j : expansion) total += std::exp(-scaled(i, j));
    for (int j : expansion) v(i, j) = std::exp(-scaled(i, j)) / total;
  }

  if (k2 != 1) {
    Eigen::MatrixXd expanded(n, n);
    for (int i = 0; i < n; ++i) {
      Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(n);
      for (int f = 0; f < k2; ++f) acc += v.row(rank[i][f]);
      expanded.row(i) = acc / static_cast<double>(k2);
    }
    v = std::move(expanded);
  }

  // Inverted index: for each column, rows with a nonzero encoding weight.
  std::vector<std::vector<int>> holders(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    for (int l = 0; l < n; ++l) {
      if (v(i, l) != 0.0) holders[static_cast<std::size_t>(l)].push_back(i);
    }
  }

  DistanceMatrix out(num_queries, num_gallery);
  Eigen::RowVectorXd overlap(n);
  for (int i = 0; i < num_queries; ++i) {
    overlap.setZero();
    for (int l = 0; l < n; ++l) {
      if (v(i, l) == 0.0) continue;
      for (int j : holders[static_cast<std::size_t>(l)]) overlap[j] += std::min(v(i, l), v(j, l));
    }
    for (Index g = 0; g < num_gallery; ++g) {
      const double shared = overlap[num_queries + g];
      const double jaccard = 1.0 - shared / (2.0 - shared);
      out(i, g) = params.lambda * full(i, num_queries + g) + (1.0 - params.lambda) * jaccard;
    }
  }
  return out;
}

DistanceMatrix k_reciprocal_rerank(const Eigen::MatrixXd& queries, const Eigen::MatrixXd& gallery,
                                   const RerankParams& params, std::vector<std::string>* warnings) {
  Eigen::MatrixXd all(queries.rows() + gallery.rows(), queries.cols());
  if (queries.cols() != gallery.cols()) throw ShapeError("k_reciprocal_rerank: dimension mismatch");
  all << queries, gallery;
  return k_reciprocal_rerank(pairwise_distances(all, all), queries.rows(), params, warnings);
}

// ---------------------------------------------------------------------------
// Identity ranks and voting

IdentityIndex index_identities(std::span<const EmbeddingEntry> gallery) {
  IdentityIndex index;
  std::set<std::string> labels;
  for (const auto& e : gallery) labels.insert(e.person_id);
  index.labels.assign(labels.begin(), labels.end());
  for (const auto& e : gallery) {
    const auto it = std::lower_bound(index.labels.begin(), index.labels.end(), e.person_id);
    index.of_sample.push_back(static_cast<int>(it - index.labels.begin()));
  }
  return index;
}

std::vector<int> segment_id_ranks(const Eigen::Ref<const Eigen::RowVectorXd>& distances,
                                  std::span<const int> sample_identity, int identities) {
  if (static_cast<Index>(sample_identity.size()) != distances.size()) {
    throw ShapeError("segment_id_ranks: one identity per gallery sample required");
  }
  std::vector<double> best(static_cast<std::size_t>(identities), std::numeric_limits<double>::infinity());
  std::vector<bool> present(static_cast<std::size_t>(identities), false);
  for (Index s = 0; s < distances.size(); ++s) {
    const auto id = static_cast<std::size_t>(sample_identity[static_cast<std::size_t>(s)]);
    best[id] = std::min(best[id], distances[s]);
    present[id] = true;
  }
  if (std::find(present.begin(), present.end(), false) != present.end()) {
    throw std::invalid_argument("segment_id_ranks: identity without gallery samples");
  }
  std::vector<int> order(static_cast<std::size_t>(identities));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return best[a] < best[b]; });
  std::vector<int> ranks(static_cast<std::size_t>(identities));
  for (std::size_t pos = 0; pos < order.size(); ++pos) ranks[static_cast<std::size_t>(order[pos])] = static_cast<int>(pos) + 1;
  return ranks;
}

RankMatrix rank_matrix(const DistanceMatrix& rows, const IdentityIndex& gallery) {
  RankMatrix out(rows.rows(), gallery.size());
  for (Index i = 0; i < rows.rows(); ++i) {
    const auto r = segment_id_ranks(rows.row(i), gallery.of_sample, gallery.size());
    for (int g = 0; g < gallery.size(); ++g) out(i, g) = r[static_cast<std::size_t>(g)];
  }
  return out;
}

namespace {

void check_rank_matrix(const RankMatrix& ranks) {
  const Index ids = ranks.cols();
  for (Index i = 0; i < ranks.rows(); ++i) {
    std::vector<bool> seen(static_cast<std::size_t>(ids), false);
    for (Index g = 0; g < ids; ++g) {
      const int r = ranks(i, g);
      if (r < 1 || r > ids || seen[static_cast<std::size_t>(r - 1)]) {
        throw std::invalid_argument("rank matrix row " + std::to_string(i) + " is not a permutation of 1.." +
                                    std::to_string(ids));
      }
      seen[static_cast<std::size_t>(r - 1)] = true;
    }
  }
}

std::vector<int> best_ranks(const RankMatrix& ranks) {
  std::vector<int> best(static_cast<std::size_t>(ranks.cols()), std::numeric_limits<int>::max());
  for (Index g = 0; g < ranks.cols(); ++g) {
    if (ranks.rows() > 0) best[static_cast<std::size_t>(g)] = ranks.col(g).minCoeff();
  }
  return best;
}

/// Identities sorted by `better(a, b)`, then best single rank, then index.
template <typename Better>
std::vector<int> order_identities(const RankMatrix& ranks, Better better) {
  const auto best = best_ranks(ranks);
  std::vector<int> order(static_cast<std::size_t>(ranks.cols()));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (better(a, b)) return true;
    if (better(b, a)) return false;
    if (best[a] != best[b]) return best[a] < best[b];
    return a < b;
  });
  return order;
}

using Wide = unsigned __int128;

/// lcm(1..n) when M * lcm fits comfortably in 128 bits, else 0.
Wide scaled_denominator(Index n, Index rows) {
  const Wide limit = static_cast<Wide>(1) << 120;
  Wide l = 1;
  for (Index k = 2; k <= n; ++k) {
    Wide a = l;
    Wide b = static_cast<Wide>(k);
    while (b != 0) {
      const Wide t = a % b;
      a = b;
      b = t;
    }
    l = l / a * static_cast<Wide>(k);
    if (l > limit / static_cast<Wide>(std::max<Index>(rows, 1))) return 0;
  }
  return l;
}

}  // namespace

VoteResult dowdall_vote(const RankMatrix& ranks) {
  check_rank_matrix(ranks);
  const Index ids = ranks.cols();
  VoteResult out;
  out.scores.assign(static_cast<std::size_t>(ids), 0.0);
  std::vector<std::vector<int>> per_id(static_cast<std::size_t>(ids));
  for (Index g = 0; g < ids; ++g) {
    auto& list = per_id[static_cast<std::size_t>(g)];
    for (Index i = 0; i < ranks.rows(); ++i) list.push_back(ranks(i, g));
    std::sort(list.begin(), list.end());
    for (int r : list) out.scores[static_cast<std::size_t>(g)] += 1.0 / r;
  }

  // Order on exact rational scores: sum of L / r with L = lcm(1..G).
  const Wide denom = scaled_denominator(ids, ranks.rows());
  if (denom != 0) {
    std::vector<Wide> exact(static_cast<std::size_t>(ids), 0);
    for (Index g = 0; g < ids; ++g) {
      for (int r : per_id[static_cast<std::size_t>(g)]) exact[static_cast<std::size_t>(g)] += denom / static_cast<Wide>(r);
    }
    out.identity_order = order_identities(ranks, [&](int a, int b) { return exact[a] > exact[b]; });
  } else {
    // FIXME: very large galleries fall back to long double sums, which can
    // split mathematically equal scores by one ulp.
    std::vector<long double> approx(static_cast<std::size_t>(ids), 0);
    for (Index g = 0; g < ids; ++g) {
      for (int r : per_id[static_cast<std::size_t>(g)]) approx[static_cast<std::size_t>(g)] += 1.0L / r;
    }
    out.identity_order = order_identities(ranks, [&](int a, int b) { return approx[a] > approx[b]; });
  }
  return out;
}

VoteResult borda_vote(const RankMatrix& ranks, int k) {
  if (k < 1) throw std::invalid_argument("borda_vote: K must be >= 1");
  check_rank_matrix(ranks);
  const Index ids = ranks.cols();
  std::vector<long long> points(static_cast<std::size_t>(ids), 0);
  for (Index i = 0; i < ranks.rows(); ++i) {
    for (Index g = 0; g < ids; ++g) {
      const int r = ranks(i, g);
      if (r < k) points[static_cast<std::size_t>(g)] += k - r;
    }
  }
  VoteResult out;
  out.scores.assign(points.begin(), points.end());
  out.identity_order = order_identities(ranks, [&](int a, int b) { return points[a] > points[b]; });
  return out;
}

VoteMethod parse_vote_method(const std::string& name) {
  if (name == "none") return VoteMethod::None;
  if (name == "dowdall") return VoteMethod::Dowdall;
  if (name == "borda") return VoteMethod::Borda;
  throw std::invalid_argument("unknown vote method '" + name + "' (expected none, dowdall or borda)");
}

std::string to_string(VoteMethod method) {
  switch (method) {
    case VoteMethod::None: return "none";
    case VoteMethod::Dowdall: return "dowdall";
    case VoteMethod::Borda: return "borda";
  }
  return "?";
}

VoteResult vote_on_rows(const DistanceMatrix& rows, const IdentityIndex& gallery, const MatchOptions& options) {
  if (rows.rows() == 0) throw std::invalid_argument("match: query has no segments");
  if (rows.cols() == 0) throw std::invalid_argument("match: empty gallery");
  const Eigen::RowVectorXd closest = rows.colwise().minCoeff();

  VoteResult result;
  if (options.vote == VoteMethod::None) {
    const auto r = segment_id_ranks(closest, gallery.of_sample, gallery.size());
    result.identity_order.assign(static_cast<std::size_t>(gallery.size()), 0);
    for (int g = 0; g < gallery.size(); ++g) result.identity_order[static_cast<std::size_t>(r[g] - 1)] = g;
    result.scores.assign(static_cast<std::size_t>(gallery.size()), std::numeric_limits<double>::infinity());
    for (Index s = 0; s < closest.size(); ++s) {
      auto& score = result.scores[static_cast<std::size_t>(gallery.of_sample[static_cast<std::size_t>(s)])];
      score = std::min(score, closest[s]);
    }
    result.sample_order.resize(static_cast<std::size_t>(closest.size()));
    std::iota(result.sample_order.begin(), result.sample_order.end(), 0);
    std::stable_sort(result.sample_order.begin(), result.sample_order.end(),
                     [&](int a, int b) { return closest[a] < closest[b]; });
    return result;
  }

  const RankMatrix ranks = rank_matrix(rows, gallery);
  result = options.vote == VoteMethod::Dowdall ? dowdall_vote(ranks) : borda_vote(ranks, options.borda_k);
  std::vector<int> position(static_cast<std::size_t>(gallery.size()));
  for (std::size_t p = 0; p < result.identity_order.size(); ++p) position[static_cast<std::size_t>(result.identity_order[p])] = static_cast<int>(p);
  result.sample_order.resize(static_cast<std::size_t>(closest.size()));
  std::iota(result.sample_order.begin(), result.sample_order.end(), 0);
  std::stable_sort(result.sample_order.begin(), result.sample_order.end(), [&](int a, int b) {
    const int pa = position[static_cast<std::size_t>(gallery.of_sample[static_cast<std::size_t>(a)])];
    const int pb = position[static_cast<std::size_t>(gallery.of_sample[static_cast<std::size_t>(b)])];
    if (pa != pb) return pa < pb;
    return closest[a] < closest[b];
  });
  return result;
}

namespace {

DistanceMatrix query_gallery_distances(const EmbeddingSet& queries, const EmbeddingSet& gallery,
                                       const MatchOptions& options, std::vector<std::string>* warnings) {
  if (queries.dim() != gallery.dim()) {
    throw ShapeError("match: query dimension " + std::to_string(queries.dim()) + " vs gallery " +
                     std::to_string(gallery.dim()));
  }
  if (options.rerank) return k_reciprocal_rerank(queries.vectors, gallery.vectors, options.rerank_params, warnings);
  return pairwise_distances(queries, gallery);
}

}  // namespace

VoteResult match_video(const EmbeddingSet& query_segments, const EmbeddingSet& gallery, const MatchOptions& options) {
  if (gallery.size() == 0) throw std::invalid_argument("match: empty gallery");
  if (query_segments.size() == 0) throw std::invalid_argument("match: query has no segments");
  const DistanceMatrix d = query_gallery_distances(query_segments, gallery, options, nullptr);
  return vote_on_rows(d, index_identities(gallery.entries), options);
}

std::vector<QueryMatch> match_queries(const EmbeddingSet& queries, const EmbeddingSet& gallery,
                                      const MatchOptions& options, bool per_segment,
                                      std::vector<std::string>* warnings) {
  if (gallery.size() == 0) throw std::invalid_argument("match: empty gallery");
  const DistanceMatrix d = query_gallery_distances(queries, gallery, options, warnings);
  const IdentityIndex ids = index_identities(gallery.entries);

  std::vector<std::vector<Index>> groups;
  std::map<std::string, std::size_t> group_of;
  for (Index i = 0; i < queries.size(); ++i) {
    const auto& e = queries.entries[static_cast<std::size_t>(i)];
    const std::string key = per_segment ? e.segment_id : e.video_id;
    auto [it, inserted] = group_of.emplace(key, groups.size());
    if (inserted) groups.emplace_back();
    groups[it->second].push_back(i);
  }

  std::vector<QueryMatch> out;
  out.reserve(groups.size());
  for (const auto& rows : groups) {
    DistanceMatrix sub(static_cast<Index>(rows.size()), d.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) sub.row(static_cast<Index>(r)) = d.row(rows[r]);
    const auto& first = queries.entries[static_cast<std::size_t>(rows.front())];
    out.push_back({per_segment ? first.segment_id : first.video_id, first, vote_on_rows(sub, ids, options)});
  }
  return out;
}

}  // namespace skelreid
