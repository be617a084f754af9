#pragma once

// Slow, definitional reference implementations shared by the unit tests and
// the acceptance runner. They deliberately avoid the library's code paths.

#include "skelreid/evaluation.hpp"
#include "skelreid/matching.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace oracle {

using skelreid::Index;

// Exact non-negative fraction num / den.
struct Fraction {
  __int128 num = 0;
  __int128 den = 1;

  Fraction& operator+=(const Fraction& o) {
    num = num * o.den + o.num * den;
    den = den * o.den;
    __int128 a = num < 0 ? -num : num, b = den;
    while (b != 0) {
      const __int128 t = a % b;
      a = b;
      b = t;
    }
    if (a > 1) {
      num /= a;
      den /= a;
    }
    return *this;
  }
  friend bool operator<(const Fraction& x, const Fraction& y) { return x.num * y.den < y.num * x.den; }
  friend bool operator==(const Fraction& x, const Fraction& y) { return x.num * y.den == y.num * x.den; }
};

// Identities ordered by score descending, then best single rank, then index,
// by repeatedly extracting the best remaining identity.
template <typename Score>
std::vector<int> select_order(const skelreid::RankMatrix& r, const std::vector<Score>& score) {
  const int g = static_cast<int>(r.cols());
  std::vector<int> best(static_cast<std::size_t>(g), 1 << 30);
  for (int j = 0; j < g; ++j) {
    for (Index i = 0; i < r.rows(); ++i) best[j] = std::min(best[j], r(i, j));
  }
  std::vector<bool> taken(static_cast<std::size_t>(g), false);
  std::vector<int> order;
  for (int step = 0; step < g; ++step) {
    int pick = -1;
    for (int j = 0; j < g; ++j) {
      if (taken[j]) continue;
      if (pick < 0 || score[pick] < score[j] || (score[pick] == score[j] && best[j] < best[pick])) pick = j;
    }
    taken[pick] = true;
    order.push_back(pick);
  }
  return order;
}

inline std::vector<int> dowdall_order(const skelreid::RankMatrix& r) {
  std::vector<Fraction> v(static_cast<std::size_t>(r.cols()));
  for (Index j = 0; j < r.cols(); ++j) {
    for (Index i = 0; i < r.rows(); ++i) v[j] += Fraction{1, r(i, j)};
  }
  return select_order(r, v);
}

inline std::vector<int> borda_order(const skelreid::RankMatrix& r, int k) {
  std::vector<long long> v(static_cast<std::size_t>(r.cols()), 0);
  for (Index j = 0; j < r.cols(); ++j) {
    for (Index i = 0; i < r.rows(); ++i) v[j] += std::max(0, k - r(i, j));
  }
  return select_order(r, v);
}

inline skelreid::RankMatrix random_rank_matrix(std::mt19937_64& rng, int rows, int ids) {
  skelreid::RankMatrix r(rows, ids);
  std::vector<int> perm(static_cast<std::size_t>(ids));
  for (int i = 0; i < rows; ++i) {
    std::iota(perm.begin(), perm.end(), 1);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (int j = 0; j < ids; ++j) r(i, j) = perm[j];
  }
  return r;
}

// k-reciprocal re-ranking written with sets, following the published
// construction step by step. Returns the pure Jaccard term, Q x G.
inline Eigen::MatrixXd reciprocal_jaccard(const Eigen::MatrixXd& d, int num_queries, int k1, int k2) {
  const int n = static_cast<int>(d.rows());
  Eigen::MatrixXd s = d;
  for (int i = 0; i < n; ++i) {
    const double m = s.row(i).maxCoeff();
    if (m > 0) s.row(i) /= m;
  }
  auto knn = [&](int i, int k) {
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return s(i, a) < s(i, b); });
    return std::set<int>(idx.begin(), idx.begin() + k + 1);
  };
  auto ordered = [&](int i) {
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return s(i, a) < s(i, b); });
    return idx;
  };
  auto reciprocal = [&](int i, int k) {
    std::set<int> out;
    for (int c : knn(i, k)) {
      if (knn(c, k).count(i)) out.insert(c);
    }
    return out;
  };
  const int half = static_cast<int>(std::nearbyint(k1 / 2.0));
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    const std::set<int> r = reciprocal(i, k1);
    std::set<int> star = r;
    for (int c : r) {
      const std::set<int> rc = reciprocal(c, half);
      std::vector<int> common;
      std::set_intersection(rc.begin(), rc.end(), r.begin(), r.end(), std::back_inserter(common));
      if (3 * common.size() > 2 * rc.size()) star.insert(rc.begin(), rc.end());
    }
    double z = 0;
    for (int j : star) z += std::exp(-s(i, j));
    for (int j : star) v(i, j) = std::exp(-s(i, j)) / z;
  }
  Eigen::MatrixXd vq = v;
  if (k2 > 1) {
    for (int i = 0; i < n; ++i) {
      const auto idx = ordered(i);
      vq.row(i).setZero();
      for (int f = 0; f < k2; ++f) vq.row(i) += v.row(idx[f]);
      vq.row(i) /= k2;
    }
  }
  Eigen::MatrixXd out(num_queries, n - num_queries);
  for (int q = 0; q < num_queries; ++q) {
    for (int g = num_queries; g < n; ++g) {
      const double lo = vq.row(q).cwiseMin(vq.row(g)).sum();
      const double hi = vq.row(q).cwiseMax(vq.row(g)).sum();
      out(q, g - num_queries) = 1.0 - lo / hi;
    }
  }
  return out;
}

// Definitional CMC and AP over kept queries. `order` lists gallery indices
// best first; invalid positions are skipped.
inline double cmc_rank_k(const std::vector<std::vector<int>>& order, const skelreid::ProtocolMasks& m, int k) {
  double hits = 0;
  int kept = 0;
  for (std::size_t q = 0; q < order.size(); ++q) {
    if (!m.query_kept[q]) continue;
    ++kept;
    std::vector<int> valid;
    for (int g : order[q]) {
      if (m.valid(static_cast<Index>(q), g)) valid.push_back(g);
    }
    bool hit = false;
    for (int p = 0; p < std::min<int>(k, static_cast<int>(valid.size())); ++p) {
      hit = hit || m.relevant(static_cast<Index>(q), valid[p]);
    }
    hits += hit ? 1 : 0;
  }
  return kept ? hits / kept : 0.0;
}

inline double average_precision(const std::vector<int>& order, const std::vector<bool>& valid,
                                const std::vector<bool>& relevant) {
  std::vector<int> list;
  for (int g : order) {
    if (valid[static_cast<std::size_t>(g)]) list.push_back(g);
  }
  int total = 0;
  for (int g : list) total += relevant[static_cast<std::size_t>(g)] ? 1 : 0;
  if (total == 0) return 0.0;
  // AP = mean over relevant items of precision at that item's position.
  double sum = 0;
  for (std::size_t p = 0; p < list.size(); ++p) {
    if (!relevant[static_cast<std::size_t>(list[p])]) continue;
    int above = 0;
    for (std::size_t t = 0; t <= p; ++t) above += relevant[static_cast<std::size_t>(list[t])] ? 1 : 0;
    sum += static_cast<double>(above) / static_cast<double>(p + 1);
  }
  return sum / total;
}

inline double mean_ap(const std::vector<std::vector<int>>& order, const skelreid::ProtocolMasks& m) {
  double sum = 0;
  int kept = 0;
  for (std::size_t q = 0; q < order.size(); ++q) {
    if (!m.query_kept[q]) continue;
    ++kept;
    std::vector<bool> valid, relevant;
    for (Index g = 0; g < m.valid.cols(); ++g) {
      valid.push_back(m.valid(static_cast<Index>(q), g));
      relevant.push_back(m.relevant(static_cast<Index>(q), g));
    }
    sum += average_precision(order[q], valid, relevant);
  }
  return kept ? sum / kept : 0.0;
}

// Two tight 2-D clusters ten units apart, Euclidean distances. Rows are
// ordered queries first: two queries per cluster, then two gallery points
// per cluster. Cluster of row i is (i / 2) % 2.
inline Eigen::MatrixXd two_cluster_distances() {
  const double pts[8][2] = {{0.0, 0.0}, {0.3, 0.1},   {10.0, 0.0}, {10.2, 0.3},
                            {0.1, 0.4}, {-0.2, 0.2}, {9.8, -0.1}, {10.1, 0.5}};
  Eigen::MatrixXd d(8, 8);
  for (int i = 0; i < 8; ++i) {
    for (int j = 0; j < 8; ++j) d(i, j) = std::hypot(pts[i][0] - pts[j][0], pts[i][1] - pts[j][1]);
  }
  return d;
}

inline int two_cluster_of(int row) { return (row / 2) % 2; }

// Random labeled query/gallery sets with random full rankings, for the metric
// oracles. Few persons and clothes so that both protocols drop something.
struct MetricInstance {
  std::vector<skelreid::EmbeddingEntry> queries;
  std::vector<skelreid::EmbeddingEntry> gallery;
  std::vector<std::vector<int>> rankings;
};

inline MetricInstance random_metric_instance(std::mt19937_64& rng, int max_queries = 10, int max_gallery = 20) {
  std::uniform_int_distribution<int> nq(1, max_queries), ng(1, max_gallery), person(0, 3), clothes(0, 1), cam(0, 1);
  auto label = [&](const std::string& prefix, int i) {
    skelreid::EmbeddingEntry e;
    e.segment_id = prefix + std::to_string(i);
    e.video_id = e.segment_id;
    e.person_id = "p" + std::to_string(person(rng));
    e.clothes_id = "k" + std::to_string(clothes(rng));
    e.camera_id = "c" + std::to_string(cam(rng));
    return e;
  };
  MetricInstance m;
  const int q = nq(rng), g = ng(rng);
  for (int i = 0; i < q; ++i) m.queries.push_back(label("q", i));
  for (int i = 0; i < g; ++i) m.gallery.push_back(label("g", i));
  for (int i = 0; i < q; ++i) {
    std::vector<int> r(static_cast<std::size_t>(g));
    std::iota(r.begin(), r.end(), 0);
    std::shuffle(r.begin(), r.end(), rng);
    m.rankings.push_back(r);
  }
  return m;
}

}  // namespace oracle
