#pragma once

#include "skelreid/matching.hpp"

#include <Eigen/Core>

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace skelreid {

enum class Protocol { ClothesChanging, Standard };

/// "cc" or "standard".
Protocol parse_protocol(const std::string& name);
std::string to_string(Protocol protocol);

struct ProtocolOptions {
  Protocol mode = Protocol::ClothesChanging;
  /// Also discard same-person gallery samples from the query's camera.
  bool filter_same_camera = false;
};

using BoolMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

struct ProtocolMasks {
  std::vector<bool> query_kept;  // has at least one relevant gallery sample
  BoolMatrix valid;              // gallery sample participates for this query
  BoolMatrix relevant;           // valid and same person
};

/// Clothes-changing mode drops same-person same-clothes gallery samples and
/// keeps only queries left with a same-person match; standard mode keeps
/// every sample.
ProtocolMasks apply_protocol(std::span<const EmbeddingEntry> queries, std::span<const EmbeddingEntry> gallery,
                             const ProtocolOptions& options);

/// A ranking lists every gallery sample index once, best first.
using Ranking = std::vector<int>;

/// Fraction of kept queries with a relevant sample among their first k
/// valid samples.
double cmc_rank_k(std::span<const Ranking> rankings, const ProtocolMasks& masks, int k);

/// Mean over kept queries of average precision over valid samples.
double mean_ap(std::span<const Ranking> rankings, const ProtocolMasks& masks,
               std::vector<double>* per_query = nullptr);

struct EvalReport {
  double rank1 = 0;
  double rank5 = 0;
  double rank10 = 0;
  double map = 0;
  std::vector<double> average_precision;  // per kept query
  int n_queries = 0;                      // kept queries
  int n_gallery = 0;                      // gallery samples valid for some kept query
};

EvalReport evaluate(std::span<const Ranking> rankings, const ProtocolMasks& masks);

/// Evaluates match results against the gallery under a protocol.
EvalReport evaluate_matches(std::span<const QueryMatch> matches, std::span<const EmbeddingEntry> gallery,
                            const ProtocolOptions& options);

struct AblationConfig {
  std::string name;
  MatchOptions options;
  bool per_segment = false;  // plain NN scores each query segment separately
};

/// RR on/off x RV none/dowdall/borda: NN, NN+RR, NN+RV, NN+RR+RV,
/// NN+RV(borda), NN+RR+RV(borda).
std::vector<AblationConfig> default_ablation_grid(const RerankParams& rerank = {}, int borda_k = 10);

struct AblationRow {
  std::string config;
  Protocol protocol;
  EvalReport report;
};

std::vector<AblationRow> run_ablation(const EmbeddingSet& queries, const EmbeddingSet& gallery,
                                      std::span<const AblationConfig> grid, std::span<const Protocol> protocols,
                                      bool filter_same_camera = false);

/// Columns: config, protocol, rank1, rank5, rank10, mAP, n_queries, n_gallery.
void write_report_csv(std::ostream& out, std::span<const AblationRow> rows);
/// Aligned text table with percentages at one decimal.
void write_report_table(std::ostream& out, std::span<const AblationRow> rows);

}  // namespace skelreid
