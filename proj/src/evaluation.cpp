#include "skelreid/evaluation.hpp"

#include "skelreid/format.hpp"

#include <cstdio>
#include <iomanip>
#include <ostream>
#include <stdexcept>

namespace skelreid {

Protocol parse_protocol(const std::string& name) {
  if (name == "cc") return Protocol::ClothesChanging;
  if (name == "standard") return Protocol::Standard;
  throw std::invalid_argument("unknown protocol '" + name + "' (expected cc or standard)");
}

std::string to_string(Protocol protocol) { return protocol == Protocol::ClothesChanging ? "cc" : "standard"; }

ProtocolMasks apply_protocol(std::span<const EmbeddingEntry> queries, std::span<const EmbeddingEntry> gallery,
                             const ProtocolOptions& options) {
  const auto nq = static_cast<Index>(queries.size());
  const auto ng = static_cast<Index>(gallery.size());
  ProtocolMasks masks{std::vector<bool>(queries.size(), false), BoolMatrix::Constant(nq, ng, true),
                      BoolMatrix::Constant(nq, ng, false)};
  for (Index q = 0; q < nq; ++q) {
    const auto& query = queries[static_cast<std::size_t>(q)];
    for (Index g = 0; g < ng; ++g) {
      const auto& sample = gallery[static_cast<std::size_t>(g)];
      const bool same_person = sample.person_id == query.person_id;
      bool valid = true;
      if (same_person && options.mode == Protocol::ClothesChanging && sample.clothes_id == query.clothes_id) {
        valid = false;
      }
      if (same_person && options.filter_same_camera && sample.camera_id == query.camera_id) valid = false;
      masks.valid(q, g) = valid;
      masks.relevant(q, g) = valid && same_person;
    }
    masks.query_kept[static_cast<std::size_t>(q)] = masks.relevant.row(q).any();
  }
  return masks;
}

namespace {

void check_rankings(std::span<const Ranking> rankings, const ProtocolMasks& masks) {
  if (static_cast<Index>(rankings.size()) != masks.valid.rows()) {
    throw std::invalid_argument("evaluation: one ranking per query required");
  }
  const Index ng = masks.valid.cols();
  for (const Ranking& r : rankings) {
    if (static_cast<Index>(r.size()) != ng) throw std::invalid_argument("evaluation: ranking must cover the gallery");
    std::vector<bool> seen(static_cast<std::size_t>(ng), false);
    for (int g : r) {
      if (g < 0 || g >= ng || seen[static_cast<std::size_t>(g)]) {
        throw std::invalid_argument("evaluation: ranking is not a permutation of the gallery");
      }
      seen[static_cast<std::size_t>(g)] = true;
    }
  }
}

}  // namespace

double cmc_rank_k(std::span<const Ranking> rankings, const ProtocolMasks& masks, int k) {
  check_rankings(rankings, masks);
  int kept = 0;
  int hits = 0;
  for (std::size_t q = 0; q < rankings.size(); ++q) {
    if (!masks.query_kept[q]) continue;
    ++kept;
    int position = 0;
    for (int g : rankings[q]) {
      if (!masks.valid(static_cast<Index>(q), g)) continue;
      if (++position > k) break;
      if (masks.relevant(static_cast<Index>(q), g)) {
        ++hits;
        break;
      }
    }
  }
  return kept ? static_cast<double>(hits) / kept : 0.0;
}

double mean_ap(std::span<const Ranking> rankings, const ProtocolMasks& masks, std::vector<double>* per_query) {
  check_rankings(rankings, masks);
  if (per_query) per_query->clear();
  double total = 0;
  int kept = 0;
  for (std::size_t q = 0; q < rankings.size(); ++q) {
    if (!masks.query_kept[q]) continue;
    int position = 0;
    int found = 0;
    double precision_sum = 0;
    for (int g : rankings[q]) {
      if (!masks.valid(static_cast<Index>(q), g)) continue;
      ++position;
      if (masks.relevant(static_cast<Index>(q), g)) {
        ++found;
        precision_sum += static_cast<double>(found) / position;
      }
    }
    const double ap = precision_sum / found;
    if (per_query) per_query->push_back(ap);
    total += ap;
    ++kept;
  }
  return kept ? total / kept : 0.0;
}

EvalReport evaluate(std::span<const Ranking> rankings, const ProtocolMasks& masks) {
  EvalReport report;
  report.rank1 = cmc_rank_k(rankings, masks, 1);
  report.rank5 = cmc_rank_k(rankings, masks, 5);
  report.rank10 = cmc_rank_k(rankings, masks, 10);
  report.map = mean_ap(rankings, masks, &report.average_precision);
  std::vector<bool> used(static_cast<std::size_t>(masks.valid.cols()), false);
  for (std::size_t q = 0; q < masks.query_kept.size(); ++q) {
    if (!masks.query_kept[q]) continue;
    ++report.n_queries;
    for (Index g = 0; g < masks.valid.cols(); ++g) {
      if (masks.valid(static_cast<Index>(q), g)) used[static_cast<std::size_t>(g)] = true;
    }
  }
  report.n_gallery = static_cast<int>(std::count(used.begin(), used.end(), true));
  return report;
}

EvalReport evaluate_matches(std::span<const QueryMatch> matches, std::span<const EmbeddingEntry> gallery,
                            const ProtocolOptions& options) {
  std::vector<EmbeddingEntry> queries;
  std::vector<Ranking> rankings;
  for (const QueryMatch& m : matches) {
    queries.push_back(m.labels);
    rankings.push_back(m.result.sample_order);
  }
  return evaluate(rankings, apply_protocol(queries, gallery, options));
}

std::vector<AblationConfig> default_ablation_grid(const RerankParams& rerank, int borda_k) {
  std::vector<AblationConfig> grid;
  auto add = [&](std::string name, bool rr, VoteMethod vote) {
    MatchOptions opts;
    opts.rerank = rr;
    opts.rerank_params = rerank;
    opts.vote = vote;
    opts.borda_k = borda_k;
    grid.push_back({std::move(name), opts, vote == VoteMethod::None});
  };
  add("NN", false, VoteMethod::None);
  add("NN+RR", true, VoteMethod::None);
  add("NN+RV", false, VoteMethod::Dowdall);
  add("NN+RR+RV", true, VoteMethod::Dowdall);
  add("NN+RV(borda)", false, VoteMethod::Borda);
  add("NN+RR+RV(borda)", true, VoteMethod::Borda);
  return grid;
}

std::vector<AblationRow> run_ablation(const EmbeddingSet& queries, const EmbeddingSet& gallery,
                                      std::span<const AblationConfig> grid, std::span<const Protocol> protocols,
                                      bool filter_same_camera) {
  std::vector<AblationRow> rows;
  for (Protocol protocol : protocols) {
    for (const AblationConfig& config : grid) {
      const auto matches = match_queries(queries, gallery, config.options, config.per_segment);
      rows.push_back(
          {config.name, protocol, evaluate_matches(matches, gallery.entries, {protocol, filter_same_camera})});
    }
  }
  return rows;
}

void write_report_csv(std::ostream& out, std::span<const AblationRow> rows) {
  out << "config,protocol,rank1,rank5,rank10,mAP,n_queries,n_gallery\n";
  for (const AblationRow& row : rows) {
    const EvalReport& r = row.report;
    out << row.config << ',' << to_string(row.protocol) << ',' << format_double(r.rank1) << ','
        << format_double(r.rank5) << ',' << format_double(r.rank10) << ',' << format_double(r.map) << ','
        << r.n_queries << ',' << r.n_gallery << '\n';
  }
}

void write_report_table(std::ostream& out, std::span<const AblationRow> rows) {
  std::size_t width = 6;
  for (const AblationRow& row : rows) width = std::max(width, row.config.size());
  auto pct = [](double v) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%.1f", 100.0 * v);
    return std::string(buf);
  };
  out << std::left << std::setw(static_cast<int>(width)) << "config" << "  " << std::setw(8) << "protocol"
      << std::right << std::setw(7) << "R-1" << std::setw(7) << "R-5" << std::setw(7) << "R-10" << std::setw(7)
      << "mAP" << std::setw(9) << "queries" << std::setw(9) << "gallery" << '\n';
  for (const AblationRow& row : rows) {
    const EvalReport& r = row.report;
    out << std::left << std::setw(static_cast<int>(width)) << row.config << "  " << std::setw(8)
        << to_string(row.protocol) << std::right << std::setw(7) << pct(r.rank1) << std::setw(7) << pct(r.rank5)
        << std::setw(7) << pct(r.rank10) << std::setw(7) << pct(r.map) << std::setw(9) << r.n_queries
        << std::setw(9) << r.n_gallery << '\n';
  }
}

}  // namespace skelreid
