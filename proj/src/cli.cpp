#include "skelreid/cli.hpp"

#include "skelreid/checkpoint.hpp"
#include "skelreid/evaluation.hpp"
#include "skelreid/format.hpp"
#include "skelreid/matching.hpp"
#include "skelreid/synth.hpp"
#include "skelreid/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace skelreid::cli {

namespace {

using nlohmann::json;

/// Input the user pointed at that does not exist or cannot be read.
class MissingFile : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Flag combination that cannot work; reported with exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Context {
  std::ostream& out;
  std::ostream& err;

  std::string read_input(const std::string& path) const {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFile("cannot open input file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    std::string bytes = buf.str();
    err << "input " << path << " fnv1a=" << hex64(fnv1a64(bytes)) << " bytes=" << bytes.size() << '\n';
    return bytes;
  }

  void write_output(const std::string& path, const std::string& bytes) const {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty() && !std::filesystem::is_directory(parent)) {
      throw MissingFile("output directory '" + parent.string() + "' does not exist");
    }
    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw MissingFile("cannot open output file '" + path + "'");
    file.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!file) throw std::runtime_error("write failed for '" + path + "'");
    err << "wrote " << path << " fnv1a=" << hex64(fnv1a64(bytes)) << '\n';
  }

  void log_config(std::uint64_t seed, const std::string& canonical) const {
    err << "seed=" << seed << " config=" << hex64(fnv1a64(canonical)) << " (" << canonical << ")\n";
  }
};

Topology load_topology(const Context& ctx, const std::string& path) {
  if (path.empty()) return Topology::blazepose33();
  std::istringstream in(ctx.read_input(path));
  return parse_topology(in);
}

std::vector<SkeletonSequence> load_dataset(const Context& ctx, const std::string& path, const Topology& topo,
                                           bool center) {
  std::istringstream in(ctx.read_input(path));
  return parse_dataset(in, topo, {center});
}

EmbeddingSet load_embeddings(const Context& ctx, const std::string& path) {
  std::istringstream in(ctx.read_input(path));
  return read_embeddings(in);
}

TwoStreamEncoder load_encoder(const Context& ctx, const std::string& path) {
  std::istringstream in(ctx.read_input(path));
  return TwoStreamEncoder::from_checkpoint(read_checkpoint(in));
}

// ---------------------------------------------------------------------------
// shared flag groups

struct DataFlags {
  std::string topology;
  bool center = false;

  void bind(CLI::App* app) {
    app->add_option("--topology", topology, "Skeleton topology JSON (default: 33-joint BlazePose)");
    app->add_flag("--center", center, "Translate every frame so the root joint is at the origin");
  }
};

struct SegmentFlags {
  int length = kSegmentLength;
  int stride = kSegmentStride;

  void bind(CLI::App* app) {
    app->add_option("--segment-length", length, "Frames per segment")->check(CLI::PositiveNumber);
    app->add_option("--segment-stride", stride, "Frames between segment starts")->check(CLI::PositiveNumber);
  }
};

/// Query and gallery embeddings, either read directly or computed from
/// datasets with a checkpoint.
struct EmbeddingFlags {
  std::string query;
  std::string gallery;
  std::string query_data;
  std::string gallery_data;
  std::string checkpoint;
  DataFlags data;
  SegmentFlags segments;

  void bind(CLI::App* app) {
    app->add_option("--query", query, "Query embeddings (JSON Lines)");
    app->add_option("--gallery", gallery, "Gallery embeddings (JSON Lines)");
    app->add_option("--query-data", query_data, "Query skeleton dataset, embedded with --checkpoint");
    app->add_option("--gallery-data", gallery_data, "Gallery skeleton dataset, embedded with --checkpoint");
    app->add_option("--checkpoint", checkpoint, "Encoder checkpoint for --query-data/--gallery-data");
    data.bind(app);
    segments.bind(app);
  }

  bool given() const {
    return !query.empty() || !gallery.empty() || !query_data.empty() || !gallery_data.empty();
  }

  std::pair<EmbeddingSet, EmbeddingSet> load(const Context& ctx) const {
    const bool from_embeddings = !query.empty() && !gallery.empty() && query_data.empty() && gallery_data.empty();
    const bool from_data = query.empty() && gallery.empty() && !query_data.empty() && !gallery_data.empty();
    if (from_embeddings) return {load_embeddings(ctx, query), load_embeddings(ctx, gallery)};
    if (!from_data) {
      throw UsageError("give either --query and --gallery, or --query-data, --gallery-data and --checkpoint");
    }
    if (checkpoint.empty()) throw UsageError("--query-data/--gallery-data need --checkpoint");
    const TwoStreamEncoder encoder = load_encoder(ctx, checkpoint);
    const Topology topo = data.topology.empty() ? encoder.topology() : load_topology(ctx, data.topology);
    const auto q = load_dataset(ctx, query_data, topo, data.center);
    const auto g = load_dataset(ctx, gallery_data, topo, data.center);
    return {embed_dataset(encoder, q, segments.length, segments.stride),
            embed_dataset(encoder, g, segments.length, segments.stride)};
  }
};

struct MatchFlags {
  bool rerank = false;
  RerankParams params;
  std::string vote = "dowdall";
  int borda_k = 10;
  bool per_segment = false;

  void bind(CLI::App* app) {
    app->add_flag("--rerank", rerank, "Apply k-reciprocal re-ranking");
    app->add_option("--k1", params.k1, "Re-ranking neighborhood size")->check(CLI::PositiveNumber);
    app->add_option("--k2", params.k2, "Re-ranking query expansion size")->check(CLI::PositiveNumber);
    app->add_option("--lambda", params.lambda, "Weight of the original distance")->check(CLI::Range(0.0, 1.0));
    app->add_option("--vote", vote, "Identity voting: dowdall, borda or none")
        ->check(CLI::IsMember({"dowdall", "borda", "none"}));
    app->add_option("--borda-k", borda_k, "Borda cutoff K")->check(CLI::PositiveNumber);
    app->add_flag("--per-segment", per_segment, "Treat every query segment as its own query");
  }

  MatchOptions options() const {
    MatchOptions o;
    o.rerank = rerank;
    o.rerank_params = params;
    o.vote = parse_vote_method(vote);
    o.borda_k = borda_k;
    return o;
  }

  std::string canonical() const {
    return "rerank=" + std::string(rerank ? "true" : "false") + ";k1=" + std::to_string(params.k1) +
           ";k2=" + std::to_string(params.k2) + ";lambda=" + format_double(params.lambda) + ";vote=" + vote +
           ";borda_k=" + std::to_string(borda_k) + ";per_segment=" + (per_segment ? "true" : "false");
  }
};

std::vector<Protocol> protocols_from(const std::string& name) {
  if (name == "both") return {Protocol::ClothesChanging, Protocol::Standard};
  return {parse_protocol(name)};
}

json entry_json(const EmbeddingEntry& e) {
  return {{"segment_id", e.segment_id},
          {"video_id", e.video_id},
          {"person_id", e.person_id},
          {"camera_id", e.camera_id},
          {"clothes_id", e.clothes_id}};
}

EmbeddingEntry entry_from_json(const json& j) {
  return {j.at("segment_id").get<std::string>(), j.at("video_id").get<std::string>(),
          j.at("person_id").get<std::string>(), j.at("camera_id").get<std::string>(),
          j.at("clothes_id").get<std::string>()};
}

std::string rankings_json(const std::vector<QueryMatch>& matches, const EmbeddingSet& gallery,
                          const IdentityIndex& identities, const std::string& options) {
  json doc;
  doc["format"] = "skelreid-rankings/1";
  doc["options"] = options;
  doc["gallery"] = json::array();
  for (const auto& e : gallery.entries) doc["gallery"].push_back(entry_json(e));
  doc["queries"] = json::array();
  for (const QueryMatch& m : matches) {
    json q;
    q["query_id"] = m.query_id;
    q["labels"] = entry_json(m.labels);
    json ids = json::array();
    json scores = json::array();
    for (int id : m.result.identity_order) {
      ids.push_back(identities.labels[static_cast<std::size_t>(id)]);
      scores.push_back(m.result.scores[static_cast<std::size_t>(id)]);
    }
    q["identities"] = ids;
    q["scores"] = scores;
    q["samples"] = m.result.sample_order;
    doc["queries"].push_back(q);
  }
  return doc.dump(1) + "\n";
}

struct LoadedRankings {
  std::vector<EmbeddingEntry> gallery;
  std::vector<QueryMatch> matches;
};

LoadedRankings parse_rankings(const std::string& bytes) {
  json doc;
  try {
    doc = json::parse(bytes);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("rankings: ") + e.what(), 0);
  }
  LoadedRankings out;
  try {
    if (doc.at("format") != "skelreid-rankings/1") throw SchemaError("rankings: unsupported format");
    for (const auto& g : doc.at("gallery")) out.gallery.push_back(entry_from_json(g));
    for (const auto& q : doc.at("queries")) {
      QueryMatch m;
      m.query_id = q.at("query_id").get<std::string>();
      m.labels = entry_from_json(q.at("labels"));
      m.result.sample_order = q.at("samples").get<std::vector<int>>();
      out.matches.push_back(std::move(m));
    }
  } catch (const json::exception& e) {
    throw SchemaError(std::string("rankings: ") + e.what());
  }
  return out;
}

void print_warnings(const Context& ctx, const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) ctx.err << "warning: " << w << '\n';
}

// ---------------------------------------------------------------------------
// subcommands

struct SynthCommand {
  SynthConfig config;
  std::string out_dir;

  void bind(CLI::App* app) {
    app->add_option("--out", out_dir, "Directory receiving train.jsonl, query.jsonl and gallery.jsonl")->required();
    app->add_option("--seed", config.seed, "Generator seed");
    app->add_option("--identities", config.identities, "Number of identities");
    app->add_option("--clothes", config.clothes, "Clothes ids per identity");
    app->add_option("--videos", config.videos_per_clothes, "Videos per identity and clothes (>= 3)");
    app->add_option("--min-frames", config.min_frames, "Shortest video length");
    app->add_option("--max-frames", config.max_frames, "Longest video length");
    app->add_option("--noise", config.noise, "Jitter as a fraction of bone length");
  }

  void execute(const Context& ctx) const {
    config.validate();
    std::ostringstream canon;
    canon << "identities=" << config.identities << ";clothes=" << config.clothes
          << ";videos=" << config.videos_per_clothes << ";frames=" << config.min_frames << "-" << config.max_frames
          << ";noise=" << format_double(config.noise);
    ctx.log_config(config.seed, canon.str());
    if (!std::filesystem::is_directory(out_dir)) throw MissingFile("output directory '" + out_dir + "' does not exist");
    const SynthBenchmark bench = generate_benchmark(config);
    for (const auto& [name, part] : {std::pair{"train", &bench.train}, {"query", &bench.query},
                                     {"gallery", &bench.gallery}}) {
      std::ostringstream buf;
      write_dataset(buf, *part);
      ctx.write_output((std::filesystem::path(out_dir) / (std::string(name) + ".jsonl")).string(), buf.str());
    }
    ctx.out << "synth: " << bench.train.size() << " train, " << bench.query.size() << " query, "
            << bench.gallery.size() << " gallery videos\n";
  }
};

struct TrainCommand {
  std::string data;
  std::string out;
  std::string config_file;
  std::vector<std::string> settings;
  std::string loss_csv;
  DataFlags flags;

  void bind(CLI::App* app) {
    app->add_option("--data", data, "Training dataset (JSON Lines)")->required();
    app->add_option("--out", out, "Checkpoint output path")->required();
    app->add_option("--config", config_file, "Training config file (key = value lines)");
    app->add_option("--set", settings, "Config override key=value (repeatable, applied after --config)");
    app->add_option("--loss-csv", loss_csv, "Per-epoch loss and learning rate CSV");
    flags.bind(app);
  }

  void execute(const Context& ctx) const {
    TrainConfig cfg;
    if (!config_file.empty()) {
      std::istringstream in(ctx.read_input(config_file));
      cfg = parse_train_config(in, cfg);
    }
    for (const std::string& s : settings) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + s + "'");
      apply_train_setting(cfg, s.substr(0, eq), s.substr(eq + 1));
    }
    cfg.validate();
    ctx.log_config(cfg.seed, canonical_string(cfg));
    const Topology topo = load_topology(ctx, flags.topology);
    const auto dataset = load_dataset(ctx, data, topo, flags.center);
    const TrainResult result = train(dataset, topo, cfg, [&](const EpochLog& e) {
      ctx.err << "epoch " << e.epoch << " loss=" << format_double(e.mean_loss)
              << " lr=" << format_double(e.learning_rate) << '\n';
    });
    std::ostringstream ckpt;
    write_checkpoint(ckpt, result.encoder.to_checkpoint());
    ctx.write_output(out, ckpt.str());
    if (!loss_csv.empty()) {
      std::ostringstream csv;
      write_loss_csv(csv, result.history);
      ctx.write_output(loss_csv, csv.str());
    }
    ctx.out << "train: " << result.history.size() << " epochs, final loss "
            << format_double(result.history.empty() ? 0.0 : result.history.back().mean_loss) << '\n';
  }
};

struct EmbedCommand {
  std::string data;
  std::string checkpoint;
  std::string out;
  DataFlags flags;
  SegmentFlags segments;

  void bind(CLI::App* app) {
    app->add_option("--data", data, "Skeleton dataset (JSON Lines)")->required();
    app->add_option("--checkpoint", checkpoint, "Encoder checkpoint")->required();
    app->add_option("--out", out, "Embedding output (JSON Lines)")->required();
    flags.bind(app);
    segments.bind(app);
  }

  void execute(const Context& ctx) const {
    ctx.log_config(0, "segment_length=" + std::to_string(segments.length) +
                          ";segment_stride=" + std::to_string(segments.stride));
    const TwoStreamEncoder encoder = load_encoder(ctx, checkpoint);
    const Topology topo = flags.topology.empty() ? encoder.topology() : load_topology(ctx, flags.topology);
    const auto dataset = load_dataset(ctx, data, topo, flags.center);
    const EmbeddingSet set = embed_dataset(encoder, dataset, segments.length, segments.stride);
    std::ostringstream buf;
    write_embeddings(buf, set);
    ctx.write_output(out, buf.str());
    ctx.out << "embed: " << set.size() << " segments, dimension " << set.dim() << '\n';
  }
};

struct MatchCommand {
  EmbeddingFlags inputs;
  MatchFlags match;
  std::string out;

  void bind(CLI::App* app) {
    inputs.bind(app);
    match.bind(app);
    app->add_option("--out", out, "Rankings output (JSON)")->required();
  }

  void execute(const Context& ctx) const {
    const MatchOptions options = match.options();
    ctx.log_config(0, match.canonical());
    const auto [queries, gallery] = inputs.load(ctx);
    std::vector<std::string> warnings;
    const auto matches = match_queries(queries, gallery, options, match.per_segment, &warnings);
    print_warnings(ctx, warnings);
    ctx.write_output(out, rankings_json(matches, gallery, index_identities(gallery.entries), match.canonical()));
    ctx.out << "match: " << matches.size() << " queries against " << gallery.size() << " gallery segments\n";
  }
};

struct EvalCommand {
  std::string rankings;
  EmbeddingFlags inputs;
  MatchFlags match;
  std::string protocol = "cc";
  bool same_camera = false;
  std::string csv;

  void bind(CLI::App* app) {
    app->add_option("--rankings", rankings, "Rankings file written by match");
    inputs.bind(app);
    match.bind(app);
    app->add_option("--protocol", protocol, "cc, standard or both")->check(CLI::IsMember({"cc", "standard", "both"}));
    app->add_flag("--same-camera-filter", same_camera, "Discard same-person gallery samples from the query camera");
    app->add_option("--csv", csv, "Also write the report as CSV");
  }

  void execute(const Context& ctx) const {
    const auto protocols = protocols_from(protocol);
    std::vector<AblationRow> rows;
    if (!rankings.empty()) {
      if (inputs.given()) throw UsageError("--rankings cannot be combined with embedding inputs");
      ctx.log_config(0, "protocol=" + protocol + ";same_camera=" + (same_camera ? "true" : "false"));
      const LoadedRankings loaded = parse_rankings(ctx.read_input(rankings));
      for (Protocol p : protocols) {
        rows.push_back({"rankings", p, evaluate_matches(loaded.matches, loaded.gallery, {p, same_camera})});
      }
    } else {
      ctx.log_config(0, match.canonical() + ";protocol=" + protocol + ";same_camera=" + (same_camera ? "true" : "false"));
      const auto [queries, gallery] = inputs.load(ctx);
      std::vector<std::string> warnings;
      const auto matches = match_queries(queries, gallery, match.options(), match.per_segment, &warnings);
      print_warnings(ctx, warnings);
      std::string name = "NN";
      if (match.rerank) name += "+RR";
      if (match.vote != "none") name += match.vote == "borda" ? "+RV(borda)" : "+RV";
      for (Protocol p : protocols) {
        rows.push_back({name, p, evaluate_matches(matches, gallery.entries, {p, same_camera})});
      }
    }
    write_report_table(ctx.out, rows);
    if (!csv.empty()) {
      std::ostringstream buf;
      write_report_csv(buf, rows);
      ctx.write_output(csv, buf.str());
    }
  }
};

struct AblateCommand {
  EmbeddingFlags inputs;
  RerankParams params;
  int borda_k = 10;
  bool same_camera = false;
  std::string csv;

  void bind(CLI::App* app) {
    inputs.bind(app);
    app->add_option("--k1", params.k1, "Re-ranking neighborhood size")->check(CLI::PositiveNumber);
    app->add_option("--k2", params.k2, "Re-ranking query expansion size")->check(CLI::PositiveNumber);
    app->add_option("--lambda", params.lambda, "Weight of the original distance")->check(CLI::Range(0.0, 1.0));
    app->add_option("--borda-k", borda_k, "Borda cutoff K")->check(CLI::PositiveNumber);
    app->add_flag("--same-camera-filter", same_camera, "Discard same-person gallery samples from the query camera");
    app->add_option("--csv", csv, "Also write the grid as CSV");
  }

  void execute(const Context& ctx) const {
    ctx.log_config(0, "k1=" + std::to_string(params.k1) + ";k2=" + std::to_string(params.k2) +
                          ";lambda=" + format_double(params.lambda) + ";borda_k=" + std::to_string(borda_k) +
                          ";same_camera=" + (same_camera ? "true" : "false"));
    const auto [queries, gallery] = inputs.load(ctx);
    const auto grid = default_ablation_grid(params, borda_k);
    const std::vector<Protocol> protocols = {Protocol::ClothesChanging, Protocol::Standard};
    const auto rows = run_ablation(queries, gallery, grid, protocols, same_camera);
    write_report_table(ctx.out, rows);
    if (!csv.empty()) {
      std::ostringstream buf;
      write_report_csv(buf, rows);
      ctx.write_output(csv, buf.str());
    }
  }
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Skeleton-based clothes-changing person re-identification"};
  app.require_subcommand(1);

  SynthCommand synth;
  TrainCommand train_cmd;
  EmbedCommand embed;
  MatchCommand match;
  EvalCommand eval;
  AblateCommand ablate;
  CLI::App* synth_app = app.add_subcommand("synth", "Generate a synthetic gait benchmark");
  CLI::App* train_app = app.add_subcommand("train", "Train the two-stream encoder");
  CLI::App* embed_app = app.add_subcommand("embed", "Encode every segment of a dataset");
  CLI::App* match_app = app.add_subcommand("match", "Rank gallery identities for each query");
  CLI::App* eval_app = app.add_subcommand("eval", "Compute CMC and mAP");
  CLI::App* ablate_app = app.add_subcommand("ablate", "Evaluate the re-ranking and voting grid");
  synth.bind(synth_app);
  train_cmd.bind(train_app);
  embed.bind(embed_app);
  match.bind(match_app);
  eval.bind(eval_app);
  ablate.bind(ablate_app);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return kExitOk;
    }
    err << "error: " << e.what() << "\n\n";
    const CLI::App* target = &app;
    for (CLI::App* sub : app.get_subcommands()) target = sub;
    err << target->help();
    return kExitUsage;
  }

  const Context ctx{out, err};
  try {
    if (synth_app->parsed()) synth.execute(ctx);
    else if (train_app->parsed()) train_cmd.execute(ctx);
    else if (embed_app->parsed()) embed.execute(ctx);
    else if (match_app->parsed()) match.execute(ctx);
    else if (eval_app->parsed()) eval.execute(ctx);
    else if (ablate_app->parsed()) ablate.execute(ctx);
    return kExitOk;
  } catch (const MissingFile& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const SchemaError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DatasetTooSmall& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    err << "error: invalid configuration: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace skelreid::cli
