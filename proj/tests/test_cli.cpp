#include <doctest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string err;
};

// Runs the installed binary with stderr captured to a file.
Result cli(const std::string& args, const fs::path& dir) {
  const fs::path log = dir / "stderr.txt";
  const std::string cmd = std::string(SKELREID_CLI_PATH) + " " + args + " >" + (dir / "stdout.txt").string() + " 2>" +
                          log.string();
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::stringstream buf;
  buf << in.rdbuf();
  r.err = buf.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("skelreid_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("synth, train, embed and eval run end to end") {
  const fs::path dir = scratch("pipeline");
  const std::string d = dir.string();
  REQUIRE(cli("synth --out " + d + " --seed 7 --identities 3 --clothes 2 --videos 3 --min-frames 40 --max-frames 56",
              dir).code == 0);
  CHECK(fs::exists(dir / "train.jsonl"));
  CHECK(fs::exists(dir / "query.jsonl"));
  CHECK(fs::exists(dir / "gallery.jsonl"));

  std::ofstream(dir / "train.cfg") << "# small run\nepochs = 2\nchannels = 4,8,16\n"
                                      "identities_per_batch = 2\nsegments_per_identity = 2\n";
  const Result train = cli("train --data " + d + "/train.jsonl --config " + d + "/train.cfg --set seed=3 --out " + d +
                               "/model.ckpt --loss-csv " + d + "/loss.csv",
                           dir);
  REQUIRE(train.code == 0);
  CHECK(train.err.find("seed=3") != std::string::npos);
  CHECK(train.err.find("config=") != std::string::npos);
  CHECK(train.err.find("fnv1a=") != std::string::npos);
  CHECK(slurp(dir / "loss.csv").rfind("epoch,mean_loss,lr\n", 0) == 0);

  const Result eval = cli("eval --query-data " + d + "/query.jsonl --gallery-data " + d + "/gallery.jsonl --checkpoint " +
                              d + "/model.ckpt --rerank --vote dowdall --protocol both --csv " + d + "/report.csv",
                          dir);
  REQUIRE(eval.code == 0);
  const std::string report = slurp(dir / "report.csv");
  CHECK(report.rfind("config,protocol,rank1,rank5,rank10,mAP,n_queries,n_gallery\n", 0) == 0);
  CHECK(report.find(",cc,") != std::string::npos);
  CHECK(report.find(",standard,") != std::string::npos);

  // Externally supplied embeddings: no checkpoint involved downstream.
  REQUIRE(cli("embed --data " + d + "/query.jsonl --checkpoint " + d + "/model.ckpt --out " + d + "/q.emb", dir).code ==
          0);
  REQUIRE(cli("embed --data " + d + "/gallery.jsonl --checkpoint " + d + "/model.ckpt --out " + d + "/g.emb", dir)
              .code == 0);
  CHECK(cli("eval --query " + d + "/q.emb --gallery " + d + "/g.emb --protocol cc", dir).code == 0);
  REQUIRE(cli("match --query " + d + "/q.emb --gallery " + d + "/g.emb --out " + d + "/rank.json", dir).code == 0);
  CHECK(cli("eval --rankings " + d + "/rank.json --protocol cc", dir).code == 0);
  CHECK(cli("ablate --query " + d + "/q.emb --gallery " + d + "/g.emb --k1 4 --k2 2 --csv " + d + "/grid.csv", dir)
            .code == 0);
  const std::string grid = slurp(dir / "grid.csv");
  CHECK(std::count(grid.begin(), grid.end(), '\n') == 13);

  // Same inputs, same outputs.
  REQUIRE(cli("train --data " + d + "/train.jsonl --config " + d + "/train.cfg --set seed=3 --out " + d +
                  "/model2.ckpt",
              dir).code == 0);
  CHECK(slurp(dir / "model.ckpt") == slurp(dir / "model2.ckpt"));
}

TEST_CASE("usage errors exit with code 2") {
  const fs::path dir = scratch("errors");
  const std::string d = dir.string();
  const Result unknown = cli("synth --out " + d + " --frobnicate", dir);
  CHECK(unknown.code == 2);
  CHECK(unknown.err.find("Usage") != std::string::npos);
  CHECK(cli("", dir).code == 2);
  CHECK(cli("embed --data " + d + "/nope.jsonl --checkpoint " + d + "/nope.ckpt --out " + d + "/x", dir).code == 2);
  std::ofstream(dir / "bad.cfg") << "epochs = many\n";
  std::ofstream(dir / "empty.jsonl") << "";
  CHECK(cli("train --data " + d + "/empty.jsonl --config " + d + "/bad.cfg --out " + d + "/m", dir).code == 2);
  CHECK(cli("train --data " + d + "/missing.jsonl --out " + d + "/m", dir).code == 2);
  CHECK(cli("synth --out " + d + " --videos 2", dir).code == 2);
  CHECK(cli("--help", dir).code == 0);
}
