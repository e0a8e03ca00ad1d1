#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#include "cg3/cli.hpp"
#include "cg3/report.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::path(::testing::TempDir()) / ("cg3_cli_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cg3::cli::run(std::move(args), out, err);
  return {code, out.str(), err.str()};
}

// Small three-block bundle shared by most tests.
const fs::path& bundle() {
  static const fs::path dir = [] {
    const fs::path d = scratch("bundle");
    const auto r = cli({"gen-sbm", "--out", d.string(), "--nodes-per-block", "15", "--blocks", "3", "--p-in", "0.3",
                        "--p-out", "0.02", "--features", "6", "--val-per-class", "4", "--seed", "11"});
    EXPECT_EQ(r.code, 0) << r.err;
    return d;
  }();
  return dir;
}

std::vector<std::string> train_args(const fs::path& out, std::vector<std::string> extra = {}) {
  std::vector<std::string> a{"train", "--data", bundle().string(), "--out", out.string(),
                             "--max-iters", "6", "--hidden", "8", "--seed", "3"};
  a.insert(a.end(), extra.begin(), extra.end());
  return a;
}

int subprocess(const std::string& args) {
  const std::string cmd = std::string(CG3_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Train, WritesAllArtifacts) {
  const auto out = scratch("smoke");
  const auto r = cli(train_args(out));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("test accuracy"), std::string::npos);
  const json manifest = read_json(out / "manifest.json");
  for (const auto& [key, file] : manifest["outputs"].items()) EXPECT_TRUE(fs::exists(out / file.get<std::string>())) << key;
  EXPECT_EQ(manifest["dataset"]["hash"], cg3::report::bundle_hash(bundle()));
  EXPECT_EQ(manifest["config"]["seed"], 3);
  EXPECT_TRUE(manifest.contains("timestamp"));

  const json report = read_json(out / "report.json");
  EXPECT_EQ(report["dataset"]["nodes"], 45);
  ASSERT_EQ(report["runs"].size(), 1u);
  EXPECT_EQ(report["config"]["mode"], "full");

  std::istringstream metrics(slurp(out / "metrics.jsonl"));
  std::string line;
  std::size_t lines = 0;
  while (std::getline(metrics, line)) {
    const json m = json::parse(line);
    EXPECT_EQ(m["seed"], 3);
    ++lines;
  }
  EXPECT_EQ(lines, report["runs"][0]["epochs_run"].get<std::size_t>());

  std::istringstream emb(slurp(out / "embeddings.tsv"));
  std::getline(emb, line);
  EXPECT_EQ(line.rfind("node\tphi1_0", 0), 0u);
  std::size_t rows = 0;
  while (std::getline(emb, line)) ++rows;
  EXPECT_EQ(rows, 45u);

  const auto pred = cg3::cli::read_predictions(out / "predictions.csv", 45);
  EXPECT_EQ(pred.size(), 45u);
}

TEST(Train, ReportIsReproducibleApartFromTiming) {
  const auto a = scratch("rep_a"), b = scratch("rep_b");
  ASSERT_EQ(cli(train_args(a)).code, 0);
  ASSERT_EQ(cli(train_args(b)).code, 0);
  EXPECT_EQ(cg3::report::strip_timing(read_json(a / "report.json")),
            cg3::report::strip_timing(read_json(b / "report.json")));
  EXPECT_EQ(slurp(a / "metrics.jsonl"), slurp(b / "metrics.jsonl"));
  EXPECT_EQ(slurp(a / "predictions.csv"), slurp(b / "predictions.csv"));
}

TEST(Train, ZeroWeightsEqualBaselineMode) {
  const auto a = scratch("zero"), b = scratch("base");
  ASSERT_EQ(cli(train_args(a, {"--lambda-ssc", "0", "--lambda-g2", "0"})).code, 0);
  ASSERT_EQ(cli(train_args(b, {"--mode", "gcn-baseline"})).code, 0);
  EXPECT_EQ(cg3::report::strip_timing(read_json(a / "report.json")["runs"]),
            cg3::report::strip_timing(read_json(b / "report.json")["runs"]));
}

TEST(Train, MultipleSeedsAreSummarized) {
  const auto out = scratch("seeds");
  const auto r = cli(train_args(out, {"--seeds", "3"}));
  ASSERT_EQ(r.code, 0) << r.err;
  const json report = read_json(out / "report.json");
  ASSERT_EQ(report["runs"].size(), 3u);
  double mean = 0.0;
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(report["runs"][k]["seed"], 3 + k);
    mean += report["runs"][k]["test_acc"].get<double>() / 3.0;
  }
  EXPECT_NEAR(report["test_acc_mean"].get<double>(), mean, 1e-12);
  EXPECT_NE(r.out.find("over 3 seeds"), std::string::npos) << r.out;
}

TEST(Train, FlagsOverrideConfigFile) {
  const auto out = scratch("precedence");
  fs::create_directories(out);
  const auto cfg = out / "settings.json";
  std::ofstream(cfg) << R"({"hidden": 4, "lambda-phi1": 0.75, "max-iters": 3})";
  const auto r = cli({"train", "--data", bundle().string(), "--out", (out / "run").string(), "--config",
                      cfg.string(), "--hidden", "5"});
  ASSERT_EQ(r.code, 0) << r.err;
  const json c = read_json(out / "run" / "report.json")["config"];
  EXPECT_EQ(c["hidden"], 5);
  EXPECT_EQ(c["lambda_phi1"], 0.75);
  EXPECT_EQ(c["max_iters"], 3);
}

TEST(Train, UsageErrors) {
  EXPECT_EQ(cli(train_args(scratch("u1"), {"--lambda-phi1", "3"})).code, 2);
  EXPECT_EQ(cli(train_args(scratch("u2"), {"--mode", "bogus"})).code, 2);
  EXPECT_EQ(cli(train_args(scratch("u3"), {"--dropout", "1"})).code, 2);
  EXPECT_EQ(cli({"train", "--data", bundle().string()}).code, 2);
  EXPECT_EQ(cli({}).code, 2);
  EXPECT_EQ(cli({"--help"}).code, 0);

  const auto dir = scratch("u4");
  fs::create_directories(dir);
  std::ofstream(dir / "bad.json") << R"({"hiden": 4})";
  EXPECT_EQ(cli(train_args(dir / "run", {"--config", (dir / "bad.json").string()})).code, 2);
  std::ofstream(dir / "typed.json") << R"({"hidden": "four"})";
  EXPECT_EQ(cli(train_args(dir / "run", {"--config", (dir / "typed.json").string()})).code, 2);
}

TEST(Train, LoadErrors) {
  const auto missing = scratch("nowhere");
  EXPECT_EQ(cli({"train", "--data", missing.string(), "--out", scratch("l1").string()}).code, 3);

  const auto copy = scratch("notrain");
  fs::copy(bundle(), copy);
  std::ofstream(copy / "splits.json") << R"({"train":[],"val":[0],"test":[1]})";
  EXPECT_EQ(cli({"train", "--data", copy.string(), "--out", scratch("l2").string()}).code, 3);
}

TEST(Train, TrainingAbortExitsFour) {
  const auto out = scratch("abort");
  const auto r = cli(train_args(out, {"--lr", "1e300"}));
  EXPECT_EQ(r.code, 4) << r.out << r.err;
  EXPECT_NE(r.err.find("not finite"), std::string::npos) << r.err;
}

TEST(Train, ExitCodesFromBinary) {
  EXPECT_EQ(subprocess("train --data " + bundle().string() + " --out " + scratch("b1").string() +
                       " --max-iters 2 --hidden 4"),
            0);
  EXPECT_EQ(subprocess("train --data " + bundle().string() + " --out " + scratch("b2").string() +
                       " --lambda-phi1 3"),
            2);
  EXPECT_EQ(subprocess("train --data " + scratch("b3").string() + " --out " + scratch("b4").string()), 3);
  EXPECT_EQ(subprocess("train --data " + bundle().string() + " --out " + scratch("b5").string() +
                       " --max-iters 3 --hidden 4 --lr 1e300"),
            4);
}

TEST(GenSbm, DeterministicAndReportsCounts) {
  const auto a = scratch("sbm_a"), b = scratch("sbm_b");
  const auto ra = cli({"gen-sbm", "--out", a.string(), "--seed", "4"});
  const auto rb = cli({"gen-sbm", "--out", b.string(), "--seed", "4"});
  ASSERT_EQ(ra.code, 0);
  EXPECT_EQ(json::parse(ra.out)["edges"], json::parse(rb.out)["edges"]);
  for (const char* f : cg3::graph::kBundleFiles) EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  const json summary = json::parse(ra.out);
  EXPECT_EQ(summary["nodes"], 400);
  EXPECT_EQ(cg3::graph::load_bundle(a).num_edges(), summary["edges"].get<std::size_t>());
}

TEST(GenSbm, CompleteBlocksHaveAnalyticEdgeCount) {
  const auto d = scratch("sbm_full");
  const auto r = cli({"gen-sbm", "--out", d.string(), "--blocks", "3", "--nodes-per-block", "5", "--p-in", "1",
                      "--p-out", "0", "--features", "3", "--labels-per-class", "1", "--val-per-class", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(json::parse(r.out)["edges"], 30);  // 3 * C(5,2)
}

TEST(GenSbm, BadSpecIsUsageError) {
  EXPECT_EQ(cli({"gen-sbm", "--out", scratch("sbm_bad").string(), "--p-in", "0.001"}).code, 2);
  EXPECT_EQ(cli({"gen-sbm", "--out", scratch("sbm_bad").string(), "--features", "2"}).code, 2);
}

TEST(Eval, ScoresPredictionFiles) {
  const auto ds = cg3::graph::load_bundle(bundle());
  const auto dir = scratch("eval");
  fs::create_directories(dir);

  std::ofstream(dir / "truth.csv") << cg3::cli::predictions_csv(ds.labels);
  auto r = cli({"eval", "--data", bundle().string(), "--predictions", (dir / "truth.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  json scores = json::parse(r.out);
  EXPECT_EQ(scores["train"], 1.0);
  EXPECT_EQ(scores["val"], 1.0);
  EXPECT_EQ(scores["test"], 1.0);

  // Flip the first test node's label.
  auto pred = ds.labels;
  const std::size_t victim = ds.test.front();
  pred[victim] = (pred[victim] + 1) % static_cast<int>(ds.num_classes);
  std::ofstream(dir / "one_wrong.csv") << cg3::cli::predictions_csv(pred);
  r = cli({"eval", "--data", bundle().string(), "--predictions", (dir / "one_wrong.csv").string()});
  scores = json::parse(r.out);
  EXPECT_DOUBLE_EQ(scores["test"].get<double>(), 1.0 - 1.0 / static_cast<double>(ds.test.size()));
  EXPECT_EQ(scores["val"], 1.0);
}

TEST(Eval, RejectsBadFiles) {
  const auto dir = scratch("eval_bad");
  fs::create_directories(dir);
  EXPECT_EQ(cli({"eval", "--data", bundle().string(), "--predictions", (dir / "none.csv").string()}).code, 3);
  std::ofstream(dir / "short.csv") << "node,label\n0,1\n1,0\n";
  EXPECT_EQ(cli({"eval", "--data", bundle().string(), "--predictions", (dir / "short.csv").string()}).code, 3);
  std::ofstream(dir / "range.csv") << cg3::cli::predictions_csv(std::vector<int>(46, 0));
  EXPECT_EQ(cli({"eval", "--data", bundle().string(), "--predictions", (dir / "range.csv").string()}).code, 3);
  std::ofstream(dir / "junk.csv") << "node,label\nzero,1\n";
  EXPECT_EQ(cli({"eval", "--data", bundle().string(), "--predictions", (dir / "junk.csv").string()}).code, 3);
}

TEST(Predictions, RoundTrip) {
  const auto dir = scratch("pred_rt");
  fs::create_directories(dir);
  const std::vector<int> pred{2, 0, 1, 1};
  std::ofstream(dir / "p.csv") << cg3::cli::predictions_csv(pred);
  EXPECT_EQ(cg3::cli::read_predictions(dir / "p.csv", 4), pred);
  std::ofstream(dir / "dup.csv") << "node,label\n0,1\n0,1\n1,0\n2,0\n";
  EXPECT_THROW(cg3::cli::read_predictions(dir / "dup.csv", 4), cg3::LoadError);
}
