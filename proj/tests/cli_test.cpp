#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "setrank/analysis.hpp"
#include "setrank/fusion.hpp"
#include "setrank/retrieval.hpp"
#include "setrank/synthgen.hpp"

namespace fs = std::filesystem;
using namespace setrank;

namespace {

struct Result {
  int code = 0;
  std::string output;
};

Result run_cli(const std::string& args) {
  const auto log = (fs::temp_directory_path() / "setrank_cli_test.log").string();
  const std::string cmd = std::string(SETRANK_CLI) + " " + args + " > " + log + " 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream is(log);
  std::stringstream ss;
  ss << is.rdbuf();
  return {WEXITSTATUS(status), ss.str()};
}

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  os << text;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("setrank_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  // Synthetic data plus a tiny trained model.
  std::string tiny_model(const std::string& data) {
    auto r = run_cli("synth generate --task comparative --queries 6 --n 4 --seed 3 --out-dir " + data);
    EXPECT_EQ(r.code, 0) << r.output;
    auto model = path("model");
    r = run_cli("train --data-dir " + data + " --n 4 --steps 3 --layers 2 --global-start 2 --hidden 16 " +
                "--heads-local 2 --heads-global 2 --ffn 32 --max-seq-len 24 --init-std 0.1 --out " + model);
    EXPECT_EQ(r.code, 0) << r.output;
    return model;
  }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, EvalPerfectRunGivesOne) {
  write_file(path("run.trec"), "q1 Q0 a 1 3.0 t\nq1 Q0 b 2 2.0 t\nq2 Q0 c 1 1.0 t\n");
  write_file(path("qrels.txt"), "q1 0 a 1\nq2 0 c 2\n");
  auto r = run_cli("eval --run " + path("run.trec") + " --qrels " + path("qrels.txt") + " --metrics mrr@10,map --out-csv " +
                   path("eval.csv"));
  ASSERT_EQ(r.code, 0) << r.output;
  auto csv = read_file(path("eval.csv"));
  EXPECT_NE(csv.find("all,1.000000,1.000000\n"), std::string::npos) << csv;
}

TEST_F(Cli, ConfigFileAndFlagOverride) {
  write_file(path("run.trec"), "q1 Q0 a 1 3.0 t\nq1 Q0 b 2 2.0 t\n");
  write_file(path("qrels.txt"), "q1 0 b 1\n");
  write_file(path("eval.cfg"), "run = " + path("run.trec") + "\nqrels = " + path("qrels.txt") +
                                   "\nmetrics = mrr@10\nout_csv = " + path("a.csv") + "\n");
  ASSERT_EQ(run_cli("eval --config " + path("eval.cfg")).code, 0);
  EXPECT_NE(read_file(path("a.csv")).find("all,0.500000"), std::string::npos);
  ASSERT_EQ(run_cli("eval --config " + path("eval.cfg") + " --metrics map --out-csv " + path("b.csv")).code, 0);
  EXPECT_EQ(read_file(path("b.csv")).substr(0, 13), "query_id,map\n");
  write_file(path("bad.cfg"), "bogus = 1\n");
  auto r = run_cli("eval --config " + path("bad.cfg"));
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.output.find("bogus"), std::string::npos);
}

TEST_F(Cli, ErrorsNameTheFailingInput) {
  auto r = run_cli("eval --run " + path("missing.trec") + " --qrels " + path("missing.txt"));
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.output.find("missing.trec"), std::string::npos) << r.output;
  write_file(path("bad.trec"), "q1 Q0 a one 3.0 t\n");
  write_file(path("qrels.txt"), "q1 0 a 1\n");
  r = run_cli("eval --run " + path("bad.trec") + " --qrels " + path("qrels.txt"));
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.output.find("bad.trec:1"), std::string::npos) << r.output;
  EXPECT_NE(run_cli("eval --no-such-flag").code, 0);
  EXPECT_NE(run_cli("rerank --mode sideways").code, 0);
}

TEST_F(Cli, SynthIsDeterministicAndSplits) {
  ASSERT_EQ(run_cli("synth generate --queries 5 --test-queries 2 --n 4 --seed 9 --out-dir " + path("a")).code, 0);
  ASSERT_EQ(run_cli("synth generate --queries 5 --test-queries 2 --n 4 --seed 9 --out-dir " + path("b")).code, 0);
  for (const auto* f : {"train/corpus.tsv", "train/run.trec", "test/qrels.txt", "test/queries.tsv"}) {
    EXPECT_EQ(read_file(path("a/") + f), read_file(path("b/") + f)) << f;
  }
  EXPECT_EQ(load_queries(path("a/train/queries.tsv")).size(), 5u);
  EXPECT_EQ(load_queries(path("a/test/queries.tsv")).size(), 2u);
}

TEST_F(Cli, IndexBuildSearchRoundTrip) {
  write_file(path("corpus.tsv"), "d1\tred apple\tred fruit\nd2\tcar\tfast red car\nd3\tsky\tblue sky\n");
  write_file(path("queries.tsv"), "q1\tred car\n");
  ASSERT_EQ(run_cli("index build --corpus " + path("corpus.tsv") + " --out-index " + path("index.json")).code, 0);
  ASSERT_EQ(run_cli("index search --index " + path("index.json") + " --queries " + path("queries.tsv") +
                    " --k 2 --out-run " + path("a.trec"))
                .code,
            0);
  ASSERT_EQ(run_cli("index search --corpus " + path("corpus.tsv") + " --queries " + path("queries.tsv") +
                    " --k 2 --out-run " + path("b.trec"))
                .code,
            0);
  EXPECT_EQ(read_file(path("a.trec")), read_file(path("b.trec")));
  auto run = load_run(path("a.trec"));
  ASSERT_EQ(run.size(), 2u);
  EXPECT_EQ(run[0].doc_id, "d2");
}

TEST_F(Cli, NoGlobalScoresIgnorePartition) {
  auto data = path("data");
  auto model = tiny_model(data);
  // same documents, split into two sets per query instead of one
  auto run = load_run(data + "/run.trec");
  std::vector<RunRecord> split;
  std::vector<Query> queries;
  std::map<std::string, std::string> text;
  for (const auto& q : load_queries(data + "/queries.tsv")) text[q.id] = q.text;
  std::set<std::string> seen;
  for (const auto& r : run) {
    auto copy = r;
    copy.query_id = r.query_id + (r.rank % 2 ? "_odd" : "_even");
    split.push_back(copy);
    if (seen.insert(copy.query_id).second) queries.push_back({copy.query_id, text[r.query_id]});
  }
  save_run(path("split.trec"), split);
  save_queries(path("split_queries.tsv"), queries);
  ASSERT_EQ(run_cli("rerank --checkpoint " + model + " --data-dir " + data + " --n 4 --mode no_global --out-run " +
                    path("whole.trec"))
                .code,
            0);
  auto r = run_cli("--threads 2 rerank --checkpoint " + model + " --corpus " + data + "/corpus.tsv --queries " +
                   path("split_queries.tsv") + " --run-in " + path("split.trec") +
                   " --n 4 --mode no_global --out-run " + path("parts.trec"));
  ASSERT_EQ(r.code, 0) << r.output;
  std::map<std::pair<std::string, std::string>, double> whole, parts;
  for (const auto& x : load_run(path("whole.trec"))) whole[{x.query_id, x.doc_id}] = x.score;
  for (const auto& x : load_run(path("parts.trec"))) parts[{x.query_id.substr(0, x.query_id.find('_')), x.doc_id}] = x.score;
  ASSERT_EQ(whole.size(), parts.size());
  for (const auto& [key, score] : whole) EXPECT_EQ(score, parts.at(key));
}

TEST_F(Cli, RerankAttentionAnalysisAndPlots) {
  auto data = path("data");
  auto model = tiny_model(data);
  auto r = run_cli("rerank --checkpoint " + model + " --data-dir " + data + " --n 4 --out-run " + path("rr.trec") +
                   " --dump-attention " + path("att.csv"));
  ASSERT_EQ(r.code, 0) << r.output;
  std::ifstream is(path("att.csv"));
  auto records = read_attention_csv(is);
  EXPECT_EQ(records.size(), 6u * 4u * 3u);
  ASSERT_EQ(run_cli("analyze attention --in " + path("att.csv") + " --out-csv " + path("summary.csv")).code, 0);
  ASSERT_EQ(run_cli("analyze scores --run " + path("rr.trec") + " --qrels " + data + "/qrels.txt --out-csv " +
                    path("scores.csv") + " --out-summary " + path("grades.csv"))
                .code,
            0);
  ASSERT_EQ(run_cli("plot --in " + path("summary.csv") + " --out " + path("heat.svg")).code, 0);
  ASSERT_EQ(run_cli("plot --in " + path("scores.csv") + " --out " + path("hist.svg")).code, 0);
  EXPECT_EQ(read_file(path("heat.svg")).rfind("<svg", 0), 0u);
  EXPECT_EQ(read_file(path("hist.svg")).rfind("<svg", 0), 0u);
  EXPECT_NE(run_cli("plot --in " + path("rr.trec") + " --out " + path("x.svg")).code, 0);
  EXPECT_EQ(run_cli("train --data-dir " + data + " --n 4 --steps 2 --phase feature --init-checkpoint " + model +
                    " --out " + path("model2"))
                .code,
            0);
  EXPECT_TRUE(fs::exists(path("model2/train_log.csv")));
}

TEST_F(Cli, FuseFitApply) {
  write_file(path("a.trec"), "q1 Q0 x 1 3.0 t\nq1 Q0 y 2 2.0 t\nq2 Q0 z 1 5.0 t\nq2 Q0 w 2 1.0 t\n");
  write_file(path("b.trec"), "q1 Q0 y 1 9.0 t\nq1 Q0 x 2 1.0 t\nq2 Q0 w 1 4.0 t\nq2 Q0 z 2 3.0 t\n");
  write_file(path("qrels.txt"), "q1 0 y 1\nq2 0 w 1\n");
  ASSERT_EQ(run_cli("fuse fit --runs " + path("a.trec") + " " + path("b.trec") + " --qrels " + path("qrels.txt") +
                    " --out-model " + path("fusion.txt"))
                .code,
            0);
  auto model = FusionModel::load(path("fusion.txt"));
  EXPECT_EQ(model.feature_names, (std::vector<std::string>{"a", "b"}));
  ASSERT_EQ(run_cli("fuse apply --model " + path("fusion.txt") + " --runs " + path("a.trec") + " " + path("b.trec") +
                    " --out-run " + path("fused.trec"))
                .code,
            0);
  auto r = run_cli("eval --run " + path("fused.trec") + " --qrels " + path("qrels.txt"));
  EXPECT_NE(r.output.find("all,1.000000"), std::string::npos) << r.output;
}
