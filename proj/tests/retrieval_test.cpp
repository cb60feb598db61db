#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "setrank/retrieval.hpp"

using namespace setrank;

namespace {

std::vector<Document> random_corpus(std::mt19937_64& rng, std::size_t docs, std::size_t vocab) {
  std::uniform_int_distribution<std::size_t> word(0, vocab - 1), len(0, 12);
  std::vector<Document> out;
  for (std::size_t d = 0; d < docs; ++d) {
    std::string text;
    const auto n = len(rng);
    for (std::size_t i = 0; i < n; ++i) text += "w" + std::to_string(word(rng)) + " ";
    out.push_back({"doc" + std::to_string(d), d % 4 ? "w" + std::to_string(word(rng)) : "", text});
  }
  return out;
}

// BM25 by scanning every document, no postings involved.
std::vector<SearchHit> scan_search(const std::vector<Document>& corpus, const std::string& query, std::size_t k,
                                   BM25Params params) {
  auto sorted = corpus;
  std::sort(sorted.begin(), sorted.end(), [](const Document& a, const Document& b) { return a.id < b.id; });
  std::vector<std::vector<std::string>> terms;
  double total = 0.0;
  for (const auto& d : sorted) {
    terms.push_back(InvertedIndex::document_terms(d));
    total += static_cast<double>(terms.back().size());
  }
  const double n = static_cast<double>(sorted.size()), avg = total / n;
  auto qterms = index_terms(query);
  std::set<std::string> distinct(qterms.begin(), qterms.end());
  std::vector<double> scores(sorted.size(), 0.0);
  for (const auto& t : distinct) {
    double df = 0.0;
    for (const auto& dt : terms) df += std::count(dt.begin(), dt.end(), t) > 0 ? 1.0 : 0.0;
    if (df == 0.0) continue;
    const double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
    for (std::size_t d = 0; d < sorted.size(); ++d) {
      const double tf = static_cast<double>(std::count(terms[d].begin(), terms[d].end(), t));
      if (tf == 0.0) continue;
      const double norm = params.k1 * (1.0 - params.b + params.b * static_cast<double>(terms[d].size()) / avg);
      scores[d] += idf * tf * (params.k1 + 1.0) / (tf + norm);
    }
  }
  std::vector<std::size_t> order(sorted.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<SearchHit> hits;
  for (std::size_t i = 0; i < std::min(k, order.size()); ++i) hits.push_back({sorted[order[i]].id, scores[order[i]]});
  return hits;
}

}  // namespace

TEST(BM25, MatchesExhaustiveScan) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    auto corpus = random_corpus(rng, 5 + trial * 7, 30);
    auto index = InvertedIndex::build(corpus);
    for (int q = 0; q < 5; ++q) {
      std::string query = "w" + std::to_string(q) + " w" + std::to_string(q * 3 % 30) + " w" + std::to_string(q);
      auto got = index.search(query, 10);
      auto want = scan_search(corpus, query, 10, {});
      ASSERT_EQ(got.size(), want.size());
      for (std::size_t i = 0; i < got.size(); ++i) {
        EXPECT_EQ(got[i].doc_id, want[i].doc_id);
        EXPECT_EQ(got[i].score, want[i].score);
      }
    }
  }
}

TEST(BM25, IdfNonNegativeEvenForUbiquitousTerms) {
  std::vector<Document> corpus = {{"a", "", "x y"}, {"b", "", "x"}, {"c", "", "x z"}};
  auto index = InvertedIndex::build(corpus);
  EXPECT_GT(index.idf("x"), 0.0);
  EXPECT_GT(index.idf("y"), index.idf("x"));
}

TEST(BM25, NoMatchesStillFillsListByDocId) {
  std::vector<Document> corpus = {{"b", "", "x"}, {"a", "", "y"}};
  auto hits = InvertedIndex::build(corpus).search("nothing", 5);
  ASSERT_EQ(hits.size(), 2u);
  EXPECT_EQ(hits[0].doc_id, "a");
  EXPECT_EQ(hits[0].score, 0.0);
}

TEST(BM25, DuplicateDocIdRejected) {
  std::vector<Document> corpus = {{"a", "", "x"}, {"a", "", "y"}};
  EXPECT_THROW(InvertedIndex::build(corpus), std::invalid_argument);
}

TEST(BM25, ZeroKRejected) {
  auto index = InvertedIndex::build({{"a", "", "x"}});
  EXPECT_THROW(index.search("x", 0), std::invalid_argument);
}

TEST(BM25, IndexSaveLoadRoundTrip) {
  std::mt19937_64 rng(3);
  auto index = InvertedIndex::build(random_corpus(rng, 40, 20));
  auto dir = std::filesystem::temp_directory_path() / "setrank_index_test";
  std::filesystem::create_directories(dir);
  index.save((dir / "i.json").string());
  auto back = InvertedIndex::load((dir / "i.json").string());
  EXPECT_TRUE(back == index);
  std::filesystem::remove_all(dir);
}

TEST(RunFile, RoundTripByteIdentical) {
  std::vector<RunRecord> run = {{"q1", "d1", 1, 12.5, "bm25"}, {"q1", "d2", 2, -0.000001, "bm25"},
                                {"q2", "d9", 1, 3.0, "x"}};
  std::ostringstream a;
  write_run(a, run);
  std::istringstream in(a.str());
  auto back = read_run(in);
  std::ostringstream b;
  write_run(b, back);
  EXPECT_EQ(a.str(), b.str());
}

TEST(RunFile, WrongColumnCountNamesLine) {
  std::istringstream in("q1 Q0 d1 1 2.0 tag\nq1 Q0 d2 2 1.0\n");
  try {
    read_run(in, "run.txt");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(RunFile, BadNumberRejected) {
  std::istringstream in("q1 Q0 d1 one 2.0 tag\n");
  EXPECT_THROW(read_run(in), ParseError);
}

TEST(Qrels, RoundTripByteIdentical) {
  std::vector<QrelRecord> q = {{"q1", "d1", 1}, {"q1", "d2", 0}, {"q2", "d3", 3}};
  std::ostringstream a;
  write_qrels(a, q);
  std::istringstream in(a.str());
  auto back = read_qrels(in);
  EXPECT_EQ(back, q);
  std::ostringstream b;
  write_qrels(b, back);
  EXPECT_EQ(a.str(), b.str());
}

TEST(Corpus, TsvAndJsonl) {
  std::istringstream tsv("d1\tTitle\tsome text\nd2\t\tother\n");
  auto docs = read_corpus_tsv(tsv);
  ASSERT_EQ(docs.size(), 2u);
  EXPECT_EQ(docs[1].title, "");
  std::istringstream jsonl("{\"id\": \"d1\", \"title\": \"T\", \"text\": \"x\"}\n{\"id\": 7, \"text\": \"y\"}\n");
  auto j = read_corpus_jsonl(jsonl);
  ASSERT_EQ(j.size(), 2u);
  EXPECT_EQ(j[1].id, "7");
  std::istringstream bad("{\"id\": \"d1\"}\n");
  EXPECT_THROW(read_corpus_jsonl(bad), ParseError);
}

TEST(CandidateSets, TopNWithFixedFeature) {
  std::vector<Document> corpus = {{"a", "", "x"}, {"b", "", "y"}, {"c", "", "z"}};
  std::vector<Query> queries = {{"q", "x"}};
  std::vector<RunRecord> run = {{"q", "b", 2, 177.5, "t"}, {"q", "a", 1, 190.0, "t"}, {"q", "c", 3, 160.0, "t"}};
  auto sets = assemble_candidate_sets(run, corpus, queries, 2);
  ASSERT_EQ(sets.size(), 1u);
  ASSERT_EQ(sets[0].size(), 2u);
  EXPECT_EQ(sets[0].candidates[0].doc_id, "a");
  EXPECT_EQ(sets[0].candidates[0].feature, 100);
  EXPECT_EQ(sets[0].candidates[1].feature, 50);
}

TEST(CandidateSets, PerQueryMinMax) {
  std::vector<Document> corpus = {{"a", "", "x"}, {"b", "", "y"}, {"c", "", "z"}};
  std::vector<Query> queries = {{"q", "x"}};
  std::vector<RunRecord> run = {{"q", "a", 1, 10.0, "t"}, {"q", "b", 2, 5.0, "t"}, {"q", "c", 3, 0.0, "t"}};
  FeaturePolicy policy;
  policy.per_query = true;
  auto sets = assemble_candidate_sets(run, corpus, queries, 3, policy);
  EXPECT_EQ(sets[0].candidates[0].feature, 100);
  EXPECT_EQ(sets[0].candidates[1].feature, 50);
  EXPECT_EQ(sets[0].candidates[2].feature, 0);
}

TEST(CandidateSets, MissingDocumentNamed) {
  std::vector<Query> queries = {{"q", "x"}};
  std::vector<RunRecord> run = {{"q", "ghost", 1, 1.0, "t"}};
  try {
    assemble_candidate_sets(run, {}, queries, 5);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("ghost"), std::string::npos);
  }
}
