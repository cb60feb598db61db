#include <gtest/gtest.h>

#include <cmath>

#include <filesystem>
#include <map>
#include <set>

#include "setrank/metrics.hpp"
#include "setrank/synthgen.hpp"

using namespace setrank;

namespace {

SynthSpec small_spec(SynthTask task) {
  SynthSpec s;
  s.task = task;
  s.num_queries = 30;
  s.candidates = 6;
  s.seed = 3;
  return s;
}

std::map<std::string, std::vector<int>> grades_by_query(const SynthData& d) {
  std::map<std::string, std::string> text;
  for (const auto& doc : d.corpus) text[doc.id] = doc.text;
  std::map<std::string, std::vector<int>> out;
  for (const auto& r : d.run) out[r.query_id].push_back(magnitude_grade(text[r.doc_id]));
  return out;
}

}  // namespace

TEST(Synth, DeterministicGivenSeed) {
  auto spec = small_spec(SynthTask::comparative);
  auto a = generate(spec), b = generate(spec);
  EXPECT_EQ(a.corpus, b.corpus);
  EXPECT_EQ(a.run, b.run);
  spec.seed = 4;
  EXPECT_NE(generate(spec).corpus, a.corpus);
}

TEST(Synth, ComparativeRelevantHoldsTopGrade) {
  auto spec = small_spec(SynthTask::comparative);
  spec.distractor_strength = 0.5;
  auto d = generate(spec);
  auto qrels = index_qrels(d.qrels);
  std::map<std::string, std::string> text;
  for (const auto& doc : d.corpus) text[doc.id] = doc.text;
  for (const auto& [qid, judged] : qrels) {
    int top = -1;
    for (const auto& [doc, g] : judged) top = std::max(top, magnitude_grade(text[doc]));
    std::size_t relevant = 0;
    for (const auto& [doc, g] : judged) {
      const bool is_top = magnitude_grade(text[doc]) == top;
      EXPECT_EQ(g == 1, is_top) << qid << " " << doc;
      relevant += g;
    }
    EXPECT_EQ(relevant, spec.num_relevant);
  }
}

TEST(Synth, SameGradeWordsCanBeRelevantOrNot) {
  // A grade word alone does not decide relevance across queries.
  auto spec = small_spec(SynthTask::comparative);
  spec.num_queries = 200;
  auto d = generate(spec);
  std::map<std::string, std::string> text;
  for (const auto& doc : d.corpus) text[doc.id] = doc.text;
  std::map<int, std::set<int>> labels_per_grade;
  for (const auto& q : d.qrels) labels_per_grade[magnitude_grade(text[q.doc_id])].insert(q.grade);
  std::size_t ambiguous = 0;
  for (const auto& [g, labels] : labels_per_grade) ambiguous += labels.size() == 2;
  EXPECT_GE(ambiguous, 8u);
}

TEST(Synth, PointwiseRelevantCarriesAnswer) {
  auto spec = small_spec(SynthTask::pointwise);
  auto d = generate(spec);
  std::map<std::string, std::string> query_text;
  for (const auto& q : d.queries) query_text[q.id] = q.text;
  std::map<std::string, std::string> text;
  for (const auto& doc : d.corpus) text[doc.id] = doc.text;
  for (const auto& q : d.qrels) {
    const auto answer = index_terms(query_text[q.query_id]).back();
    auto words = index_terms(text[q.doc_id]);
    const bool has = std::find(words.begin(), words.end(), answer) != words.end();
    if (q.grade) EXPECT_TRUE(has);
    else EXPECT_FALSE(has);
  }
}

TEST(Synth, FeatureSignalSeparatesScores) {
  auto spec = small_spec(SynthTask::pointwise);
  spec.hard_negatives = 1;
  spec.feature_signal = 1.0;
  auto d = generate(spec);
  auto qrels = index_qrels(d.qrels);
  for (const auto& r : d.run) {
    EXPECT_GE(r.score, 165.0);
    EXPECT_LE(r.score, 190.0);
    if (qrels[r.query_id][r.doc_id]) EXPECT_GE(r.score, 180.0);
  }
}

TEST(Synth, RunRanksFollowScores) {
  auto d = generate(small_spec(SynthTask::comparative));
  for (std::size_t i = 1; i < d.run.size(); ++i) {
    if (d.run[i].query_id != d.run[i - 1].query_id) continue;
    EXPECT_EQ(d.run[i].rank, d.run[i - 1].rank + 1);
    EXPECT_LE(d.run[i].score, d.run[i - 1].score);
  }
}

TEST(Synth, SplitPartitionsQueries) {
  auto d = generate(small_spec(SynthTask::comparative));
  auto [a, b] = split_queries(d, 20);
  EXPECT_EQ(a.queries.size(), 20u);
  EXPECT_EQ(b.queries.size(), 10u);
  EXPECT_EQ(a.run.size() + b.run.size(), d.run.size());
  EXPECT_EQ(a.corpus.size() + b.corpus.size(), d.corpus.size());
}

TEST(Synth, SaveLoadRoundTrip) {
  auto d = generate(small_spec(SynthTask::pointwise));
  auto dir = (std::filesystem::temp_directory_path() / "setrank_synth_test").string();
  save_synth(dir, d);
  auto back = load_synth(dir);
  EXPECT_EQ(back.corpus, d.corpus);
  EXPECT_EQ(back.queries, d.queries);
  EXPECT_EQ(back.qrels, d.qrels);
  EXPECT_EQ(back.run, d.run);
  std::filesystem::remove_all(dir);
}

TEST(Synth, InvalidSpecRejected) {
  auto s = small_spec(SynthTask::comparative);
  s.candidates = 20;
  EXPECT_THROW(generate(s), std::invalid_argument);
  s = small_spec(SynthTask::comparative);
  s.num_relevant = s.candidates;
  EXPECT_THROW(generate(s), std::invalid_argument);
  EXPECT_THROW(parse_task("ranking"), std::invalid_argument);
}

// Independent check of the pointwise ceiling by brute force over every
// grade assignment at tiny size: n = 3, scale length 4, one relevant.
TEST(Synth, PointwiseCeilingMatchesBruteForce) {
  for (double s : {1.0, 0.5}) {
    SynthSpec spec;
    spec.candidates = 4;
    spec.scale_length = 6;
    spec.distractor_strength = s;
    const int L = 6, n = 4;
    // enumerate (base, distractor grades) with probabilities
    struct Config {
      std::vector<int> grades;  // grades[0] relevant
      double p;
    };
    std::vector<Config> configs;
    for (int base = 0; base + 1 < L; ++base) {
      const double pb = 1.0 / (L - 1);
      auto pg = [&](int g) { return (g == base ? s : 0.0) + (1 - s) / (base + 1); };
      for (int g1 = 0; g1 <= base; ++g1)
        for (int g2 = 0; g2 <= base; ++g2)
          for (int g3 = 0; g3 <= base; ++g3) {
            const double p = pb * pg(g1) * pg(g2) * pg(g3);
            if (p > 0) configs.push_back({{base + 1, g1, g2, g3}, p});
          }
    }
    // P(relevant | grade) from the joint distribution
    std::map<int, double> rel, all;
    for (const auto& c : configs)
      for (int i = 0; i < n; ++i) {
        all[c.grades[i]] += c.p;
        if (i == 0) rel[c.grades[i]] += c.p;
      }
    double expected = 0.0;
    for (const auto& c : configs) {
      auto prob = [&](int g) { return rel[g] / all[g]; };
      const double pr = prob(c.grades[0]);
      int above = 0, tied = 0;
      for (int i = 1; i < n; ++i) {
        if (std::abs(prob(c.grades[i]) - pr) <= 1e-12) ++tied;
        else if (prob(c.grades[i]) > pr) ++above;
      }
      double rr = 0.0;  // uniform tie-break among the tied block
      for (int t = 0; t <= tied; ++t) rr += 1.0 / (above + t + 1);
      expected += c.p * rr / (tied + 1);
    }
    EXPECT_NEAR(comparative_pointwise_ceiling(spec), expected, 1e-12) << "strength " << s;
    // only distractors packed one grade below the top defeat a pointwise reader
    if (s == 1.0) EXPECT_LT(expected, 1.0);
    else EXPECT_NEAR(expected, 1.0, 1e-12);
  }
}

TEST(Synth, DeskCeilingIsWellBelowOne) {
  SynthSpec spec;
  const double c = comparative_pointwise_ceiling(spec);
  EXPECT_GT(c, 0.3);
  EXPECT_LT(c, 0.6);
}
