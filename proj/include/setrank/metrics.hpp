#pragma once

// Ranking metrics over TREC runs: MRR@k, MRR, MAP and NDCG@k.
//
// Queries are taken from the run. A run query with no qrels entries at all
// is left out of the means; one with qrels but nothing relevant scores 0.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "setrank/retrieval.hpp"

namespace setrank {

struct EvalResult {
  std::string metric;
  std::vector<std::pair<std::string, double>> per_query;  // sorted by query id
  double mean = 0.0;

  std::size_t query_count() const { return per_query.size(); }
  double value(const std::string& qid) const {
    for (const auto& [q, v] : per_query)
      if (q == qid) return v;
    return std::numeric_limits<double>::quiet_NaN();
  }
};

// qid -> doc ids in rank order
using RankedLists = std::map<std::string, std::vector<std::string>>;

inline RankedLists ranked_lists(const std::vector<RunRecord>& run) {
  std::map<std::string, std::vector<const RunRecord*>> grouped;
  for (const auto& r : run) grouped[r.query_id].push_back(&r);
  RankedLists lists;
  for (auto& [qid, recs] : grouped) {
    std::stable_sort(recs.begin(), recs.end(),
                     [](const RunRecord* a, const RunRecord* b) { return a->rank < b->rank; });
    auto& out = lists[qid];
    for (const auto* r : recs) out.push_back(r->doc_id);
  }
  return lists;
}

namespace detail {

inline int grade_of(const std::map<std::string, int>& judged, const std::string& doc) {
  auto it = judged.find(doc);
  return it == judged.end() ? 0 : it->second;
}

template <typename PerQuery>
EvalResult evaluate_each(const std::string& name, const std::vector<RunRecord>& run,
                         const Qrels& qrels, PerQuery per_query) {
  EvalResult result{name, {}, 0.0};
  for (const auto& [qid, docs] : ranked_lists(run)) {
    auto it = qrels.find(qid);
    if (it == qrels.end()) continue;
    result.per_query.emplace_back(qid, per_query(docs, it->second));
  }
  double total = 0.0;
  for (const auto& [q, v] : result.per_query) total += v;
  if (!result.per_query.empty()) result.mean = total / static_cast<double>(result.per_query.size());
  return result;
}

}  // namespace detail

inline double reciprocal_rank(const std::vector<std::string>& docs,
                              const std::map<std::string, int>& judged, std::size_t k,
                              int rel_threshold) {
  for (std::size_t i = 0; i < docs.size() && i < k; ++i) {
    if (detail::grade_of(judged, docs[i]) >= rel_threshold) return 1.0 / static_cast<double>(i + 1);
  }
  return 0.0;
}

inline double average_precision(const std::vector<std::string>& docs,
                                const std::map<std::string, int>& judged, int rel_threshold) {
  std::size_t total_relevant = 0;
  for (const auto& [doc, grade] : judged)
    if (grade >= rel_threshold) ++total_relevant;
  if (total_relevant == 0) return 0.0;
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    if (detail::grade_of(judged, docs[i]) >= rel_threshold) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
  }
  return sum / static_cast<double>(total_relevant);
}

// Gain 2^grade - 1, discount log2(rank + 1).
inline double ndcg(const std::vector<std::string>& docs, const std::map<std::string, int>& judged,
                   std::size_t k) {
  auto gain = [](int grade) { return std::pow(2.0, grade) - 1.0; };
  double dcg = 0.0;
  for (std::size_t i = 0; i < docs.size() && i < k; ++i)
    dcg += gain(detail::grade_of(judged, docs[i])) / std::log2(static_cast<double>(i + 2));
  std::vector<int> grades;
  for (const auto& [doc, grade] : judged) grades.push_back(grade);
  std::sort(grades.rbegin(), grades.rend());
  double ideal = 0.0;
  for (std::size_t i = 0; i < grades.size() && i < k; ++i)
    ideal += gain(grades[i]) / std::log2(static_cast<double>(i + 2));
  return ideal > 0.0 ? dcg / ideal : 0.0;
}

inline EvalResult mrr_at_k(const std::vector<RunRecord>& run, const Qrels& qrels, std::size_t k = 10,
                           int rel_threshold = 1) {
  return detail::evaluate_each("mrr@" + std::to_string(k), run, qrels,
                               [&](const auto& docs, const auto& judged) {
                                 return reciprocal_rank(docs, judged, k, rel_threshold);
                               });
}

inline EvalResult mrr(const std::vector<RunRecord>& run, const Qrels& qrels, int rel_threshold = 1) {
  return detail::evaluate_each("mrr", run, qrels, [&](const auto& docs, const auto& judged) {
    return reciprocal_rank(docs, judged, docs.size(), rel_threshold);
  });
}

inline EvalResult mean_average_precision(const std::vector<RunRecord>& run, const Qrels& qrels,
                                         int rel_threshold = 1) {
  return detail::evaluate_each("map", run, qrels, [&](const auto& docs, const auto& judged) {
    return average_precision(docs, judged, rel_threshold);
  });
}

inline EvalResult ndcg_at_k(const std::vector<RunRecord>& run, const Qrels& qrels, std::size_t k = 10) {
  return detail::evaluate_each("ndcg@" + std::to_string(k), run, qrels,
                               [&](const auto& docs, const auto& judged) { return ndcg(docs, judged, k); });
}

inline const std::vector<std::string>& known_metrics() {
  static const std::vector<std::string> names = {"mrr@10", "mrr", "map", "ndcg@10"};
  return names;
}

inline EvalResult evaluate_metric(const std::string& name, const std::vector<RunRecord>& run,
                                  const Qrels& qrels, int rel_threshold) {
  if (name == "mrr@10") return mrr_at_k(run, qrels, 10, rel_threshold);
  if (name == "mrr") return mrr(run, qrels, rel_threshold);
  if (name == "map") return mean_average_precision(run, qrels, rel_threshold);
  if (name == "ndcg@10") return ndcg_at_k(run, qrels, 10);
  throw std::invalid_argument("unknown metric '" + name + "'");
}

// CSV: "query_id,<metric>,..." one row per query, then an "all" row of means.
inline void write_eval_csv(std::ostream& os, const std::vector<EvalResult>& results) {
  os << "query_id";
  for (const auto& r : results) os << ',' << r.metric;
  os << '\n';
  if (results.empty()) return;
  char buf[32];
  for (std::size_t i = 0; i < results.front().per_query.size(); ++i) {
    os << results.front().per_query[i].first;
    for (const auto& r : results) {
      std::snprintf(buf, sizeof(buf), "%.6f", r.per_query[i].second);
      os << ',' << buf;
    }
    os << '\n';
  }
  os << "all";
  for (const auto& r : results) {
    std::snprintf(buf, sizeof(buf), "%.6f", r.mean);
    os << ',' << buf;
  }
  os << '\n';
}

}  // namespace setrank
