#pragma once

// Post-hoc statistics over the set-attention outputs and the score
// distributions of a re-ranked run.
//
// Similarity between two candidates at a layer is the cosine of their
// set-attention outputs. Per query, similarities are averaged by grade pair
// (self-pairs excluded), then min-max normalized across all queries and
// grade pairs of the same layer.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "setrank/model.hpp"
#include "setrank/retrieval.hpp"

namespace setrank {

class UndefinedSimilarity : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

inline double attention_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("similarity: vectors of length " + std::to_string(a.size()) +
                                                 " and " + std::to_string(b.size()));
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw UndefinedSimilarity("similarity of a zero vector is undefined");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

struct AttentionRecord {
  std::string query_id;
  std::size_t layer = 0;
  std::size_t i = 0, k = 0;
  int label_i = 0, label_k = 0;
  double similarity = 0.0;
};

// One record per ordered pair i != k at every global layer of the trace.
inline std::vector<AttentionRecord> attention_records(const std::string& query_id,
                                                      const std::vector<GlobalLayerTrace>& trace,
                                                      const std::vector<int>& labels) {
  std::vector<AttentionRecord> out;
  for (const auto& layer : trace) {
    const auto& h = layer.update;
    if (h.size() != labels.size()) {
      throw std::invalid_argument("query " + query_id + ": " + std::to_string(labels.size()) + " labels for " +
                                  std::to_string(h.size()) + " candidates");
    }
    for (std::size_t i = 0; i < h.size(); ++i) {
      for (std::size_t k = 0; k < h.size(); ++k) {
        if (i == k) continue;
        out.push_back({query_id, layer.layer, i, k, labels[i], labels[k], attention_similarity(h[i], h[k])});
      }
    }
  }
  return out;
}

// Mean similarity over pairs labelled (r1, r2) for a query and layer;
// nullopt when no pair qualifies.
inline std::optional<double> label_pair_mean(const std::vector<AttentionRecord>& records,
                                             const std::string& query_id, std::size_t layer, int r1, int r2) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& r : records) {
    if (r.query_id == query_id && r.layer == layer && r.label_i == r1 && r.label_k == r2) {
      sum += r.similarity;
      ++count;
    }
  }
  if (count == 0) return std::nullopt;
  return sum / static_cast<double>(count);
}

inline std::vector<double> normalize_layer(const std::vector<double>& values) {
  if (values.empty()) return {};
  auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double min = *lo, max = *hi;
  std::vector<double> out;
  for (double v : values) out.push_back(max > min ? (v - min) / (max - min) : 0.5);
  return out;
}

struct LabelPairValue {
  std::string query_id;
  std::size_t layer = 0;
  int r1 = 0, r2 = 0;
  double mean = 0.0;
  double normalized = 0.0;
};

struct LabelPairSummary {
  std::size_t layer = 0;
  int r1 = 0, r2 = 0;
  double mean = 0.0;        // averaged over queries
  double normalized = 0.0;  // averaged over queries
  std::size_t queries = 0;
};

// Per-query grade-pair means, normalized within each layer.
inline std::vector<LabelPairValue> label_pair_values(const std::vector<AttentionRecord>& records) {
  std::map<std::tuple<std::size_t, std::string, int, int>, std::pair<double, std::size_t>> acc;
  for (const auto& r : records) {
    auto& a = acc[{r.layer, r.query_id, r.label_i, r.label_k}];
    a.first += r.similarity;
    ++a.second;
  }
  std::vector<LabelPairValue> out;
  for (const auto& [key, a] : acc) {
    const auto& [layer, qid, r1, r2] = key;
    out.push_back({qid, layer, r1, r2, a.first / static_cast<double>(a.second), 0.0});
  }
  std::map<std::size_t, std::vector<std::size_t>> by_layer;
  for (std::size_t i = 0; i < out.size(); ++i) by_layer[out[i].layer].push_back(i);
  for (const auto& [layer, idx] : by_layer) {
    std::vector<double> raw;
    for (auto i : idx) raw.push_back(out[i].mean);
    auto norm = normalize_layer(raw);
    for (std::size_t j = 0; j < idx.size(); ++j) out[idx[j]].normalized = norm[j];
  }
  return out;
}

inline std::vector<LabelPairSummary> summarize_label_pairs(const std::vector<LabelPairValue>& values) {
  std::map<std::tuple<std::size_t, int, int>, LabelPairSummary> acc;
  for (const auto& v : values) {
    auto& s = acc[{v.layer, v.r1, v.r2}];
    s.layer = v.layer;
    s.r1 = v.r1;
    s.r2 = v.r2;
    s.mean += v.mean;
    s.normalized += v.normalized;
    ++s.queries;
  }
  std::vector<LabelPairSummary> out;
  for (auto& [key, s] : acc) {
    s.mean /= static_cast<double>(s.queries);
    s.normalized /= static_cast<double>(s.queries);
    out.push_back(s);
  }
  return out;
}

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> f;
  std::size_t start = 0;
  for (;;) {
    auto comma = line.find(',', start);
    f.push_back(line.substr(start, comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return f;
}

// Parses every data row after the header; `row` turns fields into a value.
template <class T, class F>
std::vector<T> read_csv_rows(std::istream& is, const std::string& source, const std::string& header,
                             std::size_t fields, F row) {
  std::vector<T> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    line = strip_cr(line);
    ++lineno;
    if (lineno == 1) {
      if (line != header) throw ParseError(source, lineno, "expected header '" + header + "'");
      continue;
    }
    if (line.empty()) continue;
    auto f = split_csv(line);
    if (f.size() != fields) {
      throw ParseError(source, lineno, "expected " + std::to_string(fields) + " fields, got " + std::to_string(f.size()));
    }
    try {
      out.push_back(row(f));
    } catch (const std::logic_error&) {
      throw ParseError(source, lineno, "malformed number");
    }
  }
  if (lineno == 0) throw ParseError(source, 1, "missing header");
  return out;
}

}  // namespace detail

inline void write_attention_csv(std::ostream& os, const std::vector<AttentionRecord>& records) {
  os << "query_id,layer,i,k,label_i,label_k,similarity\n";
  char buf[40];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof(buf), "%.17g", r.similarity);
    os << r.query_id << ',' << r.layer << ',' << r.i << ',' << r.k << ',' << r.label_i << ',' << r.label_k << ','
       << buf << '\n';
  }
}

inline std::vector<AttentionRecord> read_attention_csv(std::istream& is, const std::string& source = "attention") {
  std::vector<AttentionRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (lineno == 1 || line.empty()) continue;
    auto f = detail::split_csv(detail::strip_cr(line));
    if (f.size() != 7) throw ParseError(source, lineno, "expected 7 fields, got " + std::to_string(f.size()));
    try {
      out.push_back({f[0], std::stoul(f[1]), std::stoul(f[2]), std::stoul(f[3]), std::stoi(f[4]), std::stoi(f[5]),
                     std::stod(f[6])});
    } catch (const std::logic_error&) {
      throw ParseError(source, lineno, "malformed number");
    }
  }
  return out;
}

inline void write_label_pair_summary_csv(std::ostream& os, const std::vector<LabelPairSummary>& rows) {
  os << "layer,R1,R2,mean,normalized\n";
  char a[40], b[40];
  for (const auto& r : rows) {
    std::snprintf(a, sizeof(a), "%.9f", r.mean);
    std::snprintf(b, sizeof(b), "%.9f", r.normalized);
    os << r.layer << ',' << r.r1 << ',' << r.r2 << ',' << a << ',' << b << '\n';
  }
}

inline std::vector<LabelPairSummary> read_label_pair_summary_csv(std::istream& is,
                                                                const std::string& source = "summary") {
  return detail::read_csv_rows<LabelPairSummary>(is, source, "layer,R1,R2,mean,normalized", 5, [](const auto& f) {
    return LabelPairSummary{std::stoul(f[0]), std::stoi(f[1]), std::stoi(f[2]), std::stod(f[3]), std::stod(f[4]), 0};
  });
}

struct ScoreRow {
  std::string query_id;
  std::string doc_id;
  int grade = 0;
  double score = 0.0;
};

struct GradeSummary {
  int grade = 0;
  std::size_t count = 0;
  double mean = 0.0;
  double q1 = 0.0, median = 0.0, q3 = 0.0;
};

// Linear interpolation between closest ranks on sorted input.
inline double quantile(std::vector<double> v, double p) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const double pos = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

// Rows for judged documents of the run, in run order.
inline std::vector<ScoreRow> score_distribution(const std::vector<RunRecord>& run, const Qrels& qrels) {
  std::vector<ScoreRow> out;
  for (const auto& r : run) {
    auto q = qrels.find(r.query_id);
    if (q == qrels.end()) continue;
    auto d = q->second.find(r.doc_id);
    if (d == q->second.end()) continue;
    out.push_back({r.query_id, r.doc_id, d->second, r.score});
  }
  return out;
}

inline std::vector<GradeSummary> summarize_grades(const std::vector<ScoreRow>& rows) {
  std::map<int, std::vector<double>> groups;
  for (const auto& r : rows) groups[r.grade].push_back(r.score);
  std::vector<GradeSummary> out;
  for (const auto& [grade, scores] : groups) {
    double sum = 0.0;
    for (double s : scores) sum += s;
    out.push_back({grade, scores.size(), sum / static_cast<double>(scores.size()), quantile(scores, 0.25),
                   quantile(scores, 0.5), quantile(scores, 0.75)});
  }
  return out;
}

inline void write_score_rows_csv(std::ostream& os, const std::vector<ScoreRow>& rows) {
  os << "query_id,doc_id,grade,score\n";
  char buf[40];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.17g", r.score);
    os << r.query_id << ',' << r.doc_id << ',' << r.grade << ',' << buf << '\n';
  }
}

inline std::vector<ScoreRow> read_score_rows_csv(std::istream& is, const std::string& source = "scores") {
  return detail::read_csv_rows<ScoreRow>(is, source, "query_id,doc_id,grade,score", 4, [](const auto& f) {
    return ScoreRow{f[0], f[1], std::stoi(f[2]), std::stod(f[3])};
  });
}

inline void write_grade_summary_csv(std::ostream& os, const std::vector<GradeSummary>& rows) {
  os << "grade,count,mean,q1,median,q3\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%zu,%.9f,%.9f,%.9f,%.9f", r.grade, r.count, r.mean, r.q1, r.median, r.q3);
    os << buf << '\n';
  }
}

}  // namespace setrank
