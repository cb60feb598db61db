#pragma once

// First-stage retrieval: an Okapi BM25 inverted index, TREC run/qrels files,
// corpus and query readers, and assembly of per-query candidate sets.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "setrank/candidate.hpp"
#include "setrank/textproc.hpp"

namespace setrank {

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : std::runtime_error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct Document {
  std::string id;
  std::string title;
  std::string text;
  bool operator==(const Document&) const = default;
};

struct Query {
  std::string id;
  std::string text;
  bool operator==(const Query&) const = default;
};

struct RunRecord {
  std::string query_id;
  std::string doc_id;
  int rank = 0;
  double score = 0.0;
  std::string tag;
  bool operator==(const RunRecord&) const = default;
};

struct QrelRecord {
  std::string query_id;
  std::string doc_id;
  int grade = 0;
  bool operator==(const QrelRecord&) const = default;
};

// qid -> doc id -> grade
using Qrels = std::map<std::string, std::map<std::string, int>>;

inline Qrels index_qrels(const std::vector<QrelRecord>& records) {
  Qrels q;
  for (const auto& r : records) q[r.query_id][r.doc_id] = r.grade;
  return q;
}

// ---------------------------------------------------------------------------
// File formats

namespace detail {

inline std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream is(line);
  std::vector<std::string> out;
  for (std::string f; is >> f;) out.push_back(f);
  return out;
}

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

inline std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

inline std::ifstream open_in(const std::string& path, const char* what) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error(std::string("cannot open ") + what + " " + path);
  return is;
}

inline std::ofstream open_out(const std::string& path, const char* what) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error(std::string("cannot write ") + what + " " + path);
  return os;
}

inline int parse_int(const std::string& text, const std::string& source, std::size_t line,
                     const char* field) {
  try {
    std::size_t used = 0;
    int v = std::stoi(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  throw ParseError(source, line, std::string("bad ") + field + " '" + text + "'");
}

inline double parse_double(const std::string& text, const std::string& source,
                           std::size_t line, const char* field) {
  try {
    std::size_t used = 0;
    double v = std::stod(text, &used);
    if (used == text.size() && std::isfinite(v)) return v;
  } catch (const std::exception&) {
  }
  throw ParseError(source, line, std::string("bad ") + field + " '" + text + "'");
}

}  // namespace detail

// "qid Q0 docid rank score tag", score with six decimals.
inline void write_run(std::ostream& os, const std::vector<RunRecord>& run) {
  char buf[64];
  for (const auto& r : run) {
    std::snprintf(buf, sizeof(buf), "%.6f", r.score);
    os << r.query_id << " Q0 " << r.doc_id << ' ' << r.rank << ' ' << buf << ' ' << r.tag
       << '\n';
  }
}

inline std::vector<RunRecord> read_run(std::istream& is, const std::string& source = "<run>") {
  std::vector<RunRecord> run;
  std::string line;
  for (std::size_t lineno = 1; std::getline(is, line); ++lineno) {
    auto f = detail::split_ws(line);
    if (f.empty()) continue;
    if (f.size() != 6) {
      throw ParseError(source, lineno, "expected 6 columns, found " + std::to_string(f.size()));
    }
    RunRecord r;
    r.query_id = f[0];
    r.doc_id = f[2];
    r.rank = detail::parse_int(f[3], source, lineno, "rank");
    r.score = detail::parse_double(f[4], source, lineno, "score");
    r.tag = f[5];
    run.push_back(std::move(r));
  }
  return run;
}

inline void save_run(const std::string& path, const std::vector<RunRecord>& run) {
  auto os = detail::open_out(path, "run");
  write_run(os, run);
}

inline std::vector<RunRecord> load_run(const std::string& path) {
  auto is = detail::open_in(path, "run");
  return read_run(is, path);
}

// "qid 0 docid grade"
inline void write_qrels(std::ostream& os, const std::vector<QrelRecord>& qrels) {
  for (const auto& q : qrels) os << q.query_id << " 0 " << q.doc_id << ' ' << q.grade << '\n';
}

inline std::vector<QrelRecord> read_qrels(std::istream& is, const std::string& source = "<qrels>") {
  std::vector<QrelRecord> out;
  std::string line;
  for (std::size_t lineno = 1; std::getline(is, line); ++lineno) {
    auto f = detail::split_ws(line);
    if (f.empty()) continue;
    if (f.size() != 4) {
      throw ParseError(source, lineno, "expected 4 columns, found " + std::to_string(f.size()));
    }
    QrelRecord q{f[0], f[2], detail::parse_int(f[3], source, lineno, "grade")};
    if (q.grade < 0) throw ParseError(source, lineno, "negative grade");
    out.push_back(std::move(q));
  }
  return out;
}

inline void save_qrels(const std::string& path, const std::vector<QrelRecord>& qrels) {
  auto os = detail::open_out(path, "qrels");
  write_qrels(os, qrels);
}

inline std::vector<QrelRecord> load_qrels(const std::string& path) {
  auto is = detail::open_in(path, "qrels");
  return read_qrels(is, path);
}

// "doc_id<TAB>title<TAB>passage"
inline void write_corpus_tsv(std::ostream& os, const std::vector<Document>& docs) {
  for (const auto& d : docs) os << d.id << '\t' << d.title << '\t' << d.text << '\n';
}

inline std::vector<Document> read_corpus_tsv(std::istream& is, const std::string& source = "<corpus>") {
  std::vector<Document> docs;
  std::string line;
  for (std::size_t lineno = 1; std::getline(is, line); ++lineno) {
    line = detail::strip_cr(line);
    if (line.empty()) continue;
    auto f = detail::split_tabs(line);
    if (f.size() != 3) {
      throw ParseError(source, lineno, "expected 3 tab-separated fields, found " +
                                           std::to_string(f.size()));
    }
    docs.push_back({f[0], f[1], f[2]});
  }
  return docs;
}

// One JSON object per line with fields id, title, text.
inline std::vector<Document> read_corpus_jsonl(std::istream& is, const std::string& source = "<corpus>") {
  std::vector<Document> docs;
  std::string line;
  for (std::size_t lineno = 1; std::getline(is, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = nlohmann::json::parse(line);
      Document d;
      d.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
      d.title = j.value("title", std::string());
      d.text = j.at("text").get<std::string>();
      docs.push_back(std::move(d));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(source, lineno, e.what());
    }
  }
  return docs;
}

// Picks the reader by extension: .jsonl / .json are JSON lines, else TSV.
inline std::vector<Document> load_corpus(const std::string& path) {
  auto is = detail::open_in(path, "corpus");
  const bool json = path.ends_with(".jsonl") || path.ends_with(".json");
  return json ? read_corpus_jsonl(is, path) : read_corpus_tsv(is, path);
}

inline void save_corpus(const std::string& path, const std::vector<Document>& docs) {
  auto os = detail::open_out(path, "corpus");
  write_corpus_tsv(os, docs);
}

// "query_id<TAB>text"
inline void write_queries(std::ostream& os, const std::vector<Query>& queries) {
  for (const auto& q : queries) os << q.id << '\t' << q.text << '\n';
}

inline std::vector<Query> read_queries(std::istream& is, const std::string& source = "<queries>") {
  std::vector<Query> out;
  std::string line;
  for (std::size_t lineno = 1; std::getline(is, line); ++lineno) {
    line = detail::strip_cr(line);
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError(source, lineno, "expected query_id<TAB>text");
    out.push_back({line.substr(0, tab), line.substr(tab + 1)});
  }
  return out;
}

inline void save_queries(const std::string& path, const std::vector<Query>& queries) {
  auto os = detail::open_out(path, "queries");
  write_queries(os, queries);
}

inline std::vector<Query> load_queries(const std::string& path) {
  auto is = detail::open_in(path, "queries");
  return read_queries(is, path);
}

// ---------------------------------------------------------------------------
// BM25

struct BM25Params {
  double k1 = 0.9;
  double b = 0.4;
};

// Words used for indexing; the vocabulary-free form of the model tokenizer.
inline std::vector<std::string> index_terms(std::string_view text) {
  return split_words(text, [](const std::string&) { return false; });
}

struct SearchHit {
  std::string doc_id;
  double score = 0.0;
};

class InvertedIndex {
 public:
  struct Posting {
    std::uint32_t doc = 0;  // internal index, ordered by doc id
    std::uint32_t tf = 0;
  };

  // Documents get internal indices in doc-id order so postings are sorted
  // by doc id.
  static InvertedIndex build(std::vector<Document> corpus) {
    std::sort(corpus.begin(), corpus.end(),
              [](const Document& a, const Document& b) { return a.id < b.id; });
    for (std::size_t i = 1; i < corpus.size(); ++i) {
      if (corpus[i].id == corpus[i - 1].id) {
        throw std::invalid_argument("duplicate doc_id " + corpus[i].id);
      }
    }
    InvertedIndex index;
    index.docs_ = std::move(corpus);
    index.lengths_.resize(index.docs_.size());
    double total = 0.0;
    for (std::size_t d = 0; d < index.docs_.size(); ++d) {
      std::map<std::string, std::uint32_t> tf;
      auto terms = document_terms(index.docs_[d]);
      for (const auto& t : terms) ++tf[t];
      index.lengths_[d] = static_cast<std::uint32_t>(terms.size());
      total += static_cast<double>(terms.size());
      for (const auto& [term, count] : tf) {
        index.postings_[term].push_back({static_cast<std::uint32_t>(d), count});
      }
    }
    index.avg_length_ = index.docs_.empty() ? 0.0 : total / static_cast<double>(index.docs_.size());
    return index;
  }

  static std::vector<std::string> document_terms(const Document& d) {
    return index_terms(d.title + " " + d.text);
  }

  std::size_t doc_count() const { return docs_.size(); }
  double avg_doc_length() const { return avg_length_; }
  const std::vector<Document>& documents() const { return docs_; }
  std::uint32_t doc_length(std::size_t internal) const { return lengths_.at(internal); }

  const std::vector<Posting>& postings(const std::string& term) const {
    static const std::vector<Posting> empty;
    auto it = postings_.find(term);
    return it == postings_.end() ? empty : it->second;
  }

  std::size_t doc_frequency(const std::string& term) const { return postings(term).size(); }

  double idf(const std::string& term) const {
    const double n = static_cast<double>(docs_.size());
    const double df = static_cast<double>(doc_frequency(term));
    return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
  }

  // Top-k documents by BM25 over the distinct query terms. Documents that
  // match nothing score 0 and still fill the list; ties go to the smaller
  // doc id.
  std::vector<SearchHit> search(std::string_view query, std::size_t k,
                                BM25Params params = {}) const {
    if (k == 0) throw std::invalid_argument("search: k must be >= 1");
    std::vector<double> scores(docs_.size(), 0.0);
    auto terms = index_terms(query);
    std::sort(terms.begin(), terms.end());
    terms.erase(std::unique(terms.begin(), terms.end()), terms.end());
    for (const auto& term : terms) {
      const auto& plist = postings(term);
      if (plist.empty()) continue;
      const double w = idf(term);
      for (const auto& p : plist) {
        const double tf = p.tf;
        const double norm = params.k1 * (1.0 - params.b + params.b * lengths_[p.doc] / avg_length_);
        scores[p.doc] += w * tf * (params.k1 + 1.0) / (tf + norm);
      }
    }
    std::vector<std::uint32_t> order(docs_.size());
    std::iota(order.begin(), order.end(), 0u);
    const std::size_t keep = std::min(k, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                      [&](std::uint32_t a, std::uint32_t b) {
                        if (scores[a] != scores[b]) return scores[a] > scores[b];
                        return a < b;
                      });
    std::vector<SearchHit> hits;
    for (std::size_t i = 0; i < keep; ++i) hits.push_back({docs_[order[i]].id, scores[order[i]]});
    return hits;
  }

  // JSON: documents, lengths, average length and postings as [doc, tf] pairs.
  void save(const std::string& path) const {
    nlohmann::json j;
    j["format"] = "setrank-index-1";
    j["avg_length"] = avg_length_;
    j["lengths"] = lengths_;
    auto& docs = j["documents"] = nlohmann::json::array();
    for (const auto& d : docs_) docs.push_back({{"id", d.id}, {"title", d.title}, {"text", d.text}});
    auto& post = j["postings"] = nlohmann::json::object();
    for (const auto& [term, plist] : postings_) {
      auto& arr = post[term] = nlohmann::json::array();
      for (const auto& p : plist) arr.push_back({p.doc, p.tf});
    }
    auto os = detail::open_out(path, "index");
    os << j.dump() << '\n';
  }

  static InvertedIndex load(const std::string& path) {
    auto is = detail::open_in(path, "index");
    InvertedIndex index;
    try {
      auto j = nlohmann::json::parse(is);
      if (j.at("format") != "setrank-index-1") throw ParseError(path, 1, "unknown index format");
      index.avg_length_ = j.at("avg_length").get<double>();
      index.lengths_ = j.at("lengths").get<std::vector<std::uint32_t>>();
      for (const auto& d : j.at("documents"))
        index.docs_.push_back({d.at("id").get<std::string>(), d.at("title").get<std::string>(),
                               d.at("text").get<std::string>()});
      for (const auto& [term, arr] : j.at("postings").items()) {
        auto& plist = index.postings_[term];
        for (const auto& p : arr) plist.push_back({p.at(0).get<std::uint32_t>(), p.at(1).get<std::uint32_t>()});
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path, 1, e.what());
    }
    if (index.lengths_.size() != index.docs_.size()) throw ParseError(path, 1, "length table size mismatch");
    for (const auto& [term, plist] : index.postings_)
      for (const auto& p : plist)
        if (p.doc >= index.docs_.size()) throw ParseError(path, 1, "posting for '" + term + "' out of range");
    return index;
  }

  bool operator==(const InvertedIndex& other) const {
    if (docs_ != other.docs_ || lengths_ != other.lengths_ || avg_length_ != other.avg_length_)
      return false;
    if (postings_.size() != other.postings_.size()) return false;
    for (const auto& [term, plist] : postings_) {
      auto it = other.postings_.find(term);
      if (it == other.postings_.end() || it->second.size() != plist.size()) return false;
      for (std::size_t i = 0; i < plist.size(); ++i)
        if (plist[i].doc != it->second[i].doc || plist[i].tf != it->second[i].tf) return false;
    }
    return true;
  }

 private:
  std::vector<Document> docs_;
  std::vector<std::uint32_t> lengths_;
  double avg_length_ = 0.0;
  std::map<std::string, std::vector<Posting>> postings_;
};

inline std::vector<RunRecord> search_all(const InvertedIndex& index,
                                         const std::vector<Query>& queries, std::size_t k,
                                         BM25Params params = {}, const std::string& tag = "bm25") {
  std::vector<RunRecord> run;
  for (const auto& q : queries) {
    auto hits = index.search(q.text, k, params);
    for (std::size_t r = 0; r < hits.size(); ++r) {
      run.push_back({q.id, hits[r].doc_id, static_cast<int>(r + 1), hits[r].score, tag});
    }
  }
  return run;
}

// ---------------------------------------------------------------------------
// Candidate sets

// How a retrieval score becomes a feature bucket. `per_query` min-max
// normalizes over all run entries of the query; otherwise `fixed` applies.
struct FeaturePolicy {
  bool per_query = false;
  FeatureSpec fixed{};
};

// Top-n run entries per query (in run-rank order), in order of first
// appearance of each query in the run.
inline std::vector<CandidateSet> assemble_candidate_sets(const std::vector<RunRecord>& run,
                                                         const std::vector<Document>& corpus,
                                                         const std::vector<Query>& queries,
                                                         std::size_t n,
                                                         const FeaturePolicy& policy = {}) {
  std::unordered_map<std::string, const Document*> docs;
  for (const auto& d : corpus) docs.emplace(d.id, &d);
  std::unordered_map<std::string, const Query*> query_text;
  for (const auto& q : queries) query_text.emplace(q.id, &q);

  std::vector<std::string> order;
  std::map<std::string, std::vector<const RunRecord*>> by_query;
  for (const auto& r : run) {
    auto& list = by_query[r.query_id];
    if (list.empty()) order.push_back(r.query_id);
    list.push_back(&r);
  }

  std::vector<CandidateSet> sets;
  for (const auto& qid : order) {
    auto qit = query_text.find(qid);
    if (qit == query_text.end()) throw std::invalid_argument("run query " + qid + " has no text");
    auto& list = by_query[qid];
    std::stable_sort(list.begin(), list.end(),
                     [](const RunRecord* a, const RunRecord* b) { return a->rank < b->rank; });
    std::vector<double> scores;
    for (const auto* r : list) scores.push_back(r->score);
    const FeatureSpec spec = policy.per_query ? minmax_spec(scores, policy.fixed.buckets) : policy.fixed;

    CandidateSet set{qid, qit->second->text, {}};
    for (std::size_t i = 0; i < list.size() && i < n; ++i) {
      const auto* r = list[i];
      auto dit = docs.find(r->doc_id);
      if (dit == docs.end()) throw std::invalid_argument("run document " + r->doc_id + " not in corpus");
      set.candidates.push_back({r->doc_id, dit->second->title, dit->second->text, r->score, r->rank,
                                discretize_feature(r->score, spec)});
    }
    set.validate();
    sets.push_back(std::move(set));
  }
  return sets;
}

}  // namespace setrank
