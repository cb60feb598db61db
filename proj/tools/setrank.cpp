// setrank: command-line front end for indexing, synthetic data, training,
// re-ranking, evaluation, fusion and analysis.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "setrank/analysis.hpp"
#include "setrank/fusion.hpp"
#include "setrank/kvconfig.hpp"
#include "setrank/log.hpp"
#include "setrank/metrics.hpp"
#include "setrank/model.hpp"
#include "setrank/plot.hpp"
#include "setrank/retrieval.hpp"
#include "setrank/synthgen.hpp"
#include "setrank/training.hpp"

namespace fs = std::filesystem;
using namespace setrank;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void require(const std::string& value, const std::string& flag) {
  if (value.empty()) throw UsageError(flag + " is required");
}

std::ofstream open_output(const std::string& path) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  return os;
}

std::ifstream open_input(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  return is;
}

// Fills options that were not given on the command line from a
// `key = value` file. Keys are flag names without dashes; '_' and '-' are
// interchangeable.
void apply_config_file(CLI::App* app, const std::string& path) {
  auto kv = KeyValues::load(path);
  std::map<std::string, CLI::Option*> by_key;
  for (auto* opt : app->get_options()) {
    for (auto name : opt->get_lnames()) {
      std::replace(name.begin(), name.end(), '-', '_');
      by_key[name] = opt;
    }
  }
  for (const auto& [key, value_text] : kv.entries()) {
    auto norm = key;
    std::replace(norm.begin(), norm.end(), '-', '_');
    auto it = by_key.find(norm);
    if (it == by_key.end() || norm == "config") {
      throw UsageError(path + ": unknown key '" + key + "' for " + app->get_name());
    }
    auto* opt = it->second;
    if (opt->count() > 0) continue;
    auto value = value_text;
    if (opt->get_type_size() == 0) {
      if (value == "false" || value == "0") continue;
      value = "true";
    }
    if (opt->get_expected_max() > 1) {
      std::istringstream words(value);
      std::vector<std::string> items;
      for (std::string w; words >> w;) items.push_back(w);
      opt->add_result(items);
    } else {
      opt->add_result(value);
    }
    opt->run_callback();
  }
}

void add_config_option(CLI::App* app, std::string& path) {
  app->add_option("--config", path, "key = value file mirroring the flags; flags win");
}

std::size_t hardware_threads(std::size_t requested) { return std::max<std::size_t>(1, requested); }

// ---------------------------------------------------------------------------
// Inputs shared by training and re-ranking

struct DataPaths {
  std::string data_dir, corpus, queries, run, qrels;
  std::string feature_norm = "fixed";
  double feature_min = 165.0, feature_max = 190.0;

  void add(CLI::App* app, bool with_run = true) {
    app->add_option("--data-dir", data_dir, "directory with corpus.tsv, queries.tsv, run.trec, qrels.txt");
    app->add_option("--corpus", corpus, "corpus (.tsv or .jsonl)");
    app->add_option("--queries", queries, "queries TSV");
    if (with_run) app->add_option("--run-in", run, "first-stage run (TREC)");
    app->add_option("--qrels", qrels, "relevance judgments (TREC)");
    app->add_option("--feature-norm", feature_norm, "retrieval score normalization")
        ->check(CLI::IsMember({"fixed", "per_query"}));
    app->add_option("--feature-min", feature_min, "lower bound of the fixed feature range");
    app->add_option("--feature-max", feature_max, "upper bound of the fixed feature range");
  }

  std::string resolve(const std::string& explicit_path, const std::string& file, const std::string& flag) const {
    if (!explicit_path.empty()) return explicit_path;
    if (!data_dir.empty()) return data_dir + "/" + file;
    throw UsageError(flag + " or --data-dir is required");
  }

  std::string qrels_path() const {
    if (!qrels.empty()) return qrels;
    if (!data_dir.empty() && fs::exists(data_dir + "/qrels.txt")) return data_dir + "/qrels.txt";
    return {};
  }

  FeaturePolicy policy() const { return {feature_norm == "per_query", {feature_min, feature_max, 100}}; }

  std::vector<CandidateSet> sets(std::size_t n, const std::string& run_flag = "--run-in") const {
    auto docs = load_corpus(resolve(corpus, "corpus.tsv", "--corpus"));
    auto qs = load_queries(resolve(queries, "queries.tsv", "--queries"));
    auto r = load_run(resolve(run, "run.trec", run_flag));
    return assemble_candidate_sets(r, docs, qs, n, policy());
  }
};

// ---------------------------------------------------------------------------
// index

struct IndexOptions {
  std::string config, corpus, queries, index, out_index, out_run;
  std::size_t k = 1000;
  BM25Params bm25;
};

void run_index_build(const IndexOptions& o) {
  require(o.corpus, "--corpus");
  require(o.out_index, "--out-index");
  auto index = InvertedIndex::build(load_corpus(o.corpus));
  index.save(o.out_index);
  log_info("indexed " + std::to_string(index.documents().size()) + " documents into " + o.out_index);
}

void run_index_search(const IndexOptions& o) {
  require(o.queries, "--queries");
  require(o.out_run, "--out-run");
  if (o.index.empty() && o.corpus.empty()) throw UsageError("--index or --corpus is required");
  auto index = o.index.empty() ? InvertedIndex::build(load_corpus(o.corpus)) : InvertedIndex::load(o.index);
  auto run = search_all(index, load_queries(o.queries), o.k, o.bm25);
  save_run(o.out_run, run);
  log_info("wrote " + std::to_string(run.size()) + " run lines to " + o.out_run);
}

// ---------------------------------------------------------------------------
// synth

struct SynthOptions {
  std::string config, task = "comparative", out_dir;
  SynthSpec spec;
  std::size_t test_queries = 0;
};

void run_synth(SynthOptions o) {
  require(o.out_dir, "--out-dir");
  o.spec.task = parse_task(o.task);
  if (o.test_queries == 0) {
    save_synth(o.out_dir, generate(o.spec));
    return;
  }
  const std::size_t train_count = o.spec.num_queries;
  o.spec.num_queries += o.test_queries;
  auto [train, test] = split_queries(generate(o.spec), train_count);
  save_synth(o.out_dir + "/train", train);
  save_synth(o.out_dir + "/test", test);
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  std::string config, phase = "warmup", init_checkpoint, out, val_dir, log_csv;
  DataPaths data;
  ModelConfig model;
  TrainConfig train;
  std::size_t n = 8;
  int rel_threshold = 1;
  bool no_global = false;
  std::uint64_t seed = 1;
};

std::vector<std::string> vocab_texts(const std::vector<CandidateSet>& sets) {
  std::vector<std::string> texts;
  for (const auto& s : sets) {
    texts.push_back(s.query_text);
    for (const auto& c : s.candidates) {
      texts.push_back(c.title);
      texts.push_back(c.passage);
    }
  }
  return texts;
}

Qrels load_qrels_index(const std::string& path) { return index_qrels(load_qrels(path)); }

void run_train(TrainOptions o) {
  require(o.out, "--out");
  o.train.phase = parse_phase(o.phase);
  o.train.seed = o.seed;
  o.train.use_global = !o.no_global;
  auto sets = o.data.sets(o.n);
  const auto qrels_path = o.data.qrels_path();
  if (qrels_path.empty()) throw UsageError("--qrels or --data-dir with qrels.txt is required");
  auto examples = make_examples(sets, load_qrels_index(qrels_path), o.rel_threshold);

  std::optional<Reranker> model;
  if (!o.init_checkpoint.empty()) {
    model.emplace(Reranker::load(o.init_checkpoint));
    log_info("initialized from " + o.init_checkpoint);
  } else {
    auto texts = vocab_texts(sets);
    auto vocab = Vocab::build(texts);
    o.model.vocab_size = vocab.size();
    if (o.no_global) o.model.global_start = o.model.layers + 1;
    model.emplace(Reranker::create(o.model, std::move(vocab), o.seed));
  }

  std::optional<Validation> validation;
  if (!o.val_dir.empty()) {
    DataPaths v;
    v.data_dir = o.val_dir;
    v.feature_norm = o.data.feature_norm;
    v.feature_min = o.data.feature_min;
    v.feature_max = o.data.feature_max;
    validation = Validation{v.sets(o.n), load_qrels_index(o.val_dir + "/qrels.txt"), o.rel_threshold};
  }

  log_info("training " + std::to_string(examples.size()) + " sets for " + std::to_string(o.train.steps) + " steps (" +
           o.phase + ")");
  auto result = train(*model, examples, o.train, validation ? &*validation : nullptr, [&](std::size_t step) {
    model->save(o.out + "/step-" + std::to_string(step));
    log_debug("checkpoint at step " + std::to_string(step));
  });
  model->save(o.out);
  auto log_path = o.log_csv.empty() ? o.out + "/train_log.csv" : o.log_csv;
  auto os = open_output(log_path);
  write_train_log(os, result.log);
  for (const auto& row : result.log)
    if (row.val_mrr10) log_info("step " + std::to_string(row.step) + " val MRR@10 " + std::to_string(*row.val_mrr10));
}

// ---------------------------------------------------------------------------
// rerank

struct RerankOptions {
  std::string config, checkpoint, mode = "full", out_run, dump_attention, tag = "setrank";
  DataPaths data;
  std::size_t n = 8;
  std::size_t threads = 1;
};

void run_rerank(const RerankOptions& o) {
  require(o.checkpoint, "--checkpoint");
  require(o.out_run, "--out-run");
  const auto mode = parse_mode(o.mode);
  auto model = Reranker::load(o.checkpoint);
  auto sets = o.data.sets(o.n);
  Qrels qrels;
  if (!o.dump_attention.empty()) {
    const auto path = o.data.qrels_path();
    if (path.empty()) throw UsageError("--dump-attention needs --qrels for candidate labels");
    qrels = load_qrels_index(path);
    if (mode == ScoringMode::no_global) throw UsageError("--dump-attention needs a mode with global attention");
  }

  std::vector<std::vector<RunRecord>> per_set(sets.size());
  std::vector<std::vector<AttentionRecord>> attention(sets.size());
  auto work = [&](std::size_t s) {
    const auto& set = sets[s];
    auto fwd = model.forward(set, mode, !o.dump_attention.empty());
    auto ranked = Reranker::rank_by_score(set, Reranker::probabilities(fwd.logits));
    for (const auto& r : ranked) per_set[s].push_back({set.query_id, r.doc_id, r.new_rank, r.score, o.tag});
    if (!o.dump_attention.empty()) {
      std::vector<int> labels;
      auto q = qrels.find(set.query_id);
      for (const auto& c : set.candidates) {
        int grade = 0;
        if (q != qrels.end()) {
          auto g = q->second.find(c.doc_id);
          if (g != q->second.end()) grade = g->second;
        }
        labels.push_back(grade);
      }
      attention[s] = attention_records(set.query_id, fwd.trace, labels);
    }
  };
  const std::size_t workers = std::min(hardware_threads(o.threads), std::max<std::size_t>(1, sets.size()));
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t s = w; s < sets.size(); s += workers) work(s);
    });
  }
  for (auto& t : pool) t.join();

  std::vector<RunRecord> run;
  for (auto& part : per_set) run.insert(run.end(), part.begin(), part.end());
  save_run(o.out_run, run);
  if (!o.dump_attention.empty()) {
    std::vector<AttentionRecord> all;
    for (auto& part : attention) all.insert(all.end(), part.begin(), part.end());
    auto os = open_output(o.dump_attention);
    write_attention_csv(os, all);
  }
  log_info("re-ranked " + std::to_string(sets.size()) + " queries in " + o.mode + " mode");
}

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
  std::string config, run, qrels, metrics = "mrr@10", out_csv;
  int rel_threshold = 1;
};

void run_eval(const EvalOptions& o) {
  require(o.run, "--run");
  require(o.qrels, "--qrels");
  auto run = load_run(o.run);
  auto qrels = load_qrels_index(o.qrels);
  std::vector<EvalResult> results;
  std::stringstream names(o.metrics);
  for (std::string name; std::getline(names, name, ',');) {
    if (!name.empty()) results.push_back(evaluate_metric(name, run, qrels, o.rel_threshold));
  }
  if (results.empty()) throw UsageError("--metrics names no metric");
  if (o.out_csv.empty()) {
    write_eval_csv(std::cout, results);
  } else {
    auto os = open_output(o.out_csv);
    write_eval_csv(os, results);
  }
}

// ---------------------------------------------------------------------------
// fuse

struct FuseOptions {
  std::string config, qrels, model, out_model, out_run, tag = "fusion";
  std::vector<std::string> runs, names;
  FusionConfig fit;
};

// Candidates are the documents of the first run; a document missing from a
// later run takes that run's lowest score for the query.
std::vector<FusionQuery> fusion_queries(const std::vector<std::string>& run_paths, const Qrels* qrels) {
  if (run_paths.empty()) throw UsageError("--runs needs at least one run file");
  std::vector<std::map<std::string, std::map<std::string, double>>> scores;
  for (const auto& path : run_paths) {
    auto& table = scores.emplace_back();
    for (const auto& r : load_run(path)) table[r.query_id][r.doc_id] = r.score;
  }
  std::vector<FusionQuery> out;
  for (const auto& r : ranked_lists(load_run(run_paths.front()))) {
    const auto& qid = r.first;
    FusionQuery fq{qid, r.second, {}, {}};
    for (const auto& doc : fq.doc_ids) {
      std::vector<double> row;
      for (std::size_t f = 0; f < scores.size(); ++f) {
        auto q = scores[f].find(qid);
        if (q == scores[f].end()) throw std::runtime_error(run_paths[f] + ": no entries for query " + qid);
        auto d = q->second.find(doc);
        if (d != q->second.end()) {
          row.push_back(d->second);
        } else {
          double lo = q->second.begin()->second;
          for (const auto& [id, s] : q->second) lo = std::min(lo, s);
          row.push_back(lo);
        }
      }
      fq.features.push_back(std::move(row));
      int grade = 0;
      if (qrels) {
        auto q = qrels->find(qid);
        if (q != qrels->end()) {
          auto g = q->second.find(doc);
          if (g != q->second.end()) grade = g->second;
        }
      }
      fq.labels.push_back(grade);
    }
    out.push_back(std::move(fq));
  }
  return out;
}

std::vector<std::string> feature_names(const FuseOptions& o) {
  if (!o.names.empty()) {
    if (o.names.size() != o.runs.size()) throw UsageError("--names must match --runs");
    return o.names;
  }
  std::vector<std::string> names;
  for (const auto& r : o.runs) names.push_back(fs::path(r).stem().string());
  return names;
}

void run_fuse_fit(const FuseOptions& o) {
  require(o.qrels, "--qrels");
  require(o.out_model, "--out-model");
  auto qrels = load_qrels_index(o.qrels);
  auto fit = coordinate_ascent_fit(fusion_queries(o.runs, &qrels), feature_names(o), o.fit);
  if (fit.degenerate) log_warn("fusion objective is zero under every probe; using uniform weights");
  fit.model.save(o.out_model);
  log_info("fusion training MRR@10 " + std::to_string(fit.objective));
}

void run_fuse_apply(const FuseOptions& o) {
  require(o.model, "--model");
  require(o.out_run, "--out-run");
  auto model = FusionModel::load(o.model);
  if (model.weights.size() != o.runs.size()) {
    throw UsageError(o.model + ": model has " + std::to_string(model.weights.size()) + " features, " +
                     std::to_string(o.runs.size()) + " runs given");
  }
  std::vector<RunRecord> run;
  for (const auto& q : fusion_queries(o.runs, nullptr)) {
    auto s = fuse_scores(model, q.features);
    std::vector<std::size_t> order(s.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
    for (std::size_t r = 0; r < order.size(); ++r)
      run.push_back({q.query_id, q.doc_ids[order[r]], static_cast<int>(r + 1), s[order[r]], o.tag});
  }
  save_run(o.out_run, run);
}

// ---------------------------------------------------------------------------
// analyze / plot

struct AnalyzeOptions {
  std::string config, in, run, qrels, out_csv, out_summary;
};

void run_analyze_attention(const AnalyzeOptions& o) {
  require(o.in, "--in");
  require(o.out_csv, "--out-csv");
  auto is = open_input(o.in);
  auto summary = summarize_label_pairs(label_pair_values(read_attention_csv(is, o.in)));
  auto os = open_output(o.out_csv);
  write_label_pair_summary_csv(os, summary);
}

void run_analyze_scores(const AnalyzeOptions& o) {
  require(o.run, "--run");
  require(o.qrels, "--qrels");
  require(o.out_csv, "--out-csv");
  auto rows = score_distribution(load_run(o.run), load_qrels_index(o.qrels));
  auto os = open_output(o.out_csv);
  write_score_rows_csv(os, rows);
  if (!o.out_summary.empty()) {
    auto ss = open_output(o.out_summary);
    write_grade_summary_csv(ss, summarize_grades(rows));
  }
}

struct PlotOptions {
  std::string config, in, out, title;
  std::size_t bins = 20;
};

void run_plot(const PlotOptions& o) {
  require(o.in, "--in");
  require(o.out, "--out");
  std::string header;
  {
    auto is = open_input(o.in);
    std::getline(is, header);
    header = detail::strip_cr(header);
  }
  auto is = open_input(o.in);
  auto os = open_output(o.out);
  if (header == "query_id,doc_id,grade,score") {
    render_score_histogram(os, read_score_rows_csv(is, o.in), o.bins, o.title.empty() ? "score by grade" : o.title);
  } else if (header == "layer,R1,R2,mean,normalized") {
    render_similarity_heatmap(os, read_label_pair_summary_csv(is, o.in),
                              o.title.empty() ? "normalized similarity by label pair" : o.title);
  } else {
    throw ParseError(o.in, 1, "unrecognized CSV header '" + header + "'");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"setrank: listwise re-ranking with set-level attention"};
  app.require_subcommand(1);
  std::size_t threads = 1;
  app.add_option("--threads", threads, "worker threads (default 1)")->check(CLI::PositiveNumber);

  std::vector<std::pair<CLI::App*, std::string*>> configs;
  std::vector<std::pair<CLI::App*, std::function<void()>>> actions;
  auto leaf = [&](CLI::App* sub, std::string& config, std::function<void()> fn) {
    add_config_option(sub, config);
    configs.emplace_back(sub, &config);
    actions.emplace_back(sub, std::move(fn));
  };

  // index
  auto* index = app.add_subcommand("index", "BM25 index build and search");
  index->require_subcommand(1);
  IndexOptions build_o, search_o;
  auto* build = index->add_subcommand("build", "index a corpus");
  build->add_option("--corpus", build_o.corpus, "corpus (.tsv or .jsonl)");
  build->add_option("--out-index", build_o.out_index, "index file to write");
  leaf(build, build_o.config, [&] { run_index_build(build_o); });
  auto* search = index->add_subcommand("search", "retrieve the top k documents per query");
  search->add_option("--index", search_o.index, "index file from 'index build'");
  search->add_option("--corpus", search_o.corpus, "corpus to index on the fly");
  search->add_option("--queries", search_o.queries, "queries TSV");
  search->add_option("--k", search_o.k, "documents per query");
  search->add_option("--k1", search_o.bm25.k1, "BM25 k1");
  search->add_option("--b", search_o.bm25.b, "BM25 b");
  search->add_option("--out-run", search_o.out_run, "run file to write");
  leaf(search, search_o.config, [&] { run_index_search(search_o); });

  // synth
  auto* synth = app.add_subcommand("synth", "synthetic ranking data");
  synth->require_subcommand(1);
  SynthOptions synth_o;
  auto* gen = synth->add_subcommand("generate", "write corpus, queries, qrels and a first-stage run");
  gen->add_option("--task", synth_o.task, "pointwise or comparative")->check(CLI::IsMember({"pointwise", "comparative"}));
  gen->add_option("--queries", synth_o.spec.num_queries, "number of (training) queries");
  gen->add_option("--test-queries", synth_o.test_queries, "extra queries written to <out-dir>/test");
  gen->add_option("--n", synth_o.spec.candidates, "candidates per query");
  gen->add_option("--seed", synth_o.spec.seed, "random seed");
  gen->add_option("--scale-length", synth_o.spec.scale_length, "magnitude words in use (comparative)");
  gen->add_option("--filler-words", synth_o.spec.filler_words, "filler words per passage");
  gen->add_option("--num-relevant", synth_o.spec.num_relevant, "top-grade candidates per query (comparative)");
  gen->add_option("--hard-negatives", synth_o.spec.hard_negatives, "distractors sharing the answer (pointwise)");
  gen->add_option("--distractor-strength", synth_o.spec.distractor_strength, "chance a distractor is one grade below");
  gen->add_option("--feature-signal", synth_o.spec.feature_signal, "chance first-stage scores favour the answer");
  gen->add_option("--out-dir", synth_o.out_dir, "output directory");
  leaf(gen, synth_o.config, [&] { run_synth(synth_o); });

  // train
  TrainOptions train_o;
  auto* tr = app.add_subcommand("train", "train a re-ranker");
  tr->add_option("--phase", train_o.phase, "warmup (no feature) or feature")->check(CLI::IsMember({"warmup", "feature"}));
  train_o.data.add(tr);
  tr->add_option("--val-dir", train_o.val_dir, "validation data directory");
  tr->add_option("--init-checkpoint", train_o.init_checkpoint, "model directory to start from");
  tr->add_option("--seed", train_o.seed, "initialization and shuffling seed");
  tr->add_option("--out", train_o.out, "model directory to write");
  tr->add_option("--log-csv", train_o.log_csv, "training log (default <out>/train_log.csv)");
  tr->add_option("--n", train_o.n, "candidates per query");
  tr->add_option("--rel-threshold", train_o.rel_threshold, "grade counted as relevant");
  tr->add_option("--steps", train_o.train.steps, "optimizer steps");
  tr->add_option("--lr", train_o.train.learning_rate, "Adam learning rate");
  tr->add_option("--batch", train_o.train.batch, "candidate sets per step");
  tr->add_option("--val-every", train_o.train.val_every, "validation interval in steps");
  tr->add_option("--checkpoint-every", train_o.train.checkpoint_every, "checkpoint interval in steps");
  tr->add_flag("--no-global", train_o.no_global, "train without set attention");
  tr->add_option("--layers", train_o.model.layers, "encoder layers");
  tr->add_option("--global-start", train_o.model.global_start, "first encoder layer with set attention");
  tr->add_option("--hidden", train_o.model.hidden, "model width");
  tr->add_option("--heads-local", train_o.model.heads_local, "token attention heads");
  tr->add_option("--heads-global", train_o.model.heads_global, "set attention heads");
  tr->add_option("--ffn", train_o.model.ffn, "feed-forward width");
  tr->add_option("--max-seq-len", train_o.model.max_seq_len, "tokens per candidate");
  tr->add_option("--init-std", train_o.model.init_std, "weight initialization scale");
  leaf(tr, train_o.config, [&] {
    train_o.train.threads = threads;
    run_train(train_o);
  });

  // rerank
  RerankOptions rerank_o;
  auto* rr = app.add_subcommand("rerank", "score candidate sets with a trained model");
  rr->add_option("--checkpoint", rerank_o.checkpoint, "model directory");
  rerank_o.data.add(rr);
  rr->add_option("--mode", rerank_o.mode, "full, no_feature or no_global")
      ->check(CLI::IsMember({"full", "no_feature", "no_global"}));
  rr->add_option("--n", rerank_o.n, "candidates per query");
  rr->add_option("--out-run", rerank_o.out_run, "run file to write");
  rr->add_option("--dump-attention", rerank_o.dump_attention, "write set-attention similarities to this CSV");
  rr->add_option("--tag", rerank_o.tag, "run tag");
  leaf(rr, rerank_o.config, [&] {
    rerank_o.threads = threads;
    run_rerank(rerank_o);
  });

  // eval
  EvalOptions eval_o;
  auto* ev = app.add_subcommand("eval", "evaluate a run against qrels");
  ev->add_option("--run", eval_o.run, "run file");
  ev->add_option("--qrels", eval_o.qrels, "qrels file");
  ev->add_option("--metrics", eval_o.metrics, "comma-separated: mrr@10,mrr,map,ndcg@10");
  ev->add_option("--rel-threshold", eval_o.rel_threshold, "grade counted as relevant");
  ev->add_option("--out-csv", eval_o.out_csv, "CSV to write (default stdout)");
  leaf(ev, eval_o.config, [&] { run_eval(eval_o); });

  // fuse
  auto* fuse = app.add_subcommand("fuse", "linear score fusion");
  fuse->require_subcommand(1);
  FuseOptions fit_o, apply_o;
  auto* fit = fuse->add_subcommand("fit", "fit fusion weights by coordinate ascent");
  fit->add_option("--runs", fit_o.runs, "run files; the first defines the candidates");
  fit->add_option("--names", fit_o.names, "feature names (default: run file stems)");
  fit->add_option("--qrels", fit_o.qrels, "qrels file");
  fit->add_option("--seed", fit_o.fit.seed, "restart seed");
  fit->add_option("--restarts", fit_o.fit.restarts, "random restarts");
  fit->add_option("--out-model", fit_o.out_model, "fusion model to write");
  leaf(fit, fit_o.config, [&] { run_fuse_fit(fit_o); });
  auto* apply = fuse->add_subcommand("apply", "score runs with fusion weights");
  apply->add_option("--model", apply_o.model, "fusion model");
  apply->add_option("--runs", apply_o.runs, "run files in the model's feature order");
  apply->add_option("--out-run", apply_o.out_run, "run file to write");
  apply->add_option("--tag", apply_o.tag, "run tag");
  leaf(apply, apply_o.config, [&] { run_fuse_apply(apply_o); });

  // analyze
  auto* analyze = app.add_subcommand("analyze", "attention and score statistics");
  analyze->require_subcommand(1);
  AnalyzeOptions att_o, scores_o;
  auto* att = analyze->add_subcommand("attention", "summarize an attention dump by label pair");
  att->add_option("--in", att_o.in, "attention CSV from 'rerank --dump-attention'");
  att->add_option("--out-csv", att_o.out_csv, "summary CSV to write");
  leaf(att, att_o.config, [&] { run_analyze_attention(att_o); });
  auto* sc = analyze->add_subcommand("scores", "score distribution per grade");
  sc->add_option("--run", scores_o.run, "scored run");
  sc->add_option("--qrels", scores_o.qrels, "qrels file");
  sc->add_option("--out-csv", scores_o.out_csv, "per-document CSV to write");
  sc->add_option("--out-summary", scores_o.out_summary, "per-grade summary CSV to write");
  leaf(sc, scores_o.config, [&] { run_analyze_scores(scores_o); });

  // plot
  PlotOptions plot_o;
  auto* plot = app.add_subcommand("plot", "render an analysis CSV as SVG");
  plot->add_option("--in", plot_o.in, "score CSV or label-pair summary CSV");
  plot->add_option("--out", plot_o.out, "SVG to write");
  plot->add_option("--title", plot_o.title, "figure title");
  plot->add_option("--bins", plot_o.bins, "histogram bins")->check(CLI::PositiveNumber);
  leaf(plot, plot_o.config, [&] { run_plot(plot_o); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    for (auto& [sub, path] : configs)
      if (sub->parsed() && !path->empty()) apply_config_file(sub, *path);
    for (auto& [sub, fn] : actions) {
      if (sub->parsed()) {
        fn();
        return 0;
      }
    }
    throw UsageError("no command given");
  } catch (const UsageError& e) {
    std::cerr << "setrank: " << e.what() << "\nRun with --help for usage.\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "setrank: " << e.what() << '\n';
    return 1;
  }
}
