#pragma once

// Deterministic synthetic ranking collections.
//
// pointwise:   the relevant passage contains the query's answer word; the
//              other candidates carry different answer words (or, for hard
//              negatives, the same one).
// comparative: every passage carries one word from an ordered magnitude
//              scale. The relevant candidates hold grade g+1, the others
//              grade g (or lower, see distractor_strength). Only the set as a
//              whole tells which grade is the top one.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "setrank/retrieval.hpp"

namespace setrank {

enum class SynthTask { pointwise, comparative };

inline SynthTask parse_task(const std::string& s) {
  if (s == "pointwise") return SynthTask::pointwise;
  if (s == "comparative") return SynthTask::comparative;
  throw std::invalid_argument("unknown synthetic task '" + s + "'");
}

inline const std::vector<std::string>& magnitude_scale() {
  static const std::vector<std::string> scale = {
      "minuscule", "tiny",  "small", "modest",  "medium",   "sizable",  "large",
      "big",       "great", "huge",  "immense", "enormous", "colossal", "gigantic"};
  return scale;
}

struct SynthSpec {
  SynthTask task = SynthTask::comparative;
  std::size_t num_queries = 100;
  std::size_t candidates = 8;     // n
  std::size_t scale_length = 12;  // magnitude words used (comparative)
  std::size_t filler_words = 5;   // per passage
  std::size_t num_relevant = 1;   // comparative: candidates at the top grade
  std::size_t hard_negatives = 0; // pointwise: distractors sharing the answer word
  // comparative: probability that a distractor sits exactly one grade below
  // the top; otherwise its grade is uniform on [0, base].
  double distractor_strength = 1.0;
  // Probability that a query's first-stage scores favour the relevant
  // candidate (relevant in [180,190], hard negatives in [165,175]).
  // Otherwise every score is uniform on [165,190].
  double feature_signal = 0.0;
  std::uint64_t seed = 7;

  void validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("synth spec: " + m); };
    if (candidates < 1) fail("need at least one candidate per query");
    if (task == SynthTask::comparative) {
      if (candidates < 2) fail("comparative task needs n >= 2");
      if (scale_length < 2 || scale_length > magnitude_scale().size())
        fail("scale_length must be in [2, " + std::to_string(magnitude_scale().size()) + "]");
      if (candidates > scale_length) fail("n exceeds the magnitude scale length");
      if (num_relevant < 1 || num_relevant >= candidates) fail("num_relevant must be in [1, n)");
    } else if (hard_negatives + 1 > candidates) {
      fail("hard_negatives must leave room for the relevant candidate");
    }
    if (distractor_strength < 0 || distractor_strength > 1) fail("distractor_strength outside [0,1]");
    if (feature_signal < 0 || feature_signal > 1) fail("feature_signal outside [0,1]");
  }
};

struct SynthData {
  std::vector<Document> corpus;
  std::vector<Query> queries;
  std::vector<QrelRecord> qrels;
  std::vector<RunRecord> run;
};

namespace detail {

inline const std::vector<std::string>& filler_pool() {
  static const std::vector<std::string> pool = {
      "river",  "stone",  "garden", "window", "lantern", "harbor", "meadow", "copper",
      "violin", "pepper", "canvas", "marble", "thunder", "velvet", "orchid", "saddle",
      "glacier","anchor", "pillow", "quartz", "ribbon",  "timber", "willow", "beacon",
      "candle", "falcon", "ginger", "hollow", "island",  "jacket", "kettle", "ladder",
      "magnet", "needle", "oyster", "pebble", "rocket",  "silver", "tunnel", "walnut"};
  return pool;
}

inline const std::vector<std::string>& topic_pool() {
  static const std::vector<std::string> pool = {
      "apple",  "bridge", "castle", "dragon", "engine", "forest", "guitar", "hammer",
      "igloo",  "jungle", "kitten", "lemon",  "mirror", "nickel", "ocean",  "parrot",
      "quiver", "rabbit", "spider", "turtle", "umbrella","valley", "wagon",  "yacht"};
  return pool;
}

inline const std::vector<std::string>& answer_pool() {
  static const std::vector<std::string> pool = {
      "alpha",  "bravo",  "cobalt", "delta",  "ember",   "fjord",  "gamma",  "helix",
      "indigo", "jasper", "kappa",  "lambda", "mosaic",  "nectar", "omega",  "prism",
      "quasar", "raven",  "sigma",  "tango",  "ultra",   "vortex", "whisky", "xenon",
      "yonder", "zephyr", "amber",  "basil",  "cedar",   "dune",   "ether",  "flint"};
  return pool;
}

}  // namespace detail

// Magnitude word index found in a passage, or -1.
inline int magnitude_grade(const std::string& passage) {
  const auto& scale = magnitude_scale();
  for (const auto& w : index_terms(passage)) {
    auto it = std::find(scale.begin(), scale.end(), w);
    if (it != scale.end()) return static_cast<int>(it - scale.begin());
  }
  return -1;
}

inline SynthData generate(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  auto uniform_int = [&](std::size_t lo, std::size_t hi) {  // inclusive
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  auto uniform_real = [&](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  auto pick = [&](const std::vector<std::string>& pool) { return pool[uniform_int(0, pool.size() - 1)]; };
  const auto& filler = detail::filler_pool();
  const auto& scale = magnitude_scale();
  const std::size_t n = spec.candidates;

  SynthData data;
  for (std::size_t qi = 0; qi < spec.num_queries; ++qi) {
    const std::string qid = "q" + std::to_string(qi + 1);
    const std::string topic = pick(detail::topic_pool());
    std::vector<std::string> key_word(n);  // grade word or answer word per candidate
    std::vector<int> label(n, 0);
    std::vector<bool> hard(n, false);

    if (spec.task == SynthTask::comparative) {
      data.queries.push_back({qid, "which " + topic + " is the largest"});
      const std::size_t base = uniform_int(0, spec.scale_length - 2);
      std::vector<std::size_t> grades;
      for (std::size_t i = 0; i < spec.num_relevant; ++i) grades.push_back(base + 1);
      for (std::size_t i = spec.num_relevant; i < n; ++i) {
        const bool near = uniform_real(0.0, 1.0) < spec.distractor_strength;
        grades.push_back(near ? base : uniform_int(0, base));
      }
      std::vector<std::size_t> slot(n);
      std::iota(slot.begin(), slot.end(), std::size_t{0});
      std::shuffle(slot.begin(), slot.end(), rng);
      for (std::size_t i = 0; i < n; ++i) {
        key_word[slot[i]] = scale[grades[i]];
        label[slot[i]] = i < spec.num_relevant ? 1 : 0;
      }
    } else {
      const auto& answers = detail::answer_pool();
      const std::size_t answer = uniform_int(0, answers.size() - 1);
      data.queries.push_back({qid, "find the " + topic + " " + answers[answer]});
      std::vector<std::size_t> slot(n);
      std::iota(slot.begin(), slot.end(), std::size_t{0});
      std::shuffle(slot.begin(), slot.end(), rng);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t s = slot[i];
        if (i == 0) {
          key_word[s] = answers[answer];
          label[s] = 1;
        } else if (i <= spec.hard_negatives) {
          key_word[s] = answers[answer];
          hard[s] = true;
        } else {
          std::size_t other = uniform_int(0, answers.size() - 2);
          if (other >= answer) ++other;
          key_word[s] = answers[other];
        }
      }
    }

    const bool signal = uniform_real(0.0, 1.0) < spec.feature_signal;
    std::vector<double> score(n);
    std::vector<std::string> doc_ids(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<std::string> words;
      for (std::size_t w = 0; w < spec.filler_words; ++w) words.push_back(pick(filler));
      words.push_back(topic);
      words.push_back(key_word[i]);
      std::shuffle(words.begin(), words.end(), rng);
      std::string passage;
      for (const auto& w : words) passage += (passage.empty() ? "" : " ") + w;
      const std::string title = pick(filler) + " " + pick(filler);
      doc_ids[i] = "d" + std::to_string(qi + 1) + "_" + std::to_string(i + 1);
      data.corpus.push_back({doc_ids[i], title, passage});
      data.qrels.push_back({qid, doc_ids[i], label[i]});
      if (signal && label[i]) {
        score[i] = uniform_real(180.0, 190.0);
      } else if (signal && hard[i]) {
        score[i] = uniform_real(165.0, 175.0);
      } else {
        score[i] = uniform_real(165.0, 190.0);
      }
      // scores are stored at run-file precision
      score[i] = std::round(score[i] * 1e6) / 1e6;
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
    for (std::size_t r = 0; r < n; ++r) {
      data.run.push_back({qid, doc_ids[order[r]], static_cast<int>(r + 1), score[order[r]], "synth"});
    }
  }
  return data;
}

// Splits generated data into the first `head` queries and the rest.
inline std::pair<SynthData, SynthData> split_queries(const SynthData& data, std::size_t head) {
  std::set<std::string> first;
  for (std::size_t i = 0; i < data.queries.size() && i < head; ++i) first.insert(data.queries[i].id);
  SynthData a, b;
  auto in_first = [&](const std::string& qid) { return first.count(qid) != 0; };
  for (const auto& q : data.queries) (in_first(q.id) ? a : b).queries.push_back(q);
  for (const auto& q : data.qrels) (in_first(q.query_id) ? a : b).qrels.push_back(q);
  for (const auto& r : data.run) (in_first(r.query_id) ? a : b).run.push_back(r);
  std::set<std::string> docs_a;
  for (const auto& r : a.run) docs_a.insert(r.doc_id);
  for (const auto& d : data.corpus) (docs_a.count(d.id) ? a : b).corpus.push_back(d);
  return {std::move(a), std::move(b)};
}

inline void save_synth(const std::string& dir, const SynthData& data) {
  std::filesystem::create_directories(dir);
  save_corpus(dir + "/corpus.tsv", data.corpus);
  save_queries(dir + "/queries.tsv", data.queries);
  save_qrels(dir + "/qrels.txt", data.qrels);
  save_run(dir + "/run.trec", data.run);
}

inline SynthData load_synth(const std::string& dir) {
  return {load_corpus(dir + "/corpus.tsv"), load_queries(dir + "/queries.tsv"),
          load_qrels(dir + "/qrels.txt"), load_run(dir + "/run.trec")};
}

// Expected MRR@10 on comparative data of the best scorer that sees one
// candidate at a time, computed by enumerating the generator's grade
// distribution. The scorer ranks by P(relevant | grade) and breaks ties
// uniformly at random (first-stage order carries no signal).
inline double comparative_pointwise_ceiling(const SynthSpec& spec) {
  spec.validate();
  if (spec.task != SynthTask::comparative) throw std::invalid_argument("comparative task only");
  const std::size_t grades = spec.scale_length;
  const std::size_t n = spec.candidates, r = spec.num_relevant, d = n - r;
  const double s = spec.distractor_strength;
  const double p_base = 1.0 / static_cast<double>(grades - 1);

  struct Config {
    double prob;
    std::size_t top;                    // grade of the relevant candidates
    std::vector<std::size_t> counts;    // distractors per grade
  };
  std::vector<Config> configs;
  for (std::size_t base = 0; base + 1 < grades; ++base) {
    // per-distractor grade distribution on [0, base]
    std::vector<double> q(base + 1, (1.0 - s) / static_cast<double>(base + 1));
    q[base] += s;
    // enumerate distractor grade counts (compositions of d into base+1 bins)
    std::vector<std::size_t> counts(base + 1, 0);
    std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t bin, std::size_t left) {
      if (bin == base) {
        counts[bin] = left;
        double prob = p_base;
        double coef = std::tgamma(static_cast<double>(d) + 1.0);
        for (std::size_t g = 0; g <= base; ++g) {
          coef /= std::tgamma(static_cast<double>(counts[g]) + 1.0);
          prob *= std::pow(q[g], static_cast<double>(counts[g]));
        }
        prob *= coef;
        if (prob > 0) configs.push_back({prob, base + 1, counts});
        return;
      }
      for (std::size_t c = 0; c <= left; ++c) {
        counts[bin] = c;
        rec(bin + 1, left - c);
      }
    };
    rec(0, d);
  }

  // posterior P(relevant | grade) = E[relevant with grade] / E[candidates with grade]
  std::vector<double> rel_mass(grades, 0.0), all_mass(grades, 0.0);
  for (const auto& c : configs) {
    rel_mass[c.top] += c.prob * static_cast<double>(r);
    all_mass[c.top] += c.prob * static_cast<double>(r);
    for (std::size_t g = 0; g < c.counts.size(); ++g) all_mass[g] += c.prob * static_cast<double>(c.counts[g]);
  }
  std::vector<double> posterior(grades, 0.0);
  for (std::size_t g = 0; g < grades; ++g)
    if (all_mass[g] > 0) posterior[g] = rel_mass[g] / all_mass[g];
  auto same = [](double a, double b) { return std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(a)); };

  double expected = 0.0;
  for (const auto& c : configs) {
    const double p_rel = posterior[c.top];
    std::size_t above = 0, tied = 0;
    for (std::size_t g = 0; g < c.counts.size(); ++g) {
      if (same(posterior[g], p_rel)) tied += c.counts[g];
      else if (posterior[g] > p_rel) above += c.counts[g];
    }
    // first relevant among r relevant and `tied` others in random order
    const std::size_t group = tied + r;
    double rr = 0.0;
    for (std::size_t m = 1; m <= tied + 1; ++m) {
      // P(first relevant at position m) = C(group-m, r-1) / C(group, r)
      double p = static_cast<double>(r) / static_cast<double>(group);
      for (std::size_t k = 1; k < m; ++k)
        p *= static_cast<double>(tied - (k - 1)) / static_cast<double>(group - k);
      const std::size_t rank = above + m;
      if (rank <= 10) rr += p / static_cast<double>(rank);
    }
    expected += c.prob * rr;
  }
  return expected;
}

}  // namespace setrank
