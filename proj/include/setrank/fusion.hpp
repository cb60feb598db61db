#pragma once

// Linear score fusion trained by coordinate ascent on MRR@10.
//
// Features are min-max normalized within each query before weighting. Each
// restart optimizes one weight at a time over a geometric step schedule in
// both directions, keeps any strict improvement, and L1-normalizes the
// weights after every sweep. The first restarts start on the coordinate
// axes, so the fit is never worse than the best single feature.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace setrank {

struct FusionQuery {
  std::string query_id;
  std::vector<std::string> doc_ids;
  std::vector<std::vector<double>> features;  // [candidate][feature]
  std::vector<int> labels;                    // > 0 is relevant
};

struct FusionConfig {
  std::size_t steps_per_coordinate = 25;
  std::size_t sweeps = 5;
  std::size_t restarts = 5;
  double step_base = 0.05;
  double step_scale = 2.0;
  std::uint64_t seed = 1;
};

struct FusionModel {
  std::vector<std::string> feature_names;
  std::vector<double> weights;

  // Line 1: feature names, line 2: weights (round-trip precision).
  void save(std::ostream& os) const {
    for (std::size_t i = 0; i < feature_names.size(); ++i) os << (i ? " " : "") << feature_names[i];
    os << '\n';
    char buf[40];
    for (std::size_t i = 0; i < weights.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", weights[i]);
      os << (i ? " " : "") << buf;
    }
    os << '\n';
  }

  static FusionModel load(std::istream& is) {
    FusionModel m;
    std::string names, weights;
    if (!std::getline(is, names) || !std::getline(is, weights)) {
      throw std::runtime_error("fusion model: expected two lines");
    }
    std::istringstream ns(names), ws(weights);
    for (std::string t; ns >> t;) m.feature_names.push_back(t);
    for (std::string t; ws >> t;) m.weights.push_back(std::stod(t));
    if (m.weights.size() != m.feature_names.size() || m.weights.empty()) {
      throw std::runtime_error("fusion model: names and weights disagree");
    }
    return m;
  }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write fusion model " + path);
    save(os);
  }

  static FusionModel load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open fusion model " + path);
    return load(is);
  }
};

struct FusionFit {
  FusionModel model;
  double objective = 0.0;
  std::size_t restart = 0;
  bool degenerate = false;         // nothing scored above 0; weights are uniform
  std::vector<double> trace;       // objective after every accepted step, per restart concatenated
  std::vector<std::size_t> trace_restart;
};

// Per-query min-max normalization of every feature column; a constant
// column becomes all zeros.
inline std::vector<std::vector<double>> normalize_features(const std::vector<std::vector<double>>& features) {
  auto out = features;
  if (features.empty()) return out;
  const std::size_t f = features.front().size();
  for (std::size_t j = 0; j < f; ++j) {
    double lo = features[0][j], hi = features[0][j];
    for (const auto& row : features) {
      lo = std::min(lo, row.at(j));
      hi = std::max(hi, row.at(j));
    }
    for (auto& row : out) row[j] = hi > lo ? (row[j] - lo) / (hi - lo) : 0.0;
  }
  return out;
}

// Weighted sum of one already-normalized feature vector.
inline double fuse_normalized(const FusionModel& model, const std::vector<double>& row) {
  if (row.size() != model.weights.size()) {
    throw std::invalid_argument("fuse: " + std::to_string(row.size()) + " features, model has " +
                                std::to_string(model.weights.size()));
  }
  double s = 0.0;
  for (std::size_t j = 0; j < row.size(); ++j) s += model.weights[j] * row[j];
  return s;
}

// Per-query normalization followed by the weighted sum.
inline std::vector<double> fuse_scores(const FusionModel& model,
                                       const std::vector<std::vector<double>>& features) {
  for (const auto& row : features) {
    if (row.size() != model.weights.size()) {
      throw std::invalid_argument("fuse_scores: " + std::to_string(row.size()) +
                                  " features, model has " + std::to_string(model.weights.size()));
    }
  }
  auto normed = normalize_features(features);
  std::vector<double> out;
  for (const auto& row : normed) {
    double s = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) s += model.weights[j] * row[j];
    out.push_back(s);
  }
  return out;
}

namespace detail {

// MRR@10 of a weighting over pre-normalized queries; ties keep input order.
inline double fusion_objective(const std::vector<std::vector<std::vector<double>>>& normed,
                               const std::vector<FusionQuery>& queries, const std::vector<double>& w) {
  double total = 0.0;
  std::vector<double> scores;
  std::vector<std::size_t> order;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const auto& rows = normed[q];
    scores.assign(rows.size(), 0.0);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < w.size(); ++j) scores[i] += w[j] * rows[i][j];
    order.resize(rows.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    for (std::size_t r = 0; r < order.size() && r < 10; ++r) {
      if (queries[q].labels[order[r]] > 0) {
        total += 1.0 / static_cast<double>(r + 1);
        break;
      }
    }
  }
  return queries.empty() ? 0.0 : total / static_cast<double>(queries.size());
}

inline void l1_normalize(std::vector<double>& w) {
  double norm = 0.0;
  for (double v : w) norm += std::abs(v);
  if (norm > 0) for (double& v : w) v /= norm;
}

}  // namespace detail

inline FusionFit coordinate_ascent_fit(const std::vector<FusionQuery>& queries,
                                       const std::vector<std::string>& feature_names,
                                       const FusionConfig& config = {}) {
  const std::size_t f = feature_names.size();
  if (f == 0) throw std::invalid_argument("coordinate ascent: no features");
  bool any_relevant = false;
  std::vector<std::vector<std::vector<double>>> normed;
  for (const auto& q : queries) {
    if (q.features.size() != q.labels.size()) throw std::invalid_argument("query " + q.query_id + ": label count");
    for (const auto& row : q.features)
      if (row.size() != f) throw std::invalid_argument("query " + q.query_id + ": feature arity");
    for (int l : q.labels) any_relevant = any_relevant || l > 0;
    normed.push_back(normalize_features(q.features));
  }
  if (!any_relevant) throw std::invalid_argument("coordinate ascent: no query has a relevant candidate");

  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  FusionFit best;
  best.objective = -1.0;
  double max_probe = 0.0;
  const std::size_t restarts = std::max(config.restarts, f);

  for (std::size_t r = 0; r < restarts; ++r) {
    std::vector<double> w(f, 0.0);
    if (r < f) {
      w[r] = 1.0;
    } else {
      for (double& v : w) v = unit(rng);
      detail::l1_normalize(w);
    }
    double current = detail::fusion_objective(normed, queries, w);
    max_probe = std::max(max_probe, current);
    std::vector<double> trace{current};

    for (std::size_t sweep = 0; sweep < config.sweeps; ++sweep) {
      bool improved = false;
      for (std::size_t i = 0; i < f; ++i) {
        const double origin = w[i];
        double best_value = origin;
        for (double direction : {1.0, -1.0}) {
          double step = config.step_base * direction;
          if (origin != 0.0 && std::abs(step) > 0.5 * std::abs(origin)) {
            step = config.step_base * std::abs(origin) * direction;
          }
          double total = 0.0;
          for (std::size_t s = 0; s < config.steps_per_coordinate; ++s) {
            total += step;
            w[i] = origin + total;
            const double value = detail::fusion_objective(normed, queries, w);
            max_probe = std::max(max_probe, value);
            if (value > current) {
              current = value;
              best_value = w[i];
              improved = true;
              trace.push_back(current);
            }
            step *= config.step_scale;
          }
        }
        w[i] = best_value;
      }
      detail::l1_normalize(w);
      if (!improved) break;
    }

    if (current > best.objective) {
      best.objective = current;
      best.restart = r;
      best.model.weights = w;
    }
    best.trace.insert(best.trace.end(), trace.begin(), trace.end());
    best.trace_restart.insert(best.trace_restart.end(), trace.size(), r);
  }

  best.model.feature_names = feature_names;
  if (max_probe <= 0.0) {
    best.degenerate = true;
    best.model.weights.assign(f, 1.0 / static_cast<double>(f));
    best.objective = 0.0;
  }
  return best;
}

}  // namespace setrank
