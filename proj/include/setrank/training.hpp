#pragma once

// Listwise fine-tuning: every step scores whole candidate sets and minimizes
// the mean cross-entropy of the true/false decision per candidate. Training
// runs in two phases, first with feature-free templates, then with the
// retrieval feature in the template.

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "setrank/metrics.hpp"
#include "setrank/model.hpp"

namespace setrank {

enum class TrainPhase { warmup_no_feature, with_feature };

inline std::string to_string(TrainPhase phase) {
  return phase == TrainPhase::warmup_no_feature ? "warmup" : "feature";
}

inline TrainPhase parse_phase(const std::string& text) {
  if (text == "warmup" || text == "warmup_no_feature") return TrainPhase::warmup_no_feature;
  if (text == "feature" || text == "with_feature") return TrainPhase::with_feature;
  throw std::invalid_argument("unknown training phase '" + text + "'");
}

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t step, double loss)
      : std::runtime_error("non-finite loss " + std::to_string(loss) + " at step " +
                           std::to_string(step)),
        step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

struct TrainConfig {
  TrainPhase phase = TrainPhase::warmup_no_feature;
  double learning_rate = 1e-3;
  std::size_t steps = 2000;
  std::size_t batch = 1;  // candidate sets per step
  std::uint64_t seed = 1;
  std::size_t checkpoint_every = 0;
  std::size_t val_every = 0;
  bool use_global = true;
  std::size_t threads = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const {
    if (steps < 1) throw std::invalid_argument("train config: steps must be >= 1");
    if (!(learning_rate >= 0.0)) throw std::invalid_argument("train config: learning_rate must be >= 0");
    if (batch < 1) throw std::invalid_argument("train config: batch must be >= 1");
    if (threads < 1) throw std::invalid_argument("train config: threads must be >= 1");
  }

  ForwardOptions options() const {
    return {phase == TrainPhase::with_feature, use_global};
  }
};

struct TrainExample {
  CandidateSet set;
  std::vector<int> targets;  // 1 means the candidate should decode "true"
};

// Grade >= threshold marks a "true" target; unjudged candidates are "false".
inline std::vector<TrainExample> make_examples(const std::vector<CandidateSet>& sets,
                                               const Qrels& qrels, int threshold = 1) {
  std::vector<TrainExample> out;
  for (const auto& s : sets) {
    if (s.size() == 0) continue;
    TrainExample ex{s, {}};
    auto it = qrels.find(s.query_id);
    for (const auto& c : s.candidates) {
      int grade = 0;
      if (it != qrels.end()) {
        auto g = it->second.find(c.doc_id);
        if (g != it->second.end()) grade = g->second;
      }
      ex.targets.push_back(grade >= threshold ? 1 : 0);
    }
    out.push_back(std::move(ex));
  }
  return out;
}

// Mean over candidates of the cross-entropy between the (true, false) logit
// pair and the target token.
inline Tensor set_loss(const Tensor& logits, std::span<const int> targets) {
  std::vector<int> classes(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) classes[i] = targets[i] ? 0 : 1;
  return cross_entropy(logits, classes);
}

class Adam {
 public:
  Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ModelParams& params) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    std::size_t slot = 0;
    params.for_each([&](const std::string&, Tensor& p) {
      if (slot == m_.size()) {
        m_.emplace_back(p.size(), 0.0);
        v_.emplace_back(p.size(), 0.0);
      }
      auto& m = m_[slot];
      auto& v = v_[slot];
      ++slot;
      if (!p.has_grad()) return;
      auto g = p.grad();
      auto w = p.mutable_data();
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
        w[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      }
    });
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct TrainLogRow {
  std::size_t step = 0;
  TrainPhase phase = TrainPhase::warmup_no_feature;
  double loss = 0.0;
  std::optional<double> val_mrr10;
};

inline void write_train_log(std::ostream& os, const std::vector<TrainLogRow>& rows) {
  os << "step,phase,loss,val_mrr10\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.9f", r.loss);
    os << r.step << ',' << to_string(r.phase) << ',' << buf << ',';
    if (r.val_mrr10) {
      std::snprintf(buf, sizeof(buf), "%.6f", *r.val_mrr10);
      os << buf;
    }
    os << '\n';
  }
}

// Re-ranks every set and evaluates MRR@10 against qrels.
inline std::vector<RunRecord> rerank_run(const Reranker& model, const std::vector<CandidateSet>& sets,
                                         ForwardOptions options, const std::string& tag = "rerank") {
  std::vector<RunRecord> run;
  for (const auto& s : sets) {
    auto ranked = Reranker::rank_by_score(s, model.score(s, options));
    for (const auto& r : ranked) run.push_back({s.query_id, r.doc_id, r.new_rank, r.score, tag});
  }
  return run;
}

inline double validation_mrr10(const Reranker& model, const std::vector<CandidateSet>& sets,
                               const Qrels& qrels, ForwardOptions options, int threshold = 1) {
  return mrr_at_k(rerank_run(model, sets, options), qrels, 10, threshold).mean;
}

struct Validation {
  std::vector<CandidateSet> sets;
  Qrels qrels;
  int threshold = 1;
};

struct TrainResult {
  std::vector<TrainLogRow> log;
};

// Gradient of one set's loss, computed on aliased parameters so sets can be
// processed on separate threads. Returns the loss.
inline double set_gradient(const Reranker& model, const ModelParams& shadow,
                           std::span<const TokenizedInput> inputs, std::span<const int> targets,
                           bool use_global) {
  auto fwd = model.forward(inputs, use_global, &shadow);
  Tensor loss = set_loss(fwd.logits, targets);
  loss.backward();
  return loss.item();
}

inline TrainResult train(Reranker& model, const std::vector<TrainExample>& data,
                         const TrainConfig& config, const Validation* validation = nullptr,
                         const std::function<void(std::size_t)>& on_checkpoint = {}) {
  config.validate();
  if (data.empty()) throw std::invalid_argument("train: no training examples");
  const ForwardOptions options = config.options();

  std::vector<std::vector<TokenizedInput>> inputs;
  inputs.reserve(data.size());
  for (const auto& ex : data) {
    if (ex.set.size() == 0) throw EmptySetError("training set for " + ex.set.query_id + " is empty");
    inputs.push_back(model.encode(ex.set, options.use_feature));
  }

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;

  Adam adam(config.learning_rate, config.beta1, config.beta2, config.adam_eps);
  TrainResult result;
  ModelParams& params = model.params();

  for (std::size_t step = 1; step <= config.steps; ++step) {
    std::vector<std::size_t> batch;
    for (std::size_t b = 0; b < config.batch; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(order[cursor++]);
    }

    std::vector<ModelParams> shadows;
    for (std::size_t b = 0; b < batch.size(); ++b) shadows.push_back(params.alias());
    std::vector<double> losses(batch.size());
    auto work = [&](std::size_t b) {
      const auto& ex = data[batch[b]];
      losses[b] = set_gradient(model, shadows[b], inputs[batch[b]], ex.targets, options.use_global);
    };
    const std::size_t workers = std::min(config.threads, batch.size());
    if (workers <= 1) {
      for (std::size_t b = 0; b < batch.size(); ++b) work(b);
    } else {
      std::vector<std::thread> pool;
      for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
          for (std::size_t b = w; b < batch.size(); b += workers) work(b);
        });
      }
      for (auto& t : pool) t.join();
    }

    // accumulate in batch order
    const double inv = 1.0 / static_cast<double>(batch.size());
    std::vector<Tensor*> targets;
    params.for_each([&](const std::string&, Tensor& p) { p.zero_grad(); targets.push_back(&p); });
    for (auto& shadow : shadows) {
      std::size_t slot = 0;
      shadow.for_each([&](const std::string&, Tensor& s) {
        Tensor& p = *targets[slot++];
        if (!s.has_grad()) return;
        auto dst = p.mutable_grad();
        auto src = s.grad();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i] * inv;
      });
    }
    const double loss = order_free_sum(losses) * inv;
    if (!std::isfinite(loss)) throw TrainingDiverged(step, loss);
    adam.step(params);
    params.for_each([](const std::string&, Tensor& p) { p.zero_grad(); });

    TrainLogRow row{step, config.phase, loss, std::nullopt};
    if (validation && config.val_every && (step % config.val_every == 0 || step == config.steps)) {
      row.val_mrr10 = validation_mrr10(model, validation->sets, validation->qrels, options,
                                       validation->threshold);
    }
    result.log.push_back(row);
    if (on_checkpoint && config.checkpoint_every && step % config.checkpoint_every == 0) {
      on_checkpoint(step);
    }
  }
  return result;
}

}  // namespace setrank
