#pragma once

#include <algorithm>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "setrank/model.hpp"
#include "setrank/training.hpp"

namespace setrank::testing {

inline const std::vector<std::string>& tiny_words() {
  static const std::vector<std::string> words = {"apple", "river", "stone", "cloud", "lamp",  "garden",
                                                 "tiger", "bread", "piano", "comet", "maple", "harbor"};
  return words;
}

inline Vocab tiny_vocab() { return Vocab::build(tiny_words()); }

// n candidates with random short passages drawn from tiny_words().
inline CandidateSet random_set(std::size_t n, std::uint64_t seed, std::size_t passage_words = 4) {
  std::mt19937_64 rng(seed);
  const auto& words = tiny_words();
  std::uniform_int_distribution<std::size_t> pick(0, words.size() - 1);
  std::uniform_real_distribution<double> score(165.0, 190.0);
  CandidateSet set{"q" + std::to_string(seed), words[pick(rng)] + " " + words[pick(rng)], {}};
  for (std::size_t i = 0; i < n; ++i) {
    std::string passage;
    const std::size_t len = 1 + pick(rng) % passage_words;
    for (std::size_t w = 0; w < len; ++w) passage += (w ? " " : "") + words[pick(rng)];
    const double s = score(rng);
    set.candidates.push_back({"d" + std::to_string(i), i % 3 == 0 ? "" : words[pick(rng)], passage, s,
                              static_cast<int>(i + 1), discretize_feature(s, FeatureSpec{})});
  }
  return set;
}

inline ModelConfig tiny_config(std::size_t layers = 2, std::size_t global_start = 2, std::size_t hidden = 16) {
  ModelConfig c;
  c.layers = layers;
  c.global_start = global_start;
  c.hidden = hidden;
  c.heads_local = 2;
  c.heads_global = 2;
  c.ffn = 2 * hidden;
  c.max_seq_len = 24;
  return c;
}

// Finite-difference check of the set loss against every parameter group.
// Up to `samples` entries per group are probed, preferring entries with a
// nonzero analytic gradient. Returns group name -> relative error.
inline std::map<std::string, double> model_gradient_errors(Reranker& model, const CandidateSet& set,
                                                           const std::vector<int>& targets, ForwardOptions options,
                                                           std::size_t samples = 6, double h = 1e-5) {
  auto inputs = model.encode(set, options.use_feature);
  auto loss = [&] { return set_loss(model.forward(inputs, options.use_global).logits, targets); };
  auto& params = model.params();
  params.for_each([](const std::string&, Tensor& p) { p.zero_grad(); });
  loss().backward();

  std::map<std::string, double> errors;
  std::mt19937_64 rng(123);
  params.for_each([&](const std::string& name, Tensor& p) {
    std::vector<double> grad(p.size(), 0.0);
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), grad.begin());
    std::vector<std::size_t> nonzero, picked;
    for (std::size_t i = 0; i < grad.size(); ++i)
      if (grad[i] != 0.0) nonzero.push_back(i);
    std::shuffle(nonzero.begin(), nonzero.end(), rng);
    for (std::size_t i = 0; i < nonzero.size() && picked.size() < samples; ++i) picked.push_back(nonzero[i]);
    std::uniform_int_distribution<std::size_t> any(0, grad.size() - 1);
    while (picked.size() < std::min(samples + 2, grad.size())) picked.push_back(any(rng));

    std::vector<double> analytic, numeric;
    auto w = p.mutable_data();
    for (auto i : picked) {
      const double saved = w[i];
      double plus, minus;
      {
        NoGradGuard guard;
        w[i] = saved + h;
        plus = loss().item();
        w[i] = saved - h;
        minus = loss().item();
      }
      w[i] = saved;
      analytic.push_back(grad[i]);
      numeric.push_back((plus - minus) / (2 * h));
    }
    errors[name] = relative_error(analytic, numeric);
  });
  params.for_each([](const std::string&, Tensor& p) { p.zero_grad(); });
  return errors;
}

}  // namespace setrank::testing
