#pragma once

// Encoder-decoder re-ranker that scores every candidate of a query jointly.
//
// Each candidate runs through its own copy of the encoder stack. From layer
// `global_start` on, the first-token ([CLS]) states of all candidates are
// pooled by a set-level multi-head attention and the result is added back
// onto each candidate's [CLS] slot. A one-step decoder then reads each
// candidate's encoder output and emits logits for "true" and "false".

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "setrank/candidate.hpp"
#include "setrank/checkpoint.hpp"
#include "setrank/kvconfig.hpp"
#include "setrank/tensor.hpp"
#include "setrank/textproc.hpp"

namespace setrank {

class EmptySetError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class ScoringMode { full, no_feature, no_global };

inline std::string to_string(ScoringMode mode) {
  switch (mode) {
    case ScoringMode::full: return "full";
    case ScoringMode::no_feature: return "no_feature";
    case ScoringMode::no_global: return "no_global";
  }
  return "?";
}

// Which parts of the mechanism a forward pass uses.
struct ForwardOptions {
  bool use_feature = true;
  bool use_global = true;
};

inline ForwardOptions options_for(ScoringMode mode) {
  return {mode != ScoringMode::no_feature, mode != ScoringMode::no_global};
}

inline ScoringMode parse_mode(const std::string& text) {
  if (text == "full") return ScoringMode::full;
  if (text == "no_feature") return ScoringMode::no_feature;
  if (text == "no_global") return ScoringMode::no_global;
  throw std::invalid_argument("unknown scoring mode '" + text + "'");
}

struct ModelConfig {
  std::size_t layers = 4;        // encoder depth
  std::size_t global_start = 3;  // first layer (1-based) with set attention; layers+1 turns it off
  std::size_t hidden = 64;
  std::size_t heads_local = 4;
  std::size_t heads_global = 4;
  std::size_t ffn = 256;
  std::size_t vocab_size = 0;
  std::size_t max_seq_len = 32;
  std::size_t decoder_layers = 1;
  double init_std = 0.125;  // about 1/sqrt(hidden); much smaller scales stall the set attention

  bool global_at(std::size_t layer) const { return layer >= global_start; }

  void validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("model config: " + m); };
    if (layers < 1) fail("layers must be >= 1");
    if (global_start < 1 || global_start > layers + 1) fail("global_start must be in [1, layers+1]");
    if (hidden == 0 || heads_local == 0 || heads_global == 0) fail("sizes must be positive");
    if (hidden % heads_local) fail("hidden not divisible by heads_local");
    if (hidden % heads_global) fail("hidden not divisible by heads_global");
    if (vocab_size < static_cast<std::size_t>(Vocab::kReservedCount)) fail("vocab_size too small");
    if (max_seq_len < 2) fail("max_seq_len must be >= 2");
    if (decoder_layers < 1) fail("decoder_layers must be >= 1");
  }

  KeyValues to_kv() const {
    KeyValues kv;
    kv.set("layers", layers);
    kv.set("global_start", global_start);
    kv.set("hidden", hidden);
    kv.set("heads_local", heads_local);
    kv.set("heads_global", heads_global);
    kv.set("ffn", ffn);
    kv.set("vocab_size", vocab_size);
    kv.set("max_seq_len", max_seq_len);
    kv.set("decoder_layers", decoder_layers);
    kv.set("init_std", init_std);
    return kv;
  }

  static ModelConfig from_kv(const KeyValues& kv) {
    ModelConfig c;
    c.layers = kv.get("layers", c.layers);
    c.global_start = kv.get("global_start", c.global_start);
    c.hidden = kv.get("hidden", c.hidden);
    c.heads_local = kv.get("heads_local", c.heads_local);
    c.heads_global = kv.get("heads_global", c.heads_global);
    c.ffn = kv.get("ffn", c.ffn);
    c.vocab_size = kv.get("vocab_size", c.vocab_size);
    c.max_seq_len = kv.get("max_seq_len", c.max_seq_len);
    c.decoder_layers = kv.get("decoder_layers", c.decoder_layers);
    c.init_std = kv.get("init_std", c.init_std);
    return c;
  }
};

// ---------------------------------------------------------------------------
// Parameters

struct NormParams {
  Tensor gain, bias;
};

struct AttentionParams {
  Tensor q, k, v, o;  // [c x c], no biases
};

struct FeedForwardParams {
  Tensor w1, b1, w2, b2;
};

struct EncoderLayerParams {
  NormParams attn_norm;
  AttentionParams attn;
  NormParams ffn_norm;
  FeedForwardParams ffn;
};

struct GlobalAttentionParams {
  NormParams norm;
  AttentionParams attn;
};

struct DecoderLayerParams {
  NormParams self_norm;
  Tensor self_v, self_o;  // attention over the single decoded position
  NormParams cross_norm;
  AttentionParams cross;
  NormParams ffn_norm;
  FeedForwardParams ffn;
};

struct ModelParams {
  Tensor token_embedding;     // [V x c], tied with the output layer
  Tensor position_embedding;  // [max_seq_len x c]
  std::vector<EncoderLayerParams> encoder;
  std::vector<std::optional<GlobalAttentionParams>> global;  // one slot per encoder layer
  NormParams encoder_norm;
  std::vector<DecoderLayerParams> decoder;
  NormParams decoder_norm;

  template <typename F>
  void for_each(F&& f) {
    visit(*this, f);
  }
  template <typename F>
  void for_each(F&& f) const {
    auto as_const = [&](const std::string& n, Tensor& t) { f(n, static_cast<const Tensor&>(t)); };
    visit(const_cast<ModelParams&>(*this), as_const);
  }

  // Same storage, fresh gradient buffers.
  ModelParams alias() const {
    ModelParams copy = *this;
    copy.for_each([](const std::string&, Tensor& t) { t = t.alias(); });
    return copy;
  }

  ParamMap to_map() const {
    ParamMap out;
    for_each([&](const std::string& n, const Tensor& t) { out.emplace(n, t); });
    return out;
  }

  // Copies values from `source` into these tensors; every name and shape
  // must match.
  void load_values(const ParamMap& source) {
    std::size_t matched = 0;
    for_each([&](const std::string& n, Tensor& t) {
      auto it = source.find(n);
      if (it == source.end()) throw FormatError("checkpoint lacks parameter " + n);
      if (it->second.shape() != t.shape()) {
        throw FormatError("parameter " + n + " has shape " + shape_str(it->second.shape()) +
                          ", model expects " + shape_str(t.shape()));
      }
      std::copy(it->second.data().begin(), it->second.data().end(), t.mutable_data().begin());
      ++matched;
    });
    if (matched != source.size()) throw FormatError("checkpoint has unexpected parameters");
  }

  std::size_t parameter_count() const {
    std::size_t total = 0;
    for_each([&](const std::string&, const Tensor& t) { total += t.size(); });
    return total;
  }

 private:
  template <typename F>
  static void visit(ModelParams& p, F& f) {
    auto norm = [&](const std::string& prefix, NormParams& n) {
      f(prefix + ".gain", n.gain);
      f(prefix + ".bias", n.bias);
    };
    auto attn = [&](const std::string& prefix, AttentionParams& a) {
      f(prefix + ".q", a.q);
      f(prefix + ".k", a.k);
      f(prefix + ".v", a.v);
      f(prefix + ".o", a.o);
    };
    auto ffn = [&](const std::string& prefix, FeedForwardParams& m) {
      f(prefix + ".w1", m.w1);
      f(prefix + ".b1", m.b1);
      f(prefix + ".w2", m.w2);
      f(prefix + ".b2", m.b2);
    };
    f("embed.token", p.token_embedding);
    f("embed.position", p.position_embedding);
    for (std::size_t j = 0; j < p.encoder.size(); ++j) {
      const std::string prefix = "encoder." + std::to_string(j + 1);
      norm(prefix + ".attn_norm", p.encoder[j].attn_norm);
      attn(prefix + ".attn", p.encoder[j].attn);
      norm(prefix + ".ffn_norm", p.encoder[j].ffn_norm);
      ffn(prefix + ".ffn", p.encoder[j].ffn);
      if (j < p.global.size() && p.global[j]) {
        const std::string g = "global." + std::to_string(j + 1);
        norm(g + ".norm", p.global[j]->norm);
        attn(g + ".attn", p.global[j]->attn);
      }
    }
    norm("encoder.final_norm", p.encoder_norm);
    for (std::size_t d = 0; d < p.decoder.size(); ++d) {
      const std::string prefix = "decoder." + std::to_string(d + 1);
      auto& layer = p.decoder[d];
      norm(prefix + ".self_norm", layer.self_norm);
      f(prefix + ".self_attn.v", layer.self_v);
      f(prefix + ".self_attn.o", layer.self_o);
      norm(prefix + ".cross_norm", layer.cross_norm);
      attn(prefix + ".cross_attn", layer.cross);
      norm(prefix + ".ffn_norm", layer.ffn_norm);
      ffn(prefix + ".ffn", layer.ffn);
    }
    norm("decoder.final_norm", p.decoder_norm);
  }
};

// Scaled-normal initialization (std = config.init_std), unit gains, zero biases.
inline ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, config.init_std);
  auto randn = [&](Shape shape) {
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = normal(rng);
    return Tensor::from(std::move(shape), std::move(v), true);
  };
  auto constant = [](std::size_t n, double value) {
    return Tensor::from({n}, std::vector<double>(n, value), true);
  };
  const std::size_t c = config.hidden;
  auto norm = [&] { return NormParams{constant(c, 1.0), constant(c, 0.0)}; };
  auto attn = [&] { return AttentionParams{randn({c, c}), randn({c, c}), randn({c, c}), randn({c, c})}; };
  auto ffn = [&] {
    return FeedForwardParams{randn({c, config.ffn}), constant(config.ffn, 0.0),
                             randn({config.ffn, c}), constant(c, 0.0)};
  };

  ModelParams p;
  p.token_embedding = randn({config.vocab_size, c});
  p.position_embedding = randn({config.max_seq_len, c});
  for (std::size_t j = 1; j <= config.layers; ++j) {
    EncoderLayerParams layer;
    layer.attn_norm = norm();
    layer.attn = attn();
    layer.ffn_norm = norm();
    layer.ffn = ffn();
    p.encoder.push_back(std::move(layer));
    if (config.global_at(j)) {
      p.global.emplace_back(GlobalAttentionParams{norm(), attn()});
    } else {
      p.global.emplace_back(std::nullopt);
    }
  }
  p.encoder_norm = norm();
  for (std::size_t d = 0; d < config.decoder_layers; ++d) {
    DecoderLayerParams layer;
    layer.self_norm = norm();
    layer.self_v = randn({c, c});
    layer.self_o = randn({c, c});
    layer.cross_norm = norm();
    layer.cross = attn();
    layer.ffn_norm = norm();
    layer.ffn = ffn();
    p.decoder.push_back(std::move(layer));
  }
  p.decoder_norm = norm();
  return p;
}

// ---------------------------------------------------------------------------
// Building blocks

// Additive mask [heads x queries x keys]: -inf on masked keys, else 0.
inline Tensor key_mask_bias(std::span<const int> key_mask, std::size_t heads,
                            std::size_t queries) {
  const std::size_t keys = key_mask.size();
  std::vector<double> bias(heads * queries * keys, 0.0);
  for (std::size_t i = 0; i < bias.size(); ++i) {
    if (!key_mask[i % keys]) bias[i] = -std::numeric_limits<double>::infinity();
  }
  return Tensor::from({heads, queries, keys}, std::move(bias));
}

// Multi-head scaled dot-product attention. query_in [m x c], memory [s x c].
// Returns [m x c]; per-head weights [heads x m x s] go to `weights` if given.
inline Tensor multi_head_attention(const AttentionParams& p, const Tensor& query_in,
                                   const Tensor& memory, std::size_t heads,
                                   std::span<const int> key_mask = {},
                                   Tensor* weights = nullptr) {
  const std::size_t m = query_in.dim(0), s = memory.dim(0), c = query_in.dim(1);
  const std::size_t dh = c / heads;
  auto split = [&](const Tensor& x, std::size_t rows) {
    return permute(reshape(x, {rows, heads, dh}), {1, 0, 2});  // [H x rows x dh]
  };
  Tensor q = split(matmul(query_in, p.q), m);
  Tensor k = split(matmul(memory, p.k), s);
  Tensor v = split(matmul(memory, p.v), s);
  Tensor scores = scale(bmm(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(dh)));
  const bool masked = !key_mask.empty() &&
                      std::any_of(key_mask.begin(), key_mask.end(), [](int x) { return x == 0; });
  if (masked) scores = add(scores, key_mask_bias(key_mask, heads, m));
  Tensor attn = softmax(scores, -1);
  if (weights) *weights = attn;
  Tensor context = reshape(permute(bmm(attn, v), {1, 0, 2}), {m, c});
  return matmul(context, p.o);
}

inline Tensor feed_forward(const FeedForwardParams& p, const Tensor& x) {
  return add_bias(matmul(gelu(add_bias(matmul(x, p.w1), p.b1)), p.w2), p.b2);
}

inline Tensor apply_norm(const NormParams& n, const Tensor& x) {
  return layer_norm(x, n.gain, n.bias, 1e-6);
}

// One pre-norm transformer layer over a single candidate's sequence
// H [s x c]; `mask` marks real (1) and padding (0) positions.
inline Tensor encoder_layer(const EncoderLayerParams& p, const Tensor& hidden,
                            std::size_t heads, std::span<const int> mask = {}) {
  Tensor normed = apply_norm(p.attn_norm, hidden);
  Tensor x = add(hidden, multi_head_attention(p.attn, normed, normed, heads, mask));
  return add(x, feed_forward(p.ffn, apply_norm(p.ffn_norm, x)));
}

struct SplitState {
  Tensor cls;   // [1 x c]
  Tensor rest;  // [(s-1) x c]
};

inline SplitState split_cls(const Tensor& hidden) {
  return {slice_rows(hidden, 0, 1), slice_rows(hidden, 1, hidden.dim(0))};
}

// [cls + cls_update ; rest]
inline Tensor fuse(const Tensor& cls, const Tensor& cls_update, const Tensor& rest) {
  return concat({add(cls, cls_update), rest});
}

// Lexicographic order of the rows of x, ties by index. Running the set
// attention in this order makes its floating-point reductions independent
// of how the candidates were listed.
inline std::vector<std::size_t> canonical_row_order(const Tensor& x) {
  const std::size_t n = x.dim(0), c = x.size() / std::max<std::size_t>(n, 1);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const double* base = x.data().data();
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::lexicographical_compare(base + a * c, base + a * c + c, base + b * c,
                                        base + b * c + c);
  });
  return order;
}

struct GlobalAttentionOutput {
  Tensor update;   // [n x c] in input order
  Tensor weights;  // [heads x n x n] in input order
};

// Set attention over the [CLS] states cls [n x c]: pre-norm, multi-head
// attention without positional information, no feed-forward.
inline GlobalAttentionOutput global_attention(const GlobalAttentionParams& p, const Tensor& cls,
                                              std::size_t heads) {
  const std::size_t n = cls.dim(0);
  auto order = canonical_row_order(cls);
  std::vector<std::size_t> inverse(n);
  for (std::size_t r = 0; r < n; ++r) inverse[order[r]] = r;
  Tensor sorted = gather_rows(cls, order);
  Tensor normed = apply_norm(p.norm, sorted);
  Tensor weights;
  Tensor out = multi_head_attention(p.attn, normed, normed, heads, {}, &weights);

  GlobalAttentionOutput result;
  result.update = gather_rows(out, inverse);
  // weights back to input order on both candidate axes
  std::vector<double> w(heads * n * n);
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < n; ++k)
        w[(h * n + i) * n + k] = weights.at((h * n + inverse[i]) * n + inverse[k]);
  result.weights = Tensor::from({heads, n, n}, std::move(w));
  return result;
}

// ---------------------------------------------------------------------------
// Full model

struct GlobalLayerTrace {
  std::size_t layer = 0;
  std::vector<std::vector<double>> update;  // per candidate, the set-attention output
  Tensor weights;                           // [heads x n x n]
};

struct SetForward {
  Tensor logits;  // [n x 2]: column 0 "true", column 1 "false"
  std::vector<GlobalLayerTrace> trace;
};

struct ScoredCandidate {
  std::string doc_id;
  double score = 0.0;
  int new_rank = 0;
};

class Reranker {
 public:
  Reranker(ModelConfig config, Vocab vocab, ModelParams params)
      : config_(std::move(config)), vocab_(std::move(vocab)), params_(std::move(params)) {
    config_.validate();
    if (vocab_.size() != config_.vocab_size) {
      throw std::invalid_argument("vocab has " + std::to_string(vocab_.size()) +
                                  " tokens, config says " + std::to_string(config_.vocab_size));
    }
  }

  static Reranker create(ModelConfig config, Vocab vocab, std::uint64_t seed) {
    config.vocab_size = vocab.size();
    auto params = init_params(config, seed);
    return Reranker(std::move(config), std::move(vocab), std::move(params));
  }

  const ModelConfig& config() const { return config_; }
  const Vocab& vocab() const { return vocab_; }
  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }

  std::vector<TokenizedInput> encode(const CandidateSet& set, bool use_feature) const {
    std::vector<TokenizedInput> inputs;
    inputs.reserve(set.size());
    for (const auto& c : set.candidates) {
      std::optional<int> feature;
      if (use_feature) feature = c.feature;
      inputs.push_back(build_input(set.query_text, c.title, feature, c.passage, vocab_,
                                   config_.max_seq_len));
    }
    return inputs;
  }

  // Logits for a set of pre-built inputs. Padding is trimmed per candidate;
  // with -inf key masking this is exactly what the padded computation gives.
  SetForward forward(std::span<const TokenizedInput> inputs, bool use_global,
                     const ModelParams* override_params = nullptr,
                     bool keep_trace = false) const {
    const ModelParams& p = override_params ? *override_params : params_;
    const std::size_t n = inputs.size();
    if (n == 0) throw EmptySetError("cannot score an empty candidate set");

    std::vector<Tensor> hidden(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& in = inputs[i];
      std::span<const int> ids(in.ids.data(), in.length);
      std::vector<std::size_t> positions(in.length);
      std::iota(positions.begin(), positions.end(), std::size_t{0});
      hidden[i] = add(embedding(p.token_embedding, ids), gather_rows(p.position_embedding, positions));
    }

    SetForward out;
    for (std::size_t j = 1; j <= config_.layers; ++j) {
      const auto& layer = p.encoder[j - 1];
      for (auto& h : hidden) h = encoder_layer(layer, h, config_.heads_local);
      if (!use_global || !config_.global_at(j)) continue;
      std::vector<SplitState> parts(n);
      std::vector<Tensor> cls(n);
      for (std::size_t i = 0; i < n; ++i) {
        parts[i] = split_cls(hidden[i]);
        cls[i] = parts[i].cls;
      }
      auto g = global_attention(*p.global[j - 1], concat(cls), config_.heads_global);
      for (std::size_t i = 0; i < n; ++i) {
        hidden[i] = fuse(parts[i].cls, slice_rows(g.update, i, i + 1), parts[i].rest);
      }
      if (keep_trace) {
        GlobalLayerTrace t;
        t.layer = j;
        const std::size_t c = config_.hidden;
        for (std::size_t i = 0; i < n; ++i) {
          t.update.emplace_back(g.update.data().begin() + i * c,
                                g.update.data().begin() + (i + 1) * c);
        }
        t.weights = g.weights;
        out.trace.push_back(std::move(t));
      }
    }

    const std::array<int, 2> answer_ids = {Vocab::kTrue, Vocab::kFalse};
    Tensor answer_rows = embedding(p.token_embedding, answer_ids);  // [2 x c]
    const std::array<int, 1> start_id = {Vocab::kPad};
    std::vector<Tensor> logits(n);
    for (std::size_t i = 0; i < n; ++i) {
      Tensor memory = apply_norm(p.encoder_norm, hidden[i]);
      Tensor y = embedding(p.token_embedding, start_id);
      for (const auto& layer : p.decoder) {
        Tensor self = matmul(matmul(apply_norm(layer.self_norm, y), layer.self_v), layer.self_o);
        y = add(y, self);
        y = add(y, multi_head_attention(layer.cross, apply_norm(layer.cross_norm, y), memory,
                                        config_.heads_local));
        y = add(y, feed_forward(layer.ffn, apply_norm(layer.ffn_norm, y)));
      }
      logits[i] = matmul(apply_norm(p.decoder_norm, y), transpose(answer_rows));
    }
    out.logits = concat(logits);
    return out;
  }

  SetForward forward(const CandidateSet& set, ScoringMode mode, bool keep_trace = false) const {
    return forward(set, options_for(mode), keep_trace);
  }

  SetForward forward(const CandidateSet& set, ForwardOptions options, bool keep_trace = false) const {
    if (set.size() == 0) throw EmptySetError("query " + set.query_id + " has no candidates");
    auto inputs = encode(set, options.use_feature);
    return forward(inputs, options.use_global, nullptr, keep_trace);
  }

  // P("true") from the two-way softmax, per candidate in input order.
  static std::vector<double> probabilities(const Tensor& logits) {
    std::vector<double> s(logits.dim(0));
    for (std::size_t i = 0; i < s.size(); ++i) {
      const double t = logits.at(2 * i), f = logits.at(2 * i + 1);
      s[i] = 1.0 / (1.0 + std::exp(f - t));
    }
    return s;
  }

  std::vector<double> score(const CandidateSet& set, ForwardOptions options) const {
    NoGradGuard guard;
    return probabilities(forward(set, options).logits);
  }

  std::vector<double> score(const CandidateSet& set, ScoringMode mode) const {
    return score(set, options_for(mode));
  }

  // Candidates ordered by score, ties by first-stage rank.
  std::vector<ScoredCandidate> score_candidates(const CandidateSet& set, ScoringMode mode) const {
    return rank_by_score(set, score(set, mode));
  }

  static std::vector<ScoredCandidate> rank_by_score(const CandidateSet& set,
                                                    const std::vector<double>& scores) {
    std::vector<std::size_t> order(set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (scores[a] != scores[b]) return scores[a] > scores[b];
      return set.candidates[a].first_stage_rank < set.candidates[b].first_stage_rank;
    });
    std::vector<ScoredCandidate> ranked;
    for (std::size_t r = 0; r < order.size(); ++r) {
      ranked.push_back({set.candidates[order[r]].doc_id, scores[order[r]], static_cast<int>(r + 1)});
    }
    return ranked;
  }

  // <dir>/model.ckpt, <dir>/config.txt, <dir>/vocab.txt
  void save(const std::string& dir) const {
    std::filesystem::create_directories(dir);
    save_checkpoint(dir + "/model.ckpt", params_.to_map());
    config_.to_kv().save(dir + "/config.txt");
    vocab_.save(dir + "/vocab.txt");
  }

  static Reranker load(const std::string& dir) {
    auto config = ModelConfig::from_kv(KeyValues::load(dir + "/config.txt"));
    auto vocab = Vocab::load(dir + "/vocab.txt");
    auto params = init_params(config, 0);
    params.load_values(load_checkpoint(dir + "/model.ckpt"));
    return Reranker(std::move(config), std::move(vocab), std::move(params));
  }

 private:
  ModelConfig config_;
  Vocab vocab_;
  ModelParams params_;
};

}  // namespace setrank
