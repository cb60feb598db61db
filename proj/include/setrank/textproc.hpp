#pragma once

// Word-level tokenization, the re-ranking input template, and discretization
// of first-stage retrieval scores into integer feature tokens.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace setrank {

class InputTooLong : public std::length_error {
 public:
  using std::length_error::length_error;
};

inline constexpr std::string_view kPadToken = "[PAD]";
inline constexpr std::string_view kClsToken = "[CLS]";
inline constexpr std::string_view kUnkToken = "[UNK]";
inline constexpr std::string_view kNoneToken = "[none]";
inline constexpr std::string_view kTrueToken = "true";
inline constexpr std::string_view kFalseToken = "false";
inline constexpr int kMaxFeatureToken = 100;

class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kCls = 1;
  static constexpr int kUnk = 2;
  static constexpr int kTrue = 3;
  static constexpr int kFalse = 4;
  static constexpr int kQuery = 5;
  static constexpr int kTitle = 6;
  static constexpr int kFeature = 7;
  static constexpr int kPassage = 8;
  static constexpr int kRelevant = 9;
  static constexpr int kFirstDigit = 10;  // "0" .. "100" follow
  static constexpr int kNone = kFirstDigit + kMaxFeatureToken + 1;
  static constexpr int kReservedCount = kNone + 1;

  // Reserved tokens only.
  Vocab() {
    for (const auto& t : reserved_tokens()) append(t);
  }

  // Reserved tokens followed by the most frequent corpus words (ties broken
  // alphabetically) until max_size tokens are held.
  static Vocab build(std::span<const std::string> texts, std::size_t max_size = 8192);

  static Vocab from_tokens(std::vector<std::string> tokens) {
    Vocab v;
    const auto reserved = reserved_tokens();
    if (tokens.size() < reserved.size() ||
        !std::equal(reserved.begin(), reserved.end(), tokens.begin())) {
      throw std::invalid_argument("vocab does not start with the reserved tokens");
    }
    for (std::size_t i = reserved.size(); i < tokens.size(); ++i) {
      if (v.ids_.count(tokens[i])) {
        throw std::invalid_argument("duplicate vocab token '" + tokens[i] + "'");
      }
      v.append(tokens[i]);
    }
    return v;
  }

  static std::vector<std::string> reserved_tokens() {
    std::vector<std::string> r = {std::string(kPadToken), std::string(kClsToken),
                                  std::string(kUnkToken), std::string(kTrueToken),
                                  std::string(kFalseToken), "query:", "title:",
                                  "feature:", "passage:", "relevant:"};
    for (int d = 0; d <= kMaxFeatureToken; ++d) r.push_back(std::to_string(d));
    r.emplace_back(kNoneToken);
    return r;
  }

  std::size_t size() const { return tokens_.size(); }
  bool contains(std::string_view token) const {
    return ids_.find(std::string(token)) != ids_.end();
  }
  int id(std::string_view token) const {
    auto it = ids_.find(std::string(token));
    return it == ids_.end() ? kUnk : it->second;
  }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  static int feature_id(int bucket) {
    if (bucket < 0 || bucket > kMaxFeatureToken) {
      throw std::out_of_range("feature bucket " + std::to_string(bucket));
    }
    return kFirstDigit + bucket;
  }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write vocab " + path);
    for (const auto& t : tokens_) os << t << '\n';
  }

  static Vocab load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open vocab " + path);
    std::vector<std::string> tokens;
    for (std::string line; std::getline(is, line);) tokens.push_back(line);
    return from_tokens(std::move(tokens));
  }

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  void append(const std::string& t) {
    ids_.emplace(t, static_cast<int>(tokens_.size()));
    tokens_.push_back(t);
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

namespace detail {

inline bool is_word_byte(unsigned char c) {
  return std::isalnum(c) || c >= 0x80;
}

}  // namespace detail

// Lowercased word pieces. Alphanumeric runs (non-ASCII bytes count as
// letters) are words; a word directly followed by ':' becomes "word:" when
// `keep_keyword` accepts it; "[word]" is kept whole under the same rule.
// Other punctuation separates words and is dropped.
template <typename KeepKeyword>
std::vector<std::string> split_words(std::string_view text, KeepKeyword keep_keyword) {
  std::vector<std::string> words;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (c == '[') {
      std::size_t j = i + 1;
      while (j < n && detail::is_word_byte(static_cast<unsigned char>(text[j]))) ++j;
      if (j < n && text[j] == ']' && j > i + 1) {
        std::string bracketed;
        for (std::size_t k = i; k <= j; ++k)
          bracketed += static_cast<char>(std::tolower(static_cast<unsigned char>(text[k])));
        if (keep_keyword(bracketed)) {
          words.push_back(std::move(bracketed));
          i = j + 1;
          continue;
        }
      }
      ++i;
      continue;
    }
    if (!detail::is_word_byte(c)) {
      ++i;
      continue;
    }
    std::string word;
    while (i < n && detail::is_word_byte(static_cast<unsigned char>(text[i]))) {
      word += static_cast<char>(std::tolower(static_cast<unsigned char>(text[i])));
      ++i;
    }
    if (i < n && text[i] == ':' && keep_keyword(word + ":")) {
      word += ':';
      ++i;
    }
    words.push_back(std::move(word));
  }
  return words;
}

inline std::vector<int> tokenize(std::string_view text, const Vocab& vocab) {
  auto words = split_words(text, [&](const std::string& w) { return vocab.contains(w); });
  std::vector<int> ids;
  ids.reserve(words.size());
  for (const auto& w : words) ids.push_back(vocab.id(w));
  return ids;
}

inline Vocab Vocab::build(std::span<const std::string> texts, std::size_t max_size) {
  Vocab v;
  std::map<std::string, std::size_t> counts;
  auto keyword = [&](const std::string& w) { return v.contains(w); };
  for (const auto& text : texts) {
    for (auto& w : split_words(text, keyword)) {
      if (!v.contains(w)) ++counts[w];
    }
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  for (const auto& [word, count] : ranked) {
    if (v.size() >= max_size) break;
    v.append(word);
  }
  return v;
}

struct FeatureSpec {
  double min_raw = 165.0;
  double max_raw = 190.0;
  int buckets = 100;
};

// Clip to [min_raw, max_raw], min-max normalize, round half away from zero.
// A degenerate range maps everything to bucket 0.
inline int discretize_feature(double raw, const FeatureSpec& spec) {
  if (spec.buckets < 1) throw std::invalid_argument("feature buckets must be >= 1");
  if (!(spec.max_raw > spec.min_raw)) return 0;
  const double clipped = std::clamp(raw, spec.min_raw, spec.max_raw);
  const double norm = (clipped - spec.min_raw) / (spec.max_raw - spec.min_raw);
  return static_cast<int>(std::round(norm * spec.buckets));
}

// Range spanned by a list of scores, for per-query min-max normalization.
inline FeatureSpec minmax_spec(std::span<const double> scores, int buckets = 100) {
  FeatureSpec spec{0.0, 0.0, buckets};
  if (scores.empty()) return spec;
  auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
  spec.min_raw = *lo;
  spec.max_raw = *hi;
  return spec;
}

// "Query: q Title: t Feature: f Passage: d Relevant:". Without a feature the
// Feature segment is left out entirely.
inline std::string render_template(std::string_view query, std::string_view title,
                                   std::optional<int> feature, std::string_view passage) {
  std::string out = "Query: ";
  out += query;
  out += " Title: ";
  out += title.empty() ? kNoneToken : title;
  if (feature) {
    out += " Feature: ";
    out += std::to_string(*feature);
  }
  out += " Passage: ";
  out += passage;
  out += " Relevant:";
  return out;
}

struct TokenizedInput {
  std::vector<int> ids;    // max_seq_len entries, [CLS] first, [PAD] tail
  std::vector<int> mask;   // 1 on real tokens
  std::size_t length = 0;  // real tokens

  bool operator==(const TokenizedInput&) const = default;
};

// [CLS] + tokens of the rendered template, padded to max_seq_len. Overlong
// inputs lose passage tokens from the end; the trailing "Relevant:" stays.
inline TokenizedInput build_input(std::string_view query, std::string_view title,
                                  std::optional<int> feature, std::string_view passage,
                                  const Vocab& vocab, std::size_t max_seq_len) {
  std::string head = "Query: ";
  head += query;
  head += " Title: ";
  head += title.empty() ? kNoneToken : title;
  if (feature) {
    head += " Feature: ";
    head += std::to_string(*feature);
  }
  head += " Passage:";
  auto head_ids = tokenize(head, vocab);
  auto body_ids = tokenize(passage, vocab);
  const std::size_t fixed = 1 + head_ids.size() + 1;
  if (fixed > max_seq_len) {
    throw InputTooLong("input needs " + std::to_string(fixed) +
                       " tokens before any passage text, max_seq_len is " +
                       std::to_string(max_seq_len));
  }
  const std::size_t room = max_seq_len - fixed;
  if (body_ids.size() > room) body_ids.resize(room);

  TokenizedInput in;
  in.ids.reserve(max_seq_len);
  in.ids.push_back(Vocab::kCls);
  in.ids.insert(in.ids.end(), head_ids.begin(), head_ids.end());
  in.ids.insert(in.ids.end(), body_ids.begin(), body_ids.end());
  in.ids.push_back(Vocab::kRelevant);
  in.length = in.ids.size();
  in.mask.assign(max_seq_len, 0);
  std::fill_n(in.mask.begin(), in.length, 1);
  in.ids.resize(max_seq_len, Vocab::kPad);
  return in;
}

}  // namespace setrank
