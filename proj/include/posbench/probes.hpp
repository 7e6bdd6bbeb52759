#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "posbench/corpus.hpp"
#include "posbench/error.hpp"
#include "posbench/utf8.hpp"

namespace posbench::probes {

// Offsets are character (code point) offsets into the source text.
struct Token {
  std::string surface;
  std::size_t char_start = 0;
  std::size_t char_end = 0;

  friend bool operator==(const Token&, const Token&) = default;
};

namespace chars {

inline bool is_space(char32_t c) {
  return (c >= 0x09 && c <= 0x0D) || c == 0x20 || c == 0x85 || c == 0xA0 || c == 0x1680 ||
         (c >= 0x2000 && c <= 0x200A) || c == 0x2028 || c == 0x2029 || c == 0x202F || c == 0x205F || c == 0x3000;
}

inline bool is_punct(char32_t c) {
  if (c < 0x80) {
    return (c >= 0x21 && c <= 0x2F) || (c >= 0x3A && c <= 0x40) || (c >= 0x5B && c <= 0x60) ||
           (c >= 0x7B && c <= 0x7E);
  }
  return (c >= 0xA1 && c <= 0xBF) || c == 0xD7 || c == 0xF7 || (c >= 0x2010 && c <= 0x2027) ||
         (c >= 0x2030 && c <= 0x205E) || (c >= 0x3001 && c <= 0x3003) || (c >= 0x3008 && c <= 0x3011) ||
         (c >= 0xFF01 && c <= 0xFF0F);
}

inline bool is_word(char32_t c) { return !is_space(c) && !is_punct(c); }

}  // namespace chars

class Tokenizer {
 public:
  virtual ~Tokenizer() = default;
  virtual std::vector<Token> tokenize(std::u32string_view text) const = 0;

  std::vector<Token> tokenize(std::string_view utf8_text) const { return tokenize(utf8::decode(utf8_text)); }
};

// Whitespace runs separate tokens; every punctuation character is its own token.
class WordPunctTokenizer final : public Tokenizer {
 public:
  using Tokenizer::tokenize;

  std::vector<Token> tokenize(std::u32string_view text) const override {
    std::vector<Token> out;
    std::size_t i = 0;
    while (i < text.size()) {
      char32_t c = text[i];
      if (chars::is_space(c)) {
        ++i;
        continue;
      }
      std::size_t j = i + 1;
      if (chars::is_word(c)) {
        while (j < text.size() && chars::is_word(text[j])) ++j;
      }
      out.push_back({utf8::encode(text.substr(i, j - i)), i, j});
      i = j;
    }
    return out;
  }
};

inline const Tokenizer& default_tokenizer() {
  static const WordPunctTokenizer instance;
  return instance;
}

inline std::vector<Token> tokenize(std::string_view text) { return default_tokenizer().tokenize(text); }

// Gap text + surfaces, in order. Equals `text` for any lossless tokenization of it.
inline std::string reconstruct(std::string_view text, std::span<const Token> tokens) {
  auto t32 = utf8::decode(text);
  std::u32string out;
  std::size_t cursor = 0;
  for (const auto& tok : tokens) {
    out.append(t32.substr(cursor, tok.char_start - cursor));
    out.append(utf8::decode(tok.surface));
    cursor = tok.char_end;
  }
  out.append(t32.substr(std::min(cursor, t32.size())));
  return utf8::encode(out);
}

// ---------------------------------------------------------------------------
// Probe variants

enum class ProbeKind { original, insertion, segment, span_window };

inline const char* to_string(ProbeKind k) {
  switch (k) {
    case ProbeKind::original:
      return "default";
    case ProbeKind::insertion:
      return "insertion";
    case ProbeKind::segment:
      return "segment";
    case ProbeKind::span_window:
      return "span_window";
  }
  return "?";
}

inline ProbeKind parse_probe_kind(std::string_view s) {
  if (s == "default") return ProbeKind::original;
  if (s == "insertion") return ProbeKind::insertion;
  if (s == "segment") return ProbeKind::segment;
  if (s == "span_window") return ProbeKind::span_window;
  throw ValidationError("unknown probe kind '" + std::string(s) + "'");
}

struct ProbeVariant {
  ProbeKind kind = ProbeKind::original;
  std::string doc_id;
  std::string text;
  std::size_t position_index = 0;
  // Insertion variants: where the passage starts in `text` (characters).
  std::size_t passage_start = 0;

  friend bool operator==(const ProbeVariant&, const ProbeVariant&) = default;
};

// ---------------------------------------------------------------------------
// Insertion plan: point i (0-based) = round((i * (l_d - l_p)) / (count - 1)), halves rounded down.

struct InsertionPlan {
  std::string doc_id;
  std::size_t l_d = 0;
  std::size_t l_p = 0;
  std::vector<std::size_t> points;
};

inline InsertionPlan insertion_points(std::size_t l_d, std::size_t l_p, std::size_t count = 10) {
  if (l_p == 0 || l_p >= l_d) {
    throw ValidationError("insertion_points: need 0 < l_p < l_d (got l_d=" + std::to_string(l_d) +
                          ", l_p=" + std::to_string(l_p) + ")");
  }
  if (count < 2) throw ValidationError("insertion_points: need at least two points");
  InsertionPlan plan;
  plan.l_d = l_d;
  plan.l_p = l_p;
  const std::uint64_t span = l_d - l_p;
  const std::uint64_t denom = count - 1;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::uint64_t num = i * span;
    std::uint64_t q = num / denom;
    std::uint64_t r = num % denom;
    if (2 * r > denom) ++q;
    plan.points.push_back(static_cast<std::size_t>(q));
  }
  return plan;
}

inline InsertionPlan insertion_points(const corpus::Document& doc, const corpus::PassageAlignment& a,
                                      std::size_t count = 10) {
  corpus::check_alignment(a, doc);
  auto plan = insertion_points(doc.char_len, a.length(), count);
  plan.doc_id = doc.id;
  return plan;
}

// Moves the aligned passage so that it starts as close as possible to
// `target_offset`. The passage travels together with one adjacent whitespace
// character (trailing if present, else leading), which may be re-attached on
// either side. Insertion happens only at token boundaries of the residual text
// where the passage does not fuse with a neighbouring word; if no such
// boundary exists any token boundary is used. Ties go to the smaller offset,
// then to the separator's original side. Targeting the passage's own start
// returns the document unchanged. Length and character multiset are
// preserved.
inline ProbeVariant relocate_passage(const corpus::Document& doc, const corpus::PassageAlignment& a,
                                     std::size_t target_offset, const Tokenizer& tokenizer = default_tokenizer()) {
  corpus::check_alignment(a, doc);
  const std::size_t l_p = a.length();
  if (target_offset > doc.char_len - l_p) {
    throw ValidationError("relocate_passage: target offset " + std::to_string(target_offset) + " outside [0, " +
                          std::to_string(doc.char_len - l_p) + "]");
  }
  if (target_offset == a.char_start) {
    ProbeVariant same;
    same.kind = ProbeKind::insertion;
    same.doc_id = doc.id;
    same.text = doc.text;
    same.passage_start = a.char_start;
    return same;
  }
  const auto text = utf8::decode(doc.text);
  const std::u32string passage = text.substr(a.char_start, l_p);
  std::size_t cut_start = a.char_start;
  std::size_t cut_end = a.char_end;
  std::optional<char32_t> sep;
  bool sep_was_before = false;
  if (cut_end < text.size() && chars::is_space(text[cut_end])) {
    sep = text[cut_end++];
  } else if (cut_start > 0 && chars::is_space(text[cut_start - 1])) {
    sep = text[--cut_start];
    sep_was_before = true;
  }
  std::u32string residual = text.substr(0, cut_start) + text.substr(cut_end);

  std::vector<std::size_t> boundaries{0, residual.size()};
  for (const auto& tok : tokenizer.tokenize(std::u32string_view(residual))) {
    boundaries.push_back(tok.char_start);
    boundaries.push_back(tok.char_end);
  }
  std::sort(boundaries.begin(), boundaries.end());
  boundaries.erase(std::unique(boundaries.begin(), boundaries.end()), boundaries.end());

  struct Candidate {
    std::size_t x;       // insertion offset in the residual text
    bool sep_before;     // separator placed before the passage
    std::size_t start;   // resulting passage start
    bool clean;
  };
  std::vector<Candidate> candidates;
  for (auto x : boundaries) {
    for (int side = 0; side < (sep ? 2 : 1); ++side) {
      bool before = sep && (side == 0 ? sep_was_before : !sep_was_before);
      char32_t front = before ? *sep : passage.front();
      char32_t back = (sep && !before) ? *sep : passage.back();
      bool left = x > 0 && chars::is_word(residual[x - 1]) && chars::is_word(front);
      bool right = x < residual.size() && chars::is_word(back) && chars::is_word(residual[x]);
      std::size_t start = x + (before ? 1 : 0);
      if (start + l_p > doc.char_len) continue;
      candidates.push_back({x, before, start, !(left || right)});
    }
  }
  bool any_clean = std::any_of(candidates.begin(), candidates.end(), [](const Candidate& c) { return c.clean; });
  const Candidate* best = nullptr;
  std::size_t best_dist = 0;
  for (const auto& c : candidates) {
    if (any_clean && !c.clean) continue;
    std::size_t dist = c.start > target_offset ? c.start - target_offset : target_offset - c.start;
    bool better = best == nullptr || dist < best_dist ||
                  (dist == best_dist && (c.start < best->start ||
                                         (c.start == best->start && c.sep_before == sep_was_before &&
                                          best->sep_before != sep_was_before)));
    if (better) {
      best = &c;
      best_dist = dist;
    }
  }
  if (best == nullptr) throw ValidationError("relocate_passage: no admissible insertion point in '" + doc.id + "'");

  std::u32string unit = passage;
  if (sep) {
    if (best->sep_before) {
      unit.insert(unit.begin(), *sep);
    } else {
      unit.push_back(*sep);
    }
  }
  residual.insert(best->x, unit);
  ProbeVariant v;
  v.kind = ProbeKind::insertion;
  v.doc_id = doc.id;
  v.text = utf8::encode(residual);
  v.passage_start = best->start;
  return v;
}

// ---------------------------------------------------------------------------
// Uniform segmentation: k contiguous token groups, the first (n mod k) one token longer.

inline std::vector<std::pair<std::size_t, std::size_t>> segment_bounds(std::size_t n_tokens, std::size_t k = 10) {
  if (k == 0 || n_tokens < k) {
    throw ValidationError("segment_uniform: " + std::to_string(n_tokens) + " tokens cannot form " +
                          std::to_string(k) + " segments");
  }
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t base = n_tokens / k, extra = n_tokens % k, cursor = 0;
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t len = base + (i < extra ? 1 : 0);
    out.emplace_back(cursor, cursor + len);
    cursor += len;
  }
  return out;
}

// Segment i covers the source text from its first token's start to its last token's end.
inline std::vector<ProbeVariant> segment_uniform(const corpus::Document& doc, std::span<const Token> tokens,
                                                 std::size_t k = 10) {
  auto bounds = segment_bounds(tokens.size(), k);
  std::vector<ProbeVariant> out;
  out.reserve(k);
  for (std::size_t i = 0; i < bounds.size(); ++i) {
    auto [b, e] = bounds[i];
    ProbeVariant v;
    v.kind = ProbeKind::segment;
    v.doc_id = doc.id;
    v.position_index = i + 1;
    v.text = utf8::substr(doc.text, tokens[b].char_start, tokens[e - 1].char_end);
    out.push_back(std::move(v));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Token windows and span corruption

struct TokenWindow {
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t width() const { return end - start; }
  friend bool operator==(const TokenWindow&, const TokenWindow&) = default;
};

inline std::vector<TokenWindow> token_windows(std::size_t n_tokens, std::size_t window_len = 256,
                                              std::size_t max_len = 2048) {
  if (window_len == 0) throw ValidationError("token_windows: window_len must be positive");
  std::size_t limit = std::min(n_tokens, max_len);
  std::vector<TokenWindow> out;
  for (std::size_t s = 0; s < limit; s += window_len) out.push_back({s, std::min(s + window_len, limit)});
  return out;
}

inline std::string sentinel(std::size_t n) { return "<extra_id_" + std::to_string(n) + ">"; }

struct SpanCorruptionInstance {
  std::string doc_id;
  TokenWindow window;
  std::size_t span_start = 0;  // token index of the corrupted span
  std::size_t span_len = 3;
  std::string input_with_sentinels;
  std::vector<std::string> target_spans;

  friend bool operator==(const SpanCorruptionInstance&, const SpanCorruptionInstance&) = default;
};

// One independently corrupted span per instance, start uniform over the window.
// The input keeps the document up to `input_token_limit` tokens with the span
// replaced by a single sentinel.
inline std::vector<SpanCorruptionInstance> corrupt_spans(const corpus::Document& doc, std::span<const Token> tokens,
                                                         TokenWindow window, std::size_t num_spans,
                                                         std::size_t span_len, std::uint64_t seed,
                                                         std::size_t input_token_limit = 2048) {
  if (span_len == 0) throw ValidationError("corrupt_spans: span_len must be positive");
  if (window.end > tokens.size() || window.start > window.end || window.width() < span_len) {
    throw ValidationError("corrupt_spans: window (" + std::to_string(window.start) + "," +
                          std::to_string(window.end) + ") cannot hold a " + std::to_string(span_len) +
                          "-token span");
  }
  std::size_t limit = std::min(tokens.size(), input_token_limit);
  if (window.end > limit) throw ValidationError("corrupt_spans: window extends past the input limit");
  const auto text = utf8::decode(doc.text);
  const std::size_t input_end = tokens[limit - 1].char_end;

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(window.start, window.end - span_len);
  std::vector<SpanCorruptionInstance> out;
  out.reserve(num_spans);
  for (std::size_t n = 0; n < num_spans; ++n) {
    std::size_t s = pick(rng);
    std::size_t c0 = tokens[s].char_start;
    std::size_t c1 = tokens[s + span_len - 1].char_end;
    SpanCorruptionInstance inst;
    inst.doc_id = doc.id;
    inst.window = window;
    inst.span_start = s;
    inst.span_len = span_len;
    inst.input_with_sentinels =
        utf8::encode(text.substr(0, c0)) + sentinel(0) + utf8::encode(text.substr(c1, input_end - c1));
    inst.target_spans.push_back(utf8::encode(text.substr(c0, c1 - c0)));
    out.push_back(std::move(inst));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::ordered_json to_json(const ProbeVariant& v) {
  nlohmann::ordered_json j;
  j["doc_id"] = v.doc_id;
  j["kind"] = to_string(v.kind);
  j["position_index"] = v.position_index;
  j["text"] = v.text;
  return j;
}

inline nlohmann::ordered_json to_json(const SpanCorruptionInstance& s) {
  nlohmann::ordered_json j;
  j["doc_id"] = s.doc_id;
  j["window_start"] = s.window.start;
  j["window_end"] = s.window.end;
  j["span_start"] = s.span_start;
  j["span_len"] = s.span_len;
  j["input_with_sentinels"] = s.input_with_sentinels;
  j["target_spans"] = s.target_spans;
  return j;
}

template <typename T>
void write_jsonl(const std::string& path, const std::vector<T>& items) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write '" + path + "'");
  for (const auto& item : items) out << to_json(item).dump() << '\n';
}

}  // namespace posbench::probes
