#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include <json.hpp>

#include "posbench/error.hpp"
#include "posbench/stats.hpp"
#include "posbench/utf8.hpp"

namespace posbench::corpus {

struct Document {
  std::string id;
  std::string text;  // UTF-8
  std::size_t char_len = 0;

  Document() = default;
  Document(std::string id_, std::string text_)
      : id(std::move(id_)), text(std::move(text_)), char_len(utf8::length(text)) {}

  friend bool operator==(const Document&, const Document&) = default;
};

struct Query {
  std::string id;
  std::string text;

  friend bool operator==(const Query&, const Query&) = default;
};

// Character offsets (Unicode scalar values), half-open.
struct PassageAlignment {
  std::string query_id;
  std::string doc_id;
  std::size_t char_start = 0;
  std::size_t char_end = 0;

  std::size_t length() const { return char_end - char_start; }

  friend bool operator==(const PassageAlignment&, const PassageAlignment&) = default;
};

struct PassageRecord {
  std::string query_id;
  std::string passage_text;
};

// query_id -> judged-relevant doc ids (binary relevance), in file order.
using Qrels = std::map<std::string, std::vector<std::string>>;

enum class Format { jsonl, tsv };

inline Format parse_format(std::string_view name) {
  if (name == "jsonl") return Format::jsonl;
  if (name == "tsv") return Format::tsv;
  throw ValidationError("unknown corpus format '" + std::string(name) + "' (expected jsonl or tsv)");
}

namespace detail {

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  return in;
}

inline void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

inline bool blank(std::string_view line) {
  return line.find_first_not_of(" \t") == std::string_view::npos;
}

// Reads `id` + `text`-style records; `text_key` selects the JSONL text field.
inline std::vector<std::pair<std::string, std::string>> read_records(const std::string& path, Format format,
                                                                     const char* text_key) {
  auto in = open_input(path);
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    strip_cr(line);
    if (blank(line)) continue;
    std::string id, text;
    if (format == Format::jsonl) {
      nlohmann::json rec;
      try {
        rec = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw ValidationError(path + ":" + std::to_string(lineno) + ": malformed JSON: " + e.what());
      }
      if (!rec.is_object() || !rec.contains("id") || !rec.contains(text_key) || !rec["id"].is_string() ||
          !rec[text_key].is_string()) {
        throw ValidationError(path + ":" + std::to_string(lineno) + ": record needs string fields 'id' and '" +
                              text_key + "'");
      }
      id = rec["id"].get<std::string>();
      text = rec[text_key].get<std::string>();
    } else {
      auto tab = line.find('\t');
      if (tab == std::string::npos) {
        throw ValidationError(path + ":" + std::to_string(lineno) + ": expected id<TAB>text");
      }
      id = line.substr(0, tab);
      text = line.substr(tab + 1);
    }
    if (id.empty()) throw ValidationError(path + ":" + std::to_string(lineno) + ": empty id");
    if (text.empty()) throw ValidationError(path + ":" + std::to_string(lineno) + ": empty text");
    try {
      utf8::decode(text);
    } catch (const ValidationError& e) {
      throw ValidationError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    out.emplace_back(std::move(id), std::move(text));
  }
  return out;
}

template <typename Range>
void check_unique_ids(const Range& records, const std::string& what) {
  std::set<std::string_view> seen;
  for (const auto& r : records) {
    if (!seen.insert(r.id).second) throw ValidationError("duplicate " + what + " id '" + r.id + "'");
  }
}

}  // namespace detail

inline std::vector<Document> load_corpus(const std::string& path, Format format) {
  std::vector<Document> docs;
  for (auto& [id, text] : detail::read_records(path, format, "text")) docs.emplace_back(std::move(id), std::move(text));
  detail::check_unique_ids(docs, "document");
  return docs;
}

inline std::vector<Query> load_queries(const std::string& path, Format format) {
  std::vector<Query> queries;
  for (auto& [id, text] : detail::read_records(path, format, "text")) queries.push_back({std::move(id), std::move(text)});
  detail::check_unique_ids(queries, "query");
  return queries;
}

// TSV `query_id<TAB>doc_id`. Extra TREC-style columns are not accepted.
inline Qrels load_qrels(const std::string& path) {
  auto in = detail::open_input(path);
  Qrels qrels;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    detail::strip_cr(line);
    if (detail::blank(line)) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 == line.size() || line.find('\t', tab + 1) != std::string::npos) {
      throw ValidationError(path + ":" + std::to_string(lineno) + ": expected query_id<TAB>doc_id");
    }
    auto& rel = qrels[line.substr(0, tab)];
    auto doc = line.substr(tab + 1);
    if (std::find(rel.begin(), rel.end(), doc) == rel.end()) rel.push_back(std::move(doc));
  }
  return qrels;
}

// JSONL `{query_id, passage_text}`.
inline std::vector<PassageRecord> load_passages(const std::string& path) {
  auto in = detail::open_input(path);
  std::vector<PassageRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    detail::strip_cr(line);
    if (detail::blank(line)) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(path + ":" + std::to_string(lineno) + ": malformed JSON: " + e.what());
    }
    if (!rec.is_object() || !rec.contains("query_id") || !rec.contains("passage_text") ||
        !rec["query_id"].is_string() || !rec["passage_text"].is_string()) {
      throw ValidationError(path + ":" + std::to_string(lineno) +
                            ": record needs string fields 'query_id' and 'passage_text'");
    }
    out.push_back({rec["query_id"].get<std::string>(), rec["passage_text"].get<std::string>()});
  }
  return out;
}

inline std::unordered_map<std::string, std::size_t> index_by_id(const std::vector<Document>& docs) {
  std::unordered_map<std::string, std::size_t> out;
  out.reserve(docs.size());
  for (std::size_t i = 0; i < docs.size(); ++i) out.emplace(docs[i].id, i);
  return out;
}

// First exact occurrence of `passage_text` inside the document.
inline PassageAlignment align_passage(const Document& doc, std::string_view passage_text, std::string_view query_id) {
  if (passage_text.empty()) throw ValidationError("empty passage for query '" + std::string(query_id) + "'");
  auto pos = doc.text.find(passage_text);
  // A byte match must also start on a code point boundary.
  while (pos != std::string::npos && (static_cast<unsigned char>(doc.text[pos]) & 0xC0) == 0x80) {
    pos = doc.text.find(passage_text, pos + 1);
  }
  if (pos == std::string::npos) {
    throw NotFoundError("passage for query '" + std::string(query_id) + "' not found in document '" + doc.id + "'");
  }
  PassageAlignment a;
  a.query_id = std::string(query_id);
  a.doc_id = doc.id;
  a.char_start = utf8::char_offset(doc.text, pos);
  a.char_end = a.char_start + utf8::length(passage_text);
  return a;
}

struct AlignmentOutcome {
  std::vector<PassageAlignment> alignments;
  std::vector<std::string> unaligned;  // query ids
};

// Cross-references each passage against the query's judged documents, in qrels order.
inline AlignmentOutcome align_queries(const std::vector<Document>& docs, const Qrels& qrels,
                                      const std::vector<PassageRecord>& passages) {
  auto by_id = index_by_id(docs);
  AlignmentOutcome out;
  for (const auto& p : passages) {
    bool found = false;
    if (auto it = qrels.find(p.query_id); it != qrels.end()) {
      for (const auto& doc_id : it->second) {
        auto d = by_id.find(doc_id);
        if (d == by_id.end()) continue;
        try {
          out.alignments.push_back(align_passage(docs[d->second], p.passage_text, p.query_id));
          found = true;
          break;
        } catch (const NotFoundError&) {
        }
      }
    }
    if (!found) out.unaligned.push_back(p.query_id);
  }
  return out;
}

inline void check_alignment(const PassageAlignment& a, const Document& doc) {
  if (a.doc_id != doc.id) throw ValidationError("alignment for '" + a.query_id + "' references '" + a.doc_id + "'");
  if (!(a.char_start < a.char_end && a.char_end <= doc.char_len)) {
    throw ValidationError("alignment for query '" + a.query_id + "' out of range for document '" + doc.id + "'");
  }
}

// ---------------------------------------------------------------------------
// Synthetic corpora

struct IntRange {
  std::size_t min = 0;
  std::size_t max = 0;
};

struct FrontSkewed {
  double median_fraction = 0.19;
};
struct Uniform {};
struct Fixed {
  double fraction = 0.0;
};
using PositionLaw = std::variant<FrontSkewed, Uniform, Fixed>;

struct SynthSpec {
  std::size_t num_docs = 1000;
  IntRange doc_char_len{3000, 5000};
  IntRange passage_char_len{150, 300};
  PositionLaw position_law = Uniform{};
  std::size_t vocabulary_size = 5000;
  std::uint64_t seed = 0;
  // Words in each query's private sub-vocabulary, and words per query.
  std::size_t query_vocab_size = 8;
  std::size_t query_len = 4;
};

inline void validate(const SynthSpec& s) {
  if (s.num_docs == 0) throw ValidationError("synth: num_docs must be positive");
  if (s.vocabulary_size == 0) throw ValidationError("synth: vocabulary_size must be positive");
  if (s.doc_char_len.min > s.doc_char_len.max || s.passage_char_len.min > s.passage_char_len.max) {
    throw ValidationError("synth: range with min > max");
  }
  if (s.passage_char_len.min == 0) throw ValidationError("synth: passage length must be positive");
  if (s.passage_char_len.max >= s.doc_char_len.min) {
    throw ValidationError("synth: passage length range must lie strictly below the document length range");
  }
  if (s.query_len == 0 || s.query_len > s.query_vocab_size) {
    throw ValidationError("synth: need 0 < query_len <= query_vocab_size");
  }
  if (const auto* fs = std::get_if<FrontSkewed>(&s.position_law)) {
    if (!(fs->median_fraction > 0.0 && fs->median_fraction < 1.0)) {
      throw ValidationError("synth: front_skewed median_fraction must be in (0,1)");
    }
  }
  if (const auto* fx = std::get_if<Fixed>(&s.position_law)) {
    if (!(fx->fraction >= 0.0 && fx->fraction <= 1.0)) throw ValidationError("synth: fixed fraction must be in [0,1]");
  }
}

// Draws the start fraction in [0,1]. front_skewed uses u^a with a = ln(m)/ln(1/2),
// whose median is exactly m.
inline double sample_start_fraction(const PositionLaw& law, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (const auto* fs = std::get_if<FrontSkewed>(&law)) {
    double a = std::log(fs->median_fraction) / std::log(0.5);
    return std::pow(unit(rng), a);
  }
  if (std::holds_alternative<Uniform>(law)) return unit(rng);
  return std::get<Fixed>(law).fraction;
}

struct SynthCorpus {
  std::vector<Document> documents;
  std::vector<Query> queries;
  std::vector<PassageAlignment> alignments;
  Qrels qrels;
};

namespace detail {

inline std::string letters(std::size_t i) {
  std::string s;
  do {
    s.push_back(static_cast<char>('a' + i % 26));
    i /= 26;
  } while (i > 0);
  return s;
}

inline std::string padded_id(char prefix, std::size_t i, std::size_t count) {
  std::size_t width = std::to_string(count > 0 ? count - 1 : 0).size();
  std::string digits = std::to_string(i);
  return std::string(1, prefix) + std::string(width - digits.size(), '0') + digits;
}

// Background text of exactly `n` ASCII characters, never starting or ending in a space.
inline std::string filler(std::size_t n, const std::vector<std::string>& vocab, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, vocab.size() - 1);
  std::string out;
  while (out.size() < n) {
    if (!out.empty()) {
      if (out.size() + 1 == n) {
        out.push_back('w');
        continue;
      }
      out.push_back(' ');
    }
    const auto& word = vocab[pick(rng)];
    out += word.substr(0, std::min(word.size(), n - out.size()));
  }
  return out;
}

}  // namespace detail

// Each document gets one planted passage built from a private sub-vocabulary
// ("q<i>t<j>") shared only with its query; the rest is background words ("w...").
inline SynthCorpus synth_corpus(const SynthSpec& spec) {
  validate(spec);
  std::mt19937_64 rng(spec.seed);
  std::vector<std::string> vocab;
  vocab.reserve(spec.vocabulary_size);
  for (std::size_t i = 0; i < spec.vocabulary_size; ++i) vocab.push_back("w" + detail::letters(i));

  SynthCorpus out;
  std::uniform_int_distribution<std::size_t> doc_len(spec.doc_char_len.min, spec.doc_char_len.max);
  std::uniform_int_distribution<std::size_t> passage_len(spec.passage_char_len.min, spec.passage_char_len.max);
  std::uniform_int_distribution<std::size_t> topic_word(0, spec.query_vocab_size - 1);

  for (std::size_t i = 0; i < spec.num_docs; ++i) {
    std::vector<std::string> topic;
    for (std::size_t j = 0; j < spec.query_vocab_size; ++j) {
      topic.push_back("q" + std::to_string(i) + "t" + std::to_string(j));
    }
    std::vector<std::size_t> order(topic.size());
    for (std::size_t j = 0; j < order.size(); ++j) order[j] = j;
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<std::string> query_words;
    for (std::size_t j = 0; j < spec.query_len; ++j) query_words.push_back(topic[order[j]]);

    // Query words are mandatory; more topic words are added while they fit the target.
    std::size_t target = passage_len(rng);
    std::vector<std::string> words = query_words;
    std::size_t len = 0;
    for (const auto& w : words) len += w.size() + (len > 0 ? 1 : 0);
    while (true) {
      const auto& w = topic[topic_word(rng)];
      if (len + 1 + w.size() > target) break;
      words.push_back(w);
      len += 1 + w.size();
    }
    std::shuffle(words.begin(), words.end(), rng);
    std::string passage;
    for (const auto& w : words) {
      if (!passage.empty()) passage.push_back(' ');
      passage += w;
    }

    std::size_t ld = doc_len(rng);
    std::size_t lp = passage.size();
    if (lp >= ld) throw ValidationError("synth: passage longer than document for doc " + std::to_string(i));
    double frac = sample_start_fraction(spec.position_law, rng);
    auto start = static_cast<std::size_t>(std::floor(frac * static_cast<double>(ld - lp) + 0.5));
    start = std::min(start, ld - lp);

    std::string text;
    if (start > 0) text = detail::filler(start - 1, vocab, rng) + " ";
    text += passage;
    std::size_t rest = ld - start - lp;
    if (rest > 0) text += " " + detail::filler(rest - 1, vocab, rng);

    std::string doc_id = detail::padded_id('d', i, spec.num_docs);
    std::string query_id = detail::padded_id('q', i, spec.num_docs);
    std::string query_text;
    for (const auto& w : query_words) {
      if (!query_text.empty()) query_text.push_back(' ');
      query_text += w;
    }
    out.documents.emplace_back(doc_id, std::move(text));
    out.queries.push_back({query_id, std::move(query_text)});
    out.alignments.push_back({query_id, doc_id, start, start + lp});
    out.qrels[query_id].push_back(doc_id);
  }
  return out;
}

// ---------------------------------------------------------------------------

struct PositionDistribution {
  std::size_t p5 = 0, p25 = 0, p50 = 0, p75 = 0, p95 = 0;
  double mean = 0.0;
  // char_start / (l_d - l_p), averaged; 0 for documents fully covered by the passage.
  double mean_fraction = 0.0;
  std::size_t count = 0;
};

inline PositionDistribution passage_position_stats(const std::vector<PassageAlignment>& alignments,
                                                   const std::vector<Document>& docs) {
  if (alignments.empty()) throw ValidationError("passage_position_stats: no alignments");
  auto by_id = index_by_id(docs);
  std::vector<std::size_t> starts;
  starts.reserve(alignments.size());
  double frac_sum = 0.0;
  for (const auto& a : alignments) {
    auto it = by_id.find(a.doc_id);
    if (it == by_id.end()) throw ValidationError("alignment references unknown document '" + a.doc_id + "'");
    const auto& doc = docs[it->second];
    check_alignment(a, doc);
    starts.push_back(a.char_start);
    std::size_t room = doc.char_len - a.length();
    frac_sum += room > 0 ? static_cast<double>(a.char_start) / static_cast<double>(room) : 0.0;
  }
  std::sort(starts.begin(), starts.end());
  std::span<const std::size_t> view(starts);
  PositionDistribution d;
  d.count = starts.size();
  d.p5 = stats::quantile_lower(view, 0.05);
  d.p25 = stats::quantile_lower(view, 0.25);
  d.p50 = stats::quantile_lower(view, 0.50);
  d.p75 = stats::quantile_lower(view, 0.75);
  d.p95 = stats::quantile_lower(view, 0.95);
  d.mean = stats::mean(view);
  d.mean_fraction = frac_sum / static_cast<double>(starts.size());
  return d;
}

// ---------------------------------------------------------------------------
// Writers (JSONL/TSV, stable field order)

inline void write_documents(const std::string& path, const std::vector<Document>& docs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write '" + path + "'");
  for (const auto& d : docs) {
    nlohmann::ordered_json j;
    j["id"] = d.id;
    j["text"] = d.text;
    out << j.dump() << '\n';
  }
}

inline void write_queries(const std::string& path, const std::vector<Query>& queries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write '" + path + "'");
  for (const auto& q : queries) {
    nlohmann::ordered_json j;
    j["id"] = q.id;
    j["text"] = q.text;
    out << j.dump() << '\n';
  }
}

inline void write_qrels(const std::string& path, const Qrels& qrels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write '" + path + "'");
  for (const auto& [qid, docs] : qrels) {
    for (const auto& d : docs) out << qid << '\t' << d << '\n';
  }
}

inline void write_alignments(const std::string& path, const std::vector<PassageAlignment>& alignments) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write '" + path + "'");
  for (const auto& a : alignments) {
    nlohmann::ordered_json j;
    j["query_id"] = a.query_id;
    j["doc_id"] = a.doc_id;
    j["char_start"] = a.char_start;
    j["char_end"] = a.char_end;
    out << j.dump() << '\n';
  }
}

inline std::vector<PassageAlignment> load_alignments(const std::string& path) {
  auto in = detail::open_input(path);
  std::vector<PassageAlignment> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    detail::strip_cr(line);
    if (detail::blank(line)) continue;
    try {
      auto j = nlohmann::json::parse(line);
      out.push_back({j.at("query_id").get<std::string>(), j.at("doc_id").get<std::string>(),
                     j.at("char_start").get<std::size_t>(), j.at("char_end").get<std::size_t>()});
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(path + ":" + std::to_string(lineno) + ": malformed alignment: " + e.what());
    }
  }
  return out;
}

}  // namespace posbench::corpus
