#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "posbench/corpus.hpp"
#include "posbench/embed.hpp"
#include "posbench/error.hpp"
#include "posbench/probes.hpp"
#include "posbench/remote.hpp"
#include "posbench/retrieval.hpp"
#include "posbench/stats.hpp"

namespace posbench::analysis {

inline constexpr std::size_t kPositions = 10;

// ---------------------------------------------------------------------------
// Insertion probe

struct PositionReport {
  std::string probe_kind = "insertion";
  std::size_t k = 100;
  std::size_t num_queries = 0;
  retrieval::Metrics baseline;
  std::vector<retrieval::Metrics> per_position;  // entry i is position i + 1
  std::vector<retrieval::Metrics> deltas;        // per_position[i] - baseline
  // Reciprocal rank per query: row 0 is the default run, row p is position p.
  // Kept in memory only.
  std::vector<std::string> query_ids;
  std::vector<std::vector<double>> reciprocal_ranks;
};

inline retrieval::Metrics metric_delta(const retrieval::Metrics& a, const retrieval::Metrics& base) {
  return {a.mrr_at_k - base.mrr_at_k, a.recall_at_k - base.recall_at_k, a.k};
}

inline void validate(const PositionReport& r) {
  if (r.per_position.size() != kPositions || r.deltas.size() != kPositions) {
    throw ValidationError("position report must cover positions 1..10");
  }
  for (std::size_t i = 0; i < kPositions; ++i) {
    auto d = metric_delta(r.per_position[i], r.baseline);
    if (d.mrr_at_k != r.deltas[i].mrr_at_k || d.recall_at_k != r.deltas[i].recall_at_k) {
      throw ValidationError("position report: delta at position " + std::to_string(i + 1) +
                            " disagrees with per-position and baseline metrics");
    }
  }
}

namespace detail {

struct Evaluated {
  retrieval::Metrics metrics;
  std::vector<double> rr;
};

inline Evaluated evaluate_run(const std::vector<std::string>& doc_ids, const std::vector<embed::EmbeddingVector>& doc_vecs,
                              const std::vector<std::string>& query_ids,
                              const std::vector<embed::EmbeddingVector>& query_vecs, const corpus::Qrels& qrels,
                              std::size_t k) {
  auto index = retrieval::build_index(doc_ids, doc_vecs);
  auto run = retrieval::search_all(index, query_ids, query_vecs, k);
  Evaluated out;
  out.metrics = retrieval::evaluate(run, qrels, k);
  for (const auto& qid : query_ids) {
    out.rr.push_back(retrieval::reciprocal_rank(run.at(qid), retrieval::detail::relevant_for(qrels, qid), k));
  }
  return out;
}

}  // namespace detail

// One default run plus one run per insertion point. Only documents that carry
// an alignment are rewritten; a document with several alignments moves the
// first one. Evaluated queries are those with an alignment.
inline PositionReport run_insertion_probe(const embed::EmbeddingBackend& backend,
                                          const std::vector<corpus::Document>& docs,
                                          const std::vector<corpus::Query>& queries,
                                          const std::vector<corpus::PassageAlignment>& alignments,
                                          const corpus::Qrels& qrels, std::size_t k = 100,
                                          const probes::Tokenizer& tokenizer = probes::default_tokenizer()) {
  if (alignments.empty()) throw ValidationError("insertion probe: no alignments");
  auto by_id = corpus::index_by_id(docs);
  std::unordered_map<std::string, const corpus::Query*> query_by_id;
  for (const auto& q : queries) query_by_id.emplace(q.id, &q);

  std::vector<std::string> query_ids;
  std::vector<std::string> query_texts;
  std::set<std::string> seen_queries;
  // doc index -> the alignment that moves it
  std::map<std::size_t, const corpus::PassageAlignment*> moved;
  for (const auto& a : alignments) {
    auto d = by_id.find(a.doc_id);
    if (d == by_id.end()) {
      throw ValidationError("alignment for query '" + a.query_id + "' references missing doc '" + a.doc_id + "'");
    }
    corpus::check_alignment(a, docs[d->second]);
    moved.emplace(d->second, &a);
    if (seen_queries.insert(a.query_id).second) {
      auto q = query_by_id.find(a.query_id);
      if (q == query_by_id.end()) throw ValidationError("aligned query '" + a.query_id + "' has no text");
      retrieval::detail::relevant_for(qrels, a.query_id);
      query_ids.push_back(a.query_id);
      query_texts.push_back(q->second->text);
    }
  }

  std::vector<std::string> doc_ids;
  std::vector<std::string> doc_texts;
  for (const auto& d : docs) {
    doc_ids.push_back(d.id);
    doc_texts.push_back(d.text);
  }
  auto base_vecs = backend.embed_batch(doc_texts);
  auto query_vecs = backend.embed_batch(query_texts);
  if (base_vecs.size() != docs.size() || query_vecs.size() != query_ids.size()) {
    throw ValidationError("insertion probe: backend returned the wrong number of vectors");
  }

  PositionReport report;
  report.k = k;
  report.num_queries = query_ids.size();
  report.query_ids = query_ids;
  auto base = detail::evaluate_run(doc_ids, base_vecs, query_ids, query_vecs, qrels, k);
  report.baseline = base.metrics;
  report.reciprocal_ranks.push_back(std::move(base.rr));

  std::vector<probes::InsertionPlan> plans;
  std::vector<std::size_t> moved_docs;
  for (const auto& [di, a] : moved) {
    plans.push_back(probes::insertion_points(docs[di], *a, kPositions));
    moved_docs.push_back(di);
  }
  for (std::size_t p = 0; p < kPositions; ++p) {
    std::vector<std::string> rewritten;
    rewritten.reserve(moved_docs.size());
    for (std::size_t m = 0; m < moved_docs.size(); ++m) {
      const auto di = moved_docs[m];
      rewritten.push_back(probes::relocate_passage(docs[di], *moved.at(di), plans[m].points[p], tokenizer).text);
    }
    auto new_vecs = backend.embed_batch(rewritten);
    if (new_vecs.size() != rewritten.size()) {
      throw ValidationError("insertion probe: backend returned the wrong number of vectors");
    }
    auto vecs = base_vecs;
    for (std::size_t m = 0; m < moved_docs.size(); ++m) vecs[moved_docs[m]] = std::move(new_vecs[m]);
    auto run = detail::evaluate_run(doc_ids, vecs, query_ids, query_vecs, qrels, k);
    report.per_position.push_back(run.metrics);
    report.deltas.push_back(metric_delta(run.metrics, report.baseline));
    report.reciprocal_ranks.push_back(std::move(run.rr));
  }
  return report;
}

// Within-query label permutation over the 11 runs. Statistic: the largest
// |mean RR(position) - mean RR(default)| over the 10 positions.
struct PermutationResult {
  double statistic = 0.0;
  double p_value = 1.0;
  double null_mean = 0.0;
  double null_std = 0.0;
  // Spread of a single position delta under the null.
  double delta_std = 0.0;
  std::size_t rounds = 0;
};

namespace detail {

inline std::vector<double> position_deltas(const std::vector<std::vector<double>>& rr) {
  const std::size_t n = rr.front().size();
  std::vector<double> means(rr.size(), 0.0);
  for (std::size_t r = 0; r < rr.size(); ++r) {
    for (std::size_t q = 0; q < n; ++q) means[r] += rr[r][q];
    means[r] /= static_cast<double>(n);
  }
  std::vector<double> out;
  for (std::size_t r = 1; r < rr.size(); ++r) out.push_back(means[r] - means[0]);
  return out;
}

inline double max_abs(const std::vector<double>& xs) {
  double m = 0.0;
  for (double x : xs) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace detail

inline PermutationResult permutation_test(const PositionReport& report, std::size_t rounds, std::uint64_t seed) {
  const auto& rr = report.reciprocal_ranks;
  if (rr.size() != kPositions + 1 || rr.front().empty()) {
    throw ValidationError("permutation test needs per-query reciprocal ranks for all 11 runs");
  }
  if (rounds == 0) throw ValidationError("permutation test needs at least one round");
  const std::size_t n = rr.front().size();
  PermutationResult out;
  out.rounds = rounds;
  out.statistic = detail::max_abs(detail::position_deltas(rr));

  std::mt19937_64 rng(seed);
  std::vector<std::vector<double>> shuffled(rr.size(), std::vector<double>(n));
  std::vector<double> column(rr.size());
  std::vector<double> null_stats;
  std::vector<double> null_deltas;
  std::size_t at_least = 0;
  for (std::size_t b = 0; b < rounds; ++b) {
    for (std::size_t q = 0; q < n; ++q) {
      for (std::size_t r = 0; r < rr.size(); ++r) column[r] = rr[r][q];
      std::shuffle(column.begin(), column.end(), rng);
      for (std::size_t r = 0; r < rr.size(); ++r) shuffled[r][q] = column[r];
    }
    auto deltas = detail::position_deltas(shuffled);
    double s = detail::max_abs(deltas);
    if (s >= out.statistic) ++at_least;
    null_stats.push_back(s);
    null_deltas.insert(null_deltas.end(), deltas.begin(), deltas.end());
  }
  out.p_value = static_cast<double>(at_least + 1) / static_cast<double>(rounds + 1);
  out.null_mean = stats::mean(std::span<const double>(null_stats));
  out.null_std = stats::stddev(std::span<const double>(null_stats));
  out.delta_std = stats::stddev(std::span<const double>(null_deltas));
  return out;
}

// Spearman correlation between position (1..10) and the per-position MRR.
inline double position_trend(const PositionReport& report) {
  std::vector<double> pos, mrr;
  for (std::size_t i = 0; i < report.per_position.size(); ++i) {
    pos.push_back(static_cast<double>(i + 1));
    mrr.push_back(report.per_position[i].mrr_at_k);
  }
  return stats::spearman(pos, mrr);
}

// ---------------------------------------------------------------------------
// Segment probe

struct SegmentSimilarityReport {
  std::string pooling;
  std::vector<stats::Summary> segments;  // entry i is segment i + 1
  friend bool operator==(const SegmentSimilarityReport&, const SegmentSimilarityReport&) = default;
};

// Splits each sampled document (as the backend sees it, after truncation) into
// `k_segments` groups of near-equal token count and records the cosine between
// the document embedding and each group's embedding.
inline SegmentSimilarityReport run_segment_probe(const embed::EmbeddingBackend& backend,
                                                 const std::vector<corpus::Document>& docs,
                                                 std::size_t k_segments = 10, std::size_t sample_size = 24000,
                                                 std::uint64_t seed = 0, std::string pooling_label = {},
                                                 const probes::Tokenizer& tokenizer = probes::default_tokenizer()) {
  if (k_segments == 0) throw ValidationError("segment probe: k_segments must be positive");
  std::vector<std::size_t> eligible;
  std::vector<std::vector<probes::Token>> tokens(docs.size());
  for (std::size_t i = 0; i < docs.size(); ++i) {
    tokens[i] = tokenizer.tokenize(docs[i].text);
    if (tokens[i].size() > backend.max_input_tokens()) tokens[i].resize(backend.max_input_tokens());
    if (tokens[i].size() >= k_segments) eligible.push_back(i);
  }
  if (eligible.empty()) throw ValidationError("segment probe: no document has enough tokens");
  if (sample_size < eligible.size()) {
    std::mt19937_64 rng(seed);
    std::shuffle(eligible.begin(), eligible.end(), rng);
    eligible.resize(sample_size);
    std::sort(eligible.begin(), eligible.end());
  }

  std::vector<std::vector<double>> cosines(k_segments);
  for (auto di : eligible) {
    const auto& toks = tokens[di];
    corpus::Document visible(docs[di].id, utf8::substr(docs[di].text, 0, toks.back().char_end));
    std::vector<std::string> texts{visible.text};
    for (auto& v : probes::segment_uniform(visible, toks, k_segments)) texts.push_back(std::move(v.text));
    auto vecs = backend.embed_batch(texts);
    if (vecs.size() != texts.size()) throw ValidationError("segment probe: backend returned the wrong number of vectors");
    for (std::size_t s = 0; s < k_segments; ++s) cosines[s].push_back(embed::cosine(vecs[0], vecs[s + 1]));
  }

  SegmentSimilarityReport report;
  report.pooling = pooling_label.empty() ? backend.describe() : std::move(pooling_label);
  for (auto& c : cosines) report.segments.push_back(stats::summarize(std::move(c)));
  return report;
}

// ---------------------------------------------------------------------------
// Span probe

struct WindowAccuracy {
  std::size_t window_start = 0;
  std::size_t window_end = 0;
  double mean_acc = 0.0;
  double std = 0.0;
  std::size_t n = 0;
  friend bool operator==(const WindowAccuracy&, const WindowAccuracy&) = default;
};

struct SpanAccuracyReport {
  std::vector<WindowAccuracy> windows;
  friend bool operator==(const SpanAccuracyReport&, const SpanAccuracyReport&) = default;
};

// Raised when some windows could not be scored; carries what was completed.
class PartialReportError : public std::runtime_error {
 public:
  PartialReportError(SpanAccuracyReport partial, std::vector<probes::TokenWindow> failed, const std::string& detail)
      : std::runtime_error(describe(failed, detail)), partial_(std::move(partial)), failed_(std::move(failed)) {}

  const SpanAccuracyReport& partial() const noexcept { return partial_; }
  const std::vector<probes::TokenWindow>& failed_windows() const noexcept { return failed_; }

 private:
  static std::string describe(const std::vector<probes::TokenWindow>& failed, const std::string& detail) {
    std::string s = "span probe failed for window(s)";
    for (const auto& w : failed) s += " (" + std::to_string(w.start) + "," + std::to_string(w.end) + ")";
    return s + ": " + detail;
  }

  SpanAccuracyReport partial_;
  std::vector<probes::TokenWindow> failed_;
};

// Collapses whitespace runs to one space and trims both ends.
inline std::string normalize_whitespace(std::string_view s) {
  std::string out;
  bool pending = false;
  for (char32_t c : utf8::decode(s)) {
    if (probes::chars::is_space(c)) {
      pending = !out.empty();
      continue;
    }
    if (pending) out += ' ';
    pending = false;
    utf8::append(out, c);
  }
  return out;
}

// Instances for windows [w * window_len, (w + 1) * window_len) below
// input_token_limit. Documents covering the whole window take turns; each
// (window, document) pair draws its spans from its own seed.
inline std::vector<probes::SpanCorruptionInstance> build_span_instances(
    const std::vector<corpus::Document>& docs, std::size_t window_len, std::size_t instances_per_window,
    std::size_t span_len = 3, std::uint64_t seed = 0, std::size_t input_token_limit = 2048,
    const probes::Tokenizer& tokenizer = probes::default_tokenizer()) {
  if (window_len < span_len) throw ValidationError("span probe: window shorter than a span");
  std::vector<std::vector<probes::Token>> tokens;
  tokens.reserve(docs.size());
  for (const auto& d : docs) tokens.push_back(tokenizer.tokenize(d.text));
  std::vector<probes::SpanCorruptionInstance> out;
  for (std::size_t start = 0; start + window_len <= input_token_limit; start += window_len) {
    probes::TokenWindow window{start, start + window_len};
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < docs.size(); ++i) {
      if (tokens[i].size() >= window.end) eligible.push_back(i);
    }
    if (eligible.empty()) continue;
    const std::size_t share = instances_per_window / eligible.size();
    const std::size_t extra = instances_per_window % eligible.size();
    for (std::size_t e = 0; e < eligible.size(); ++e) {
      std::size_t count = share + (e < extra ? 1 : 0);
      if (count == 0) continue;
      std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                        static_cast<std::uint32_t>(start), static_cast<std::uint32_t>(eligible[e])};
      std::uint32_t words[2];
      seq.generate(words, words + 2);
      std::uint64_t sub = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
      auto batch = probes::corrupt_spans(docs[eligible[e]], tokens[eligible[e]], window, count, span_len, sub,
                                         input_token_limit);
      out.insert(out.end(), std::make_move_iterator(batch.begin()), std::make_move_iterator(batch.end()));
    }
  }
  return out;
}

// Scores each instance 1 if the predicted span equals the target after
// whitespace normalization, else 0. The backend is queried once per window.
inline SpanAccuracyReport run_span_probe(const embed::SpanBackend& backend,
                                         const std::vector<probes::SpanCorruptionInstance>& instances) {
  if (instances.empty()) throw ValidationError("span probe: no instances");
  std::map<std::pair<std::size_t, std::size_t>, std::vector<const probes::SpanCorruptionInstance*>> by_window;
  for (const auto& inst : instances) by_window[{inst.window.start, inst.window.end}].push_back(&inst);

  SpanAccuracyReport report;
  std::vector<probes::TokenWindow> failed;
  std::string first_error;
  for (const auto& [w, group] : by_window) {
    std::vector<std::string> inputs;
    for (const auto* inst : group) inputs.push_back(inst->input_with_sentinels);
    std::vector<std::vector<std::string>> predictions;
    try {
      predictions = backend.fill_spans(inputs, 1);
      if (predictions.size() != inputs.size()) throw ValidationError("prediction count mismatch");
    } catch (const std::exception& e) {
      failed.push_back({w.first, w.second});
      if (first_error.empty()) first_error = e.what();
      continue;
    }
    std::vector<double> hits;
    for (std::size_t i = 0; i < group.size(); ++i) {
      bool ok = !predictions[i].empty() &&
                normalize_whitespace(predictions[i].front()) == normalize_whitespace(group[i]->target_spans.front());
      hits.push_back(ok ? 1.0 : 0.0);
    }
    std::span<const double> view(hits);
    report.windows.push_back({w.first, w.second, stats::mean(view), stats::stddev(view), hits.size()});
  }
  if (!failed.empty()) throw PartialReportError(std::move(report), std::move(failed), first_error);
  return report;
}

inline SpanAccuracyReport run_span_probe(const embed::SpanBackend& backend, const std::vector<corpus::Document>& docs,
                                         std::size_t window_len, std::size_t instances_per_window,
                                         std::uint64_t seed = 0, std::size_t span_len = 3,
                                         std::size_t input_token_limit = 2048) {
  return run_span_probe(backend,
                        build_span_instances(docs, window_len, instances_per_window, span_len, seed, input_token_limit));
}

// ---------------------------------------------------------------------------
// In-process span backends that answer from the instances' own targets.

class OracleSpanBackend final : public embed::SpanBackend {
 public:
  enum class Mode { echo, empty, position_cutoff, uniform };

  OracleSpanBackend(const std::vector<probes::SpanCorruptionInstance>& instances, Mode mode, std::size_t cutoff = 256,
                    double accuracy = 1.0, std::uint64_t seed = 0)
      : mode_(mode), cutoff_(cutoff), accuracy_(accuracy), seed_(seed) {
    if (!(accuracy >= 0.0 && accuracy <= 1.0)) throw ValidationError("mock accuracy must lie in [0, 1]");
    for (const auto& inst : instances) answers_[inst.input_with_sentinels] = {inst.span_start, inst.target_spans};
  }

  std::vector<std::vector<std::string>> fill_spans(const std::vector<std::string>& inputs,
                                                   std::size_t spans_per_input) const override {
    std::vector<std::vector<std::string>> out;
    for (const auto& input : inputs) {
      auto it = answers_.find(input);
      if (it == answers_.end()) throw ValidationError("mock span backend: unknown input");
      const auto& [start, targets] = it->second;
      bool correct = false;
      switch (mode_) {
        case Mode::echo: correct = true; break;
        case Mode::empty: correct = false; break;
        case Mode::position_cutoff: correct = start < cutoff_; break;
        case Mode::uniform: {
          std::uint64_t h = embed::fnv1a(input) ^ seed_;
          h ^= h >> 33;
          h *= 0xff51afd7ed558ccdull;
          h ^= h >> 33;
          correct = static_cast<double>(h >> 11) * 0x1.0p-53 < accuracy_;
          break;
        }
      }
      std::vector<std::string> answer(spans_per_input);
      if (correct) {
        for (std::size_t i = 0; i < spans_per_input && i < targets.size(); ++i) answer[i] = targets[i];
      }
      out.push_back(std::move(answer));
    }
    return out;
  }

 private:
  Mode mode_;
  std::size_t cutoff_;
  double accuracy_;
  std::uint64_t seed_;
  std::unordered_map<std::string, std::pair<std::size_t, std::vector<std::string>>> answers_;
};

}  // namespace posbench::analysis
