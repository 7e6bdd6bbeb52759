#include <gtest/gtest.h>

#include <mutex>
#include <random>
#include <set>

#include "posbench/analysis.hpp"
#include "posbench/report.hpp"
#include "test_util.hpp"

using namespace posbench;
using namespace posbench::analysis;
using posbench::testing::TempDir;

namespace {

corpus::SynthCorpus synth(corpus::PositionLaw law, std::size_t docs, std::uint64_t seed) {
  corpus::SynthSpec spec;
  spec.num_docs = docs;
  spec.doc_char_len = {800, 1200};
  spec.passage_char_len = {60, 100};
  spec.position_law = law;
  spec.vocabulary_size = 2000;
  spec.seed = seed;
  return corpus::synth_corpus(spec);
}

embed::NativeBackend native(embed::Pooling pooling, std::uint64_t seed = 1) {
  return embed::NativeBackend(embed::make_toy_params(32, 8192, pooling, false, seed));
}

// Mean pooling plus noise keyed on the exact text: position carries no signal
// but every rewritten document gets a different vector.
class NoisyBackend final : public embed::EmbeddingBackend {
 public:
  explicit NoisyBackend(double sigma) : inner_(native(embed::Pooling::mean())), sigma_(sigma) {}
  std::vector<embed::EmbeddingVector> embed_batch(const std::vector<std::string>& texts) const override {
    auto out = inner_.embed_batch(texts);
    for (std::size_t i = 0; i < texts.size(); ++i) {
      std::mt19937_64 rng(embed::fnv1a(texts[i]));
      std::normal_distribution<double> g(0.0, sigma_);
      for (auto& x : out[i].values) x += g(rng);
    }
    return out;
  }
  std::size_t max_input_tokens() const override { return inner_.max_input_tokens(); }
  std::string describe() const override { return "noisy"; }

 private:
  embed::NativeBackend inner_;
  double sigma_;
};

class RecordingBackend final : public embed::EmbeddingBackend {
 public:
  explicit RecordingBackend(const embed::EmbeddingBackend& inner) : inner_(inner) {}
  std::vector<embed::EmbeddingVector> embed_batch(const std::vector<std::string>& texts) const override {
    std::lock_guard lock(mu_);
    seen_.insert(seen_.end(), texts.begin(), texts.end());
    return inner_.embed_batch(texts);
  }
  std::size_t max_input_tokens() const override { return inner_.max_input_tokens(); }
  std::string describe() const override { return "recording"; }
  std::vector<std::string> seen() const { return seen_; }

 private:
  const embed::EmbeddingBackend& inner_;
  mutable std::mutex mu_;
  mutable std::vector<std::string> seen_;
};

// Fails every request containing one of the given inputs.
class FailingSpanBackend final : public embed::SpanBackend {
 public:
  FailingSpanBackend(const embed::SpanBackend& inner, std::set<std::string> poison)
      : inner_(inner), poison_(std::move(poison)) {}
  std::vector<std::vector<std::string>> fill_spans(const std::vector<std::string>& inputs,
                                                   std::size_t k) const override {
    for (const auto& i : inputs) {
      if (poison_.count(i)) throw TransportError("mock://spans", 0, "connection reset");
    }
    return inner_.fill_spans(inputs, k);
  }

 private:
  const embed::SpanBackend& inner_;
  std::set<std::string> poison_;
};

corpus::Document repeated_doc(std::size_t tokens, std::size_t salt = 0) {
  std::string text;
  for (std::size_t i = 0; i < tokens; ++i) text += "t" + std::to_string(i % 37) + "s" + std::to_string(salt) + " ";
  return corpus::Document("long" + std::to_string(salt), text);
}

}  // namespace

// ---------------------------------------------------------------------------
// Insertion probe

TEST(InsertionProbe, PositionBlindEmbedderGivesIdenticalRuns) {
  auto sc = synth(corpus::Uniform{}, 200, 1);
  auto be = native(embed::Pooling::mean());
  auto rep = run_insertion_probe(be, sc.documents, sc.queries, sc.alignments, sc.qrels, 100);
  ASSERT_EQ(rep.per_position.size(), 10u);
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_EQ(rep.per_position[i], rep.baseline);
    EXPECT_EQ(rep.deltas[i].mrr_at_k, 0.0);
  }
  auto perm = permutation_test(rep, 200, 1);
  EXPECT_EQ(perm.statistic, 0.0);
  EXPECT_EQ(perm.p_value, 1.0);
}

TEST(InsertionProbe, NoisyNullIsNotSignificant) {
  auto sc = synth(corpus::Uniform{}, 300, 2);
  NoisyBackend be(0.02);
  auto rep = run_insertion_probe(be, sc.documents, sc.queries, sc.alignments, sc.qrels, 100);
  double max_delta = 0;
  for (const auto& d : rep.deltas) max_delta = std::max(max_delta, std::abs(d.mrr_at_k));
  EXPECT_GT(max_delta, 0.0);
  auto perm = permutation_test(rep, 1000, 3);
  EXPECT_GT(perm.p_value, 0.01);
  EXPECT_LT(max_delta, 3 * perm.delta_std);
}

TEST(InsertionProbe, FrontBiasedEmbedderFavoursPositionOne) {
  auto sc = synth(corpus::Uniform{}, 200, 3);
  auto be = native(embed::Pooling::position_weighted(10.0));
  auto rep = run_insertion_probe(be, sc.documents, sc.queries, sc.alignments, sc.qrels, 100);
  EXPECT_GE(rep.deltas.front().mrr_at_k, rep.deltas.back().mrr_at_k);
  EXPECT_GT(rep.per_position.front().mrr_at_k, rep.per_position.back().mrr_at_k);
  EXPECT_LT(position_trend(rep), -0.5);
  auto perm = permutation_test(rep, 500, 4);
  EXPECT_LT(perm.p_value, 0.01);
}

TEST(InsertionProbe, OnlyAlignedDocumentsAreRewritten) {
  auto sc = synth(corpus::Uniform{}, 60, 4);
  std::vector<corpus::PassageAlignment> some(sc.alignments.begin(), sc.alignments.begin() + 5);
  auto inner = native(embed::Pooling::position_weighted(1.0));
  RecordingBackend be(inner);
  auto rep = run_insertion_probe(be, sc.documents, sc.queries, some, sc.qrels, 10);
  EXPECT_EQ(rep.num_queries, 5u);
  // 60 originals + 5 queries + 10 x 5 rewrites.
  EXPECT_EQ(be.seen().size(), 60u + 5u + 50u);
}

TEST(InsertionProbe, DeterministicAndConsistent) {
  auto sc = synth(corpus::FrontSkewed{0.19}, 80, 5);
  auto be = native(embed::Pooling::position_weighted(2.0));
  auto a = run_insertion_probe(be, sc.documents, sc.queries, sc.alignments, sc.qrels);
  auto b = run_insertion_probe(be, sc.documents, sc.queries, sc.alignments, sc.qrels);
  EXPECT_EQ(report::to_json(a), report::to_json(b));
  EXPECT_NO_THROW(validate(a));
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_EQ(a.deltas[i].mrr_at_k, a.per_position[i].mrr_at_k - a.baseline.mrr_at_k);
  }
}

TEST(InsertionProbe, MissingDocumentIsError) {
  auto sc = synth(corpus::Uniform{}, 10, 6);
  auto bad = sc.alignments;
  bad[0].doc_id = "nowhere";
  auto be = native(embed::Pooling::mean());
  EXPECT_THROW(run_insertion_probe(be, sc.documents, sc.queries, bad, sc.qrels), ValidationError);
}

// ---------------------------------------------------------------------------
// Segment probe

TEST(SegmentProbe, IdenticalSegmentsGiveEqualCosines) {
  std::string unit = "alpha beta gamma delta epsilon ";
  std::string text;
  for (int i = 0; i < 10; ++i) text += unit;
  auto be = native(embed::Pooling::mean());
  auto rep = run_segment_probe(be, {corpus::Document("d", text)}, 10, 10);
  ASSERT_EQ(rep.segments.size(), 10u);
  for (const auto& s : rep.segments) EXPECT_EQ(s.mean, rep.segments.front().mean);
}

TEST(SegmentProbe, DecaySignOrdersSegments) {
  auto sc = synth(corpus::Uniform{}, 150, 7);
  auto biased = native(embed::Pooling::position_weighted(10.0));
  auto rep = run_segment_probe(biased, sc.documents, 10, 150);
  EXPECT_GT(rep.segments.front().mean, rep.segments.back().mean);
  EXPECT_EQ(rep.pooling, "native:position_weighted(10)");
}

TEST(SegmentProbe, ZeroDecaySegmentsAgreeWithinBootstrapIntervals) {
  auto sc = synth(corpus::Uniform{}, 1000, 8);
  auto be = native(embed::Pooling::position_weighted(0.0));
  auto rep = run_segment_probe(be, sc.documents, 10, 1000);
  // Recompute the raw cosines for the bootstrap.
  std::vector<std::vector<double>> cos(10);
  for (const auto& d : sc.documents) {
    auto toks = probes::tokenize(d.text);
    auto segs = probes::segment_uniform(d, toks, 10);
    auto dv = be.embed(d.text);
    for (std::size_t s = 0; s < 10; ++s) cos[s].push_back(embed::cosine(dv, be.embed(segs[s].text)));
  }
  std::mt19937_64 rng(9);
  std::vector<double> sigma(10, 0.0);
  for (std::size_t s = 0; s < 10; ++s) {
    EXPECT_NEAR(rep.segments[s].mean, stats::mean(std::span<const double>(cos[s])), 1e-12);
    std::vector<double> boots;
    std::uniform_int_distribution<std::size_t> pick(0, cos[s].size() - 1);
    for (int b = 0; b < 400; ++b) {
      double acc = 0;
      for (std::size_t i = 0; i < cos[s].size(); ++i) acc += cos[s][pick(rng)];
      boots.push_back(acc / static_cast<double>(cos[s].size()));
    }
    sigma[s] = stats::stddev(std::span<const double>(boots));
  }
  for (std::size_t i = 0; i < 10; ++i) {
    for (std::size_t j = i + 1; j < 10; ++j) {
      // The two 2-sigma intervals overlap.
      EXPECT_LT(std::abs(rep.segments[i].mean - rep.segments[j].mean), 2 * (sigma[i] + sigma[j]))
          << i + 1 << " vs " << j + 1;
    }
  }
}

TEST(SegmentProbe, SamplingIsSeededAndBounded) {
  auto sc = synth(corpus::Uniform{}, 50, 10);
  auto be = native(embed::Pooling::mean());
  auto a = run_segment_probe(be, sc.documents, 10, 20, 5);
  auto b = run_segment_probe(be, sc.documents, 10, 20, 5);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.segments.front().n, 20u);
  EXPECT_THROW(run_segment_probe(be, {corpus::Document("d", "too short")}, 10, 5), ValidationError);
}

// ---------------------------------------------------------------------------
// Span probe

TEST(SpanProbe, NormalizeWhitespace) {
  EXPECT_EQ(normalize_whitespace("  a \t b\n"), "a b");
  EXPECT_EQ(normalize_whitespace(""), "");
  EXPECT_EQ(normalize_whitespace("x\xC2\xA0y"), "x y");
}

TEST(SpanProbe, InstancesCoverFullWindows) {
  std::vector<corpus::Document> docs{repeated_doc(1000), repeated_doc(600)};
  docs[1].id = "short";
  auto inst = build_span_instances(docs, 256, 30, 3, 7);
  std::map<std::size_t, std::size_t> per_window;
  for (const auto& i : inst) {
    ++per_window[i.window.start];
    EXPECT_EQ(i.window.width(), 256u);
    EXPECT_GE(i.span_start, i.window.start);
    EXPECT_LE(i.span_start + 3, i.window.end);
  }
  EXPECT_EQ(per_window, (std::map<std::size_t, std::size_t>{{0, 30}, {256, 30}, {512, 30}}));
  EXPECT_EQ(inst, build_span_instances(docs, 256, 30, 3, 7));
}

TEST(SpanProbe, MockBackends) {
  std::vector<corpus::Document> docs{repeated_doc(2100)};
  auto inst = build_span_instances(docs, 256, 50, 3, 1);
  using Mode = OracleSpanBackend::Mode;
  auto echo = run_span_probe(OracleSpanBackend(inst, Mode::echo), inst);
  ASSERT_EQ(echo.windows.size(), 8u);
  for (const auto& w : echo.windows) EXPECT_EQ(w.mean_acc, 1.0);
  for (const auto& w : run_span_probe(OracleSpanBackend(inst, Mode::empty), inst).windows) EXPECT_EQ(w.mean_acc, 0.0);
  auto cut = run_span_probe(OracleSpanBackend(inst, Mode::position_cutoff, 256), inst);
  for (const auto& w : cut.windows) {
    EXPECT_EQ(w.mean_acc, w.window_start == 0 ? 1.0 : 0.0);
    EXPECT_EQ(w.n, 50u);
  }
}

TEST(SpanProbe, UniformMockIsFlat) {
  // Many documents with few draws each, so that inputs are almost all distinct.
  std::vector<corpus::Document> docs;
  for (std::size_t i = 0; i < 100; ++i) docs.push_back(repeated_doc(2100, i));
  auto inst = build_span_instances(docs, 256, 2000, 3, 2);
  auto rep = run_span_probe(OracleSpanBackend(inst, OracleSpanBackend::Mode::uniform, 0, 0.6, 3), inst);
  for (const auto& w : rep.windows) {
    double se = std::sqrt(0.6 * 0.4 / static_cast<double>(w.n));
    EXPECT_NEAR(w.mean_acc, 0.6, 4 * se);
  }
}

TEST(SpanProbe, FailedWindowsReported) {
  std::vector<corpus::Document> docs{repeated_doc(800)};
  auto inst = build_span_instances(docs, 256, 10, 3, 4);
  OracleSpanBackend echo(inst, OracleSpanBackend::Mode::echo);
  std::set<std::string> poison;
  for (const auto& i : inst) {
    if (i.window.start == 256) poison.insert(i.input_with_sentinels);
  }
  FailingSpanBackend be(echo, poison);
  try {
    run_span_probe(be, inst);
    FAIL();
  } catch (const PartialReportError& e) {
    ASSERT_EQ(e.failed_windows().size(), 1u);
    EXPECT_EQ(e.failed_windows()[0].start, 256u);
    EXPECT_EQ(e.partial().windows.size(), 2u);
    EXPECT_NE(std::string(e.what()).find("(256,512)"), std::string::npos);
  }
}

// ---------------------------------------------------------------------------
// Reports

TEST(Reports, PositionCsvHasElevenRowsAndRoundTrips) {
  auto sc = synth(corpus::Uniform{}, 40, 11);
  auto rep = run_insertion_probe(native(embed::Pooling::position_weighted(3.0)), sc.documents, sc.queries,
                                 sc.alignments, sc.qrels);
  auto csv = report::to_csv(rep);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 12);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "kind,position,mrr,recall,delta_mrr,delta_recall");
  EXPECT_EQ(report::to_csv(report::position_report_from_csv(csv)), csv);
  auto json = report::to_json(rep);
  EXPECT_EQ(report::to_json(report::position_report_from_json(json)), json);
}

TEST(Reports, SegmentAndSpanRoundTrip) {
  analysis::SegmentSimilarityReport seg{"mean", {stats::summarize({0.1, 0.2, 0.3}), stats::summarize({0.5, 0.25})}};
  auto json = report::to_json(seg);
  EXPECT_EQ(report::to_json(report::segment_report_from_json(json)), json);
  EXPECT_EQ(report::segment_report_from_json(json), seg);
  auto csv = report::to_csv(seg);
  EXPECT_EQ(report::to_csv(report::segment_report_from_csv(csv)), csv);

  analysis::SpanAccuracyReport span{{{0, 256, 1.0, 0.0, 7}, {256, 512, 0.5, 0.5, 4}}};
  EXPECT_EQ(report::span_report_from_csv(report::to_csv(span)), span);
  EXPECT_EQ(report::span_report_from_json(report::to_json(span)), span);
  EXPECT_EQ(report::to_csv(span), "window_start,window_end,mean_acc,std,n\n0,256,1,0,7\n256,512,0.5,0.5,4\n");
}

TEST(Reports, EmptyReportsRejected) {
  TempDir dir;
  EXPECT_THROW(report::emit_report(analysis::SegmentSimilarityReport{}, dir.file("s.csv"), report::Format::csv),
               ValidationError);
  EXPECT_THROW(report::to_json(analysis::SpanAccuracyReport{}), ValidationError);
  EXPECT_THROW(report::to_csv(analysis::PositionReport{}), ValidationError);
}

TEST(Reports, TamperedDeltaRejected) {
  auto sc = synth(corpus::Uniform{}, 30, 12);
  auto rep = run_insertion_probe(native(embed::Pooling::mean()), sc.documents, sc.queries, sc.alignments, sc.qrels);
  auto csv = report::to_csv(rep);
  auto pos = csv.rfind(",0,0\n");
  ASSERT_NE(pos, std::string::npos);
  csv.replace(pos, 5, ",0.5,0\n");
  EXPECT_THROW(report::position_report_from_csv(csv), ValidationError);
}

TEST(Reports, FilesRoundTrip) {
  TempDir dir;
  analysis::SpanAccuracyReport span{{{0, 256, 0.25, 0.4330127018922193, 4}}};
  for (auto f : {report::Format::csv, report::Format::json}) {
    auto path = dir.file(std::string("span") + report::extension(f));
    report::emit_report(span, path, f);
    EXPECT_EQ(report::read_span_report(path, f), span);
  }
}
