#include <gtest/gtest.h>

#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <random>

#include "posbench/probes.hpp"

using namespace posbench;
using namespace posbench::probes;

namespace {

std::vector<std::string> surfaces(const std::vector<Token>& toks) {
  std::vector<std::string> out;
  for (const auto& t : toks) out.push_back(t.surface);
  return out;
}

std::string random_text(std::mt19937_64& rng, std::size_t len) {
  static const std::vector<std::string> pieces{"a", "b", "Z", "9", " ", "  ", "\t", "\n", ".", ",", "'", "-",
                                               "\xC3\xA9", "\xE2\x80\x94", "\xE4\xB8\xAD", "\xC2\xA0"};
  std::string s;
  for (std::size_t i = 0; i < len; ++i) s += pieces[rng() % pieces.size()];
  return s;
}

corpus::Document words_doc(std::size_t n_words, const std::string& id = "d") {
  std::string text;
  for (std::size_t i = 0; i < n_words; ++i) {
    if (i) text += ' ';
    text += "w" + std::to_string(i);
  }
  return {id, text};
}

}  // namespace

TEST(Tokenize, SimpleOffsets) {
  auto toks = tokenize("a b");
  ASSERT_EQ(toks.size(), 2u);
  EXPECT_EQ(toks[0], (Token{"a", 0, 1}));
  EXPECT_EQ(toks[1], (Token{"b", 2, 3}));
}

TEST(Tokenize, PunctuationSplits) {
  EXPECT_EQ(surfaces(tokenize("don't stop.")), (std::vector<std::string>{"don", "'", "t", "stop", "."}));
}

TEST(Tokenize, EmptyText) { EXPECT_TRUE(tokenize("").empty()); }

TEST(Tokenize, LosslessOnRandomText) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 300; ++i) {
    auto text = random_text(rng, rng() % 60);
    auto toks = tokenize(text);
    EXPECT_EQ(reconstruct(text, toks), text);
    for (std::size_t j = 0; j < toks.size(); ++j) {
      EXPECT_LT(toks[j].char_start, toks[j].char_end);
      if (j > 0) {
        EXPECT_LE(toks[j - 1].char_end, toks[j].char_start);
      }
      EXPECT_EQ(utf8::substr(text, toks[j].char_start, toks[j].char_end), toks[j].surface);
    }
  }
}

TEST(InsertionPoints, RoundHundreds) {
  auto plan = insertion_points(1000, 100);
  // Oracle: direct evaluation of (i-1)(l_d-l_p)/9 for i = 1..10.
  ASSERT_EQ(plan.points.size(), 10u);
  for (std::size_t i = 1; i <= 10; ++i) {
    double direct = static_cast<double>(i - 1) * (1000.0 - 100.0) / 9.0;
    EXPECT_EQ(static_cast<double>(plan.points[i - 1]), direct);
  }
}

TEST(InsertionPoints, TightBoundary) {
  auto plan = insertion_points(10, 9);
  EXPECT_EQ(plan.points.front(), 0u);
  EXPECT_EQ(plan.points.back(), 1u);
  EXPECT_TRUE(std::is_sorted(plan.points.begin(), plan.points.end()));
}

TEST(InsertionPoints, RejectsPassageNotShorter) {
  EXPECT_THROW(insertion_points(10, 10), ValidationError);
  EXPECT_THROW(insertion_points(10, 0), ValidationError);
}

TEST(InsertionPoints, SpacingPropertyOnRandomPairs) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 2000; ++trial) {
    std::size_t l_d = 2 + rng() % 20000;
    std::size_t l_p = 1 + rng() % (l_d - 1);
    auto plan = insertion_points(l_d, l_p);
    EXPECT_EQ(plan.points.front(), 0u);
    EXPECT_EQ(plan.points.back() - plan.points.front(), l_d - l_p);
    double ideal = static_cast<double>(l_d - l_p) / 9.0;
    for (std::size_t i = 0; i + 1 < plan.points.size(); ++i) {
      EXPECT_LE(plan.points[i], plan.points[i + 1]);
      double diff = static_cast<double>(plan.points[i + 1] - plan.points[i]);
      EXPECT_LE(std::abs(diff - ideal), 1.0);
    }
  }
}

TEST(InsertionPoints, HalvesRoundDown) {
  // 4 points over span 3: exact values 0, 1, 2, 3; over span 1 with 3 points: 0, 0.5 -> 0, 1.
  EXPECT_EQ(insertion_points(2, 1, 3).points, (std::vector<std::size_t>{0, 0, 1}));
}

TEST(Relocate, MoveToFront) {
  corpus::Document doc("d", "AAABBBCCC");
  corpus::PassageAlignment a{"q", "d", 3, 6};
  auto v = relocate_passage(doc, a, 0);
  EXPECT_EQ(v.text, "BBBAAACCC");
  EXPECT_EQ(v.passage_start, 0u);
}

TEST(Relocate, IdentityAtOriginalStart) {
  corpus::Document doc("d", "AAABBBCCC");
  corpus::PassageAlignment a{"q", "d", 3, 6};
  EXPECT_EQ(relocate_passage(doc, a, 3).text, doc.text);

  corpus::Document words("w", "one two three four five");
  corpus::PassageAlignment b{"q", "w", 8, 18};  // "three four"
  EXPECT_EQ(relocate_passage(words, b, 8).text, words.text);
}

TEST(Relocate, KeepsWordsIntact) {
  corpus::Document doc("d", "one two three four five six");
  corpus::PassageAlignment a{"q", "d", 8, 13};  // "three"
  auto front = relocate_passage(doc, a, 0);
  EXPECT_EQ(front.text, "three one two four five six");
  auto back = relocate_passage(doc, a, doc.char_len - 5);
  EXPECT_EQ(back.text, "one two four five six three");
  EXPECT_EQ(utf8::substr(back.text, back.passage_start, back.passage_start + 5), "three");
}

TEST(Relocate, OutOfRangeTarget) {
  corpus::Document doc("d", "AAABBBCCC");
  corpus::PassageAlignment a{"q", "d", 3, 6};
  EXPECT_THROW(relocate_passage(doc, a, 7), ValidationError);
  corpus::PassageAlignment bad{"q", "d", 6, 12};
  EXPECT_THROW(relocate_passage(doc, bad, 0), ValidationError);
}

TEST(Relocate, ConservesCharactersAndPassage) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 300; ++trial) {
    auto doc = words_doc(5 + rng() % 60);
    auto toks = tokenize(doc.text);
    std::size_t first = rng() % toks.size();
    std::size_t last = first + rng() % std::min<std::size_t>(5, toks.size() - first);
    corpus::PassageAlignment a{"q", doc.id, toks[first].char_start, toks[last].char_end};
    if (a.length() >= doc.char_len) continue;
    auto passage = utf8::substr(doc.text, a.char_start, a.char_end);
    std::size_t target = rng() % (doc.char_len - a.length() + 1);
    auto v = relocate_passage(doc, a, target);
    auto in = utf8::decode(doc.text), out = utf8::decode(v.text);
    EXPECT_EQ(out.size(), in.size());
    std::sort(in.begin(), in.end());
    std::sort(out.begin(), out.end());
    EXPECT_EQ(in, out);
    EXPECT_EQ(utf8::substr(v.text, v.passage_start, v.passage_start + a.length()), passage);
    // Word-separated text: relocation never fuses tokens.
    auto before = surfaces(tokenize(doc.text)), after = surfaces(tokenize(v.text));
    std::sort(before.begin(), before.end());
    std::sort(after.begin(), after.end());
    EXPECT_EQ(before, after);
    // Relocating back to the original start restores the document.
    corpus::PassageAlignment moved{"q", doc.id, v.passage_start, v.passage_start + a.length()};
    corpus::Document rewritten(doc.id, v.text);
    EXPECT_EQ(relocate_passage(rewritten, moved, a.char_start).text, doc.text);
  }
}

TEST(Relocate, SnapsToNearestBoundaryTowardSmaller) {
  corpus::Document doc("d", "aa bb cc dd");
  corpus::PassageAlignment a{"q", "d", 9, 11};  // "dd", carried with its leading space
  // Admissible passage starts: 0, 3, 6, 9.
  EXPECT_EQ(relocate_passage(doc, a, 0).text, "dd aa bb cc");
  EXPECT_EQ(relocate_passage(doc, a, 4).text, "aa dd bb cc");
  EXPECT_EQ(relocate_passage(doc, a, 5).text, "aa bb dd cc");
  EXPECT_EQ(relocate_passage(doc, a, 9).text, doc.text);
  // 1.5 away from both 0 and 3 is impossible with integers; 1 is nearest 0, 2 nearest 3.
  EXPECT_EQ(relocate_passage(doc, a, 1).passage_start, 0u);
  EXPECT_EQ(relocate_passage(doc, a, 2).passage_start, 3u);

  corpus::Document even("e", "ab cd ef gh");
  corpus::PassageAlignment b{"q", "e", 0, 2};  // "ab", carried with its trailing space
  // Starts 0, 3, 6, 9; target 9 reaches the very end.
  EXPECT_EQ(relocate_passage(even, b, 9).text, "cd ef gh ab");
}

TEST(Segments, EvenSplit) {
  auto doc = words_doc(100);
  auto toks = tokenize(doc.text);
  auto segs = segment_uniform(doc, toks);
  ASSERT_EQ(segs.size(), 10u);
  EXPECT_EQ(segs[0].text, "w0 w1 w2 w3 w4 w5 w6 w7 w8 w9");
  EXPECT_EQ(segs[0].position_index, 1u);
  EXPECT_EQ(segs[9].position_index, 10u);
}

TEST(Segments, RemainderFrontLoaded) {
  auto b = segment_bounds(103, 10);
  std::vector<std::size_t> sizes;
  for (auto [s, e] : b) sizes.push_back(e - s);
  EXPECT_EQ(sizes, (std::vector<std::size_t>{11, 11, 11, 10, 10, 10, 10, 10, 10, 10}));
}

TEST(Segments, PartitionProperty) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    std::size_t k = 1 + rng() % 12;
    std::size_t n = k + rng() % 300;
    auto b = segment_bounds(n, k);
    ASSERT_EQ(b.size(), k);
    EXPECT_EQ(b.front().first, 0u);
    EXPECT_EQ(b.back().second, n);
    for (std::size_t i = 0; i + 1 < k; ++i) EXPECT_EQ(b[i].second, b[i + 1].first);
    auto [mn, mx] = std::minmax_element(b.begin(), b.end(), [](auto x, auto y) {
      return x.second - x.first < y.second - y.first;
    });
    EXPECT_LE((mx->second - mx->first) - (mn->second - mn->first), 1u);
  }
  auto doc = words_doc(57);
  auto toks = tokenize(doc.text);
  std::vector<std::string> joined;
  for (const auto& seg : segment_uniform(doc, toks)) {
    for (auto& s : surfaces(tokenize(seg.text))) joined.push_back(s);
  }
  EXPECT_EQ(joined, surfaces(toks));
}

TEST(Segments, TooFewTokens) {
  auto doc = words_doc(9);
  auto toks = tokenize(doc.text);
  EXPECT_THROW(segment_uniform(doc, toks), ValidationError);
}

TEST(Windows, Arithmetic) {
  auto w = token_windows(2048, 256);
  ASSERT_EQ(w.size(), 8u);
  EXPECT_EQ(w.back(), (TokenWindow{1792, 2048}));
  EXPECT_EQ(token_windows(300, 256), (std::vector<TokenWindow>{{0, 256}, {256, 300}}));
  EXPECT_EQ(token_windows(100, 256), (std::vector<TokenWindow>{{0, 100}}));
  EXPECT_EQ(token_windows(5000, 256).size(), 8u);
  EXPECT_THROW(token_windows(10, 0), ValidationError);
}

TEST(CorruptSpans, OnlyPossibleSpan) {
  auto doc = words_doc(10);
  auto toks = tokenize(doc.text);
  auto inst = corrupt_spans(doc, toks, {0, 3}, 5, 3, 1);
  ASSERT_EQ(inst.size(), 5u);
  for (const auto& i : inst) {
    EXPECT_EQ(i.span_start, 0u);
    EXPECT_EQ(i.target_spans, (std::vector<std::string>{"w0 w1 w2"}));
    EXPECT_EQ(i.input_with_sentinels, "<extra_id_0> w3 w4 w5 w6 w7 w8 w9");
  }
}

TEST(CorruptSpans, WindowTooSmall) {
  auto doc = words_doc(10);
  auto toks = tokenize(doc.text);
  EXPECT_THROW(corrupt_spans(doc, toks, {0, 2}, 1, 3, 1), ValidationError);
}

TEST(CorruptSpans, StartsUniformChiSquare) {
  auto doc = words_doc(300);
  auto toks = tokenize(doc.text);
  auto inst = corrupt_spans(doc, toks, {0, 256}, 7000, 3, 42);
  std::vector<double> counts(254, 0.0);
  for (const auto& i : inst) {
    ASSERT_LE(i.span_start + 3, 256u);
    counts[i.span_start] += 1.0;
  }
  double expected = 7000.0 / 254.0, chi2 = 0.0;
  for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
  boost::math::chi_squared dist(253);
  double p = boost::math::cdf(boost::math::complement(dist, chi2));
  EXPECT_GT(p, 0.01) << "chi2=" << chi2;
}

TEST(CorruptSpans, DeterministicAndTargetsMatchText) {
  auto doc = words_doc(600);
  auto toks = tokenize(doc.text);
  auto a = corrupt_spans(doc, toks, {256, 512}, 50, 3, 9);
  auto b = corrupt_spans(doc, toks, {256, 512}, 50, 3, 9);
  EXPECT_EQ(a, b);
  for (const auto& i : a) {
    EXPECT_GE(i.span_start, 256u);
    EXPECT_LE(i.span_start + 3, 512u);
    // Filling the sentinel with the target restores the (truncated) document.
    auto restored = i.input_with_sentinels;
    restored.replace(restored.find(sentinel(0)), sentinel(0).size(), i.target_spans[0]);
    EXPECT_EQ(restored, doc.text);
    EXPECT_EQ(tokenize(i.target_spans[0]).size(), 3u);
  }
}

TEST(Serialization, ProbeJsonl) {
  ProbeVariant v{ProbeKind::segment, "d1", "text", 3, 0};
  EXPECT_EQ(to_json(v).dump(), R"({"doc_id":"d1","kind":"segment","position_index":3,"text":"text"})");
}
