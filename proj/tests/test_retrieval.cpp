#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "oracles.hpp"
#include "posbench/retrieval.hpp"
#include "test_util.hpp"

using namespace posbench;
using namespace posbench::retrieval;
using embed::EmbeddingVector;

namespace {

std::vector<EmbeddingVector> random_vectors(std::mt19937_64& rng, std::size_t n, std::size_t dim) {
  std::normal_distribution<double> g;
  std::vector<EmbeddingVector> out(n);
  for (auto& v : out) {
    v.values.resize(dim);
    for (auto& x : v.values) x = g(rng);
  }
  return out;
}

std::vector<std::string> ids(std::size_t n, const std::string& prefix = "d") {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(prefix + (i < 10 ? "0" : "") + std::to_string(i));
  return out;
}

RankedList ranked(std::initializer_list<const char*> docs) {
  RankedList out;
  double s = 1.0;
  for (auto* d : docs) out.push_back({d, s -= 0.01});
  return out;
}

}  // namespace

TEST(Index, BuildsAndRejects) {
  std::mt19937_64 rng(1);
  auto vecs = random_vectors(rng, 3, 4);
  EXPECT_EQ(build_index(ids(3), vecs).size(), 3u);
  EXPECT_THROW(build_index({"a", "a", "b"}, vecs), ValidationError);
  vecs[1].values.assign(4, 0.0);
  try {
    build_index({"a", "zero", "c"}, vecs);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("zero"), std::string::npos);
  }
}

TEST(Index, EmptyIndexSearchesEmpty) {
  auto idx = build_index({}, {});
  EXPECT_EQ(idx.size(), 0u);
  EXPECT_TRUE(search(idx, EmbeddingVector{{1.0, 2.0}}, 10).empty());
}

TEST(Search, SelfIsRankOne) {
  std::mt19937_64 rng(2);
  auto vecs = random_vectors(rng, 20, 8);
  auto idx = build_index(ids(20), vecs);
  auto hits = search(idx, vecs[7], 5);
  EXPECT_EQ(hits.front().doc_id, "d07");
  EXPECT_NEAR(hits.front().score, 1.0, 1e-12);
}

TEST(Search, IdenticalVectorsOrderedById) {
  EmbeddingVector v{{1.0, 2.0, 3.0}};
  auto idx = build_index({"zeta", "alpha", "mid"}, {v, v, v});
  auto hits = search(idx, v, 3);
  EXPECT_EQ(hits[0].doc_id, "alpha");
  EXPECT_EQ(hits[1].doc_id, "mid");
  EXPECT_EQ(hits[2].doc_id, "zeta");
}

TEST(Search, ZeroQueryIsError) {
  auto idx = build_index({"a"}, {EmbeddingVector{{1.0}}});
  EXPECT_THROW(search(idx, EmbeddingVector{{0.0}}, 1), ValidationError);
}

TEST(Search, MatchesFullSortOracle) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 20; ++t) {
    auto vecs = random_vectors(rng, 50, 6);
    auto q = random_vectors(rng, 1, 6)[0];
    std::vector<std::vector<double>> raw;
    for (const auto& v : vecs) raw.push_back(v.values);
    auto got = search(build_index(ids(50), vecs), q, 50);
    auto want = oracle::full_sort(ids(50), raw, q.values, 50);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_EQ(got[i].doc_id, want[i].doc_id);
      EXPECT_NEAR(got[i].score, want[i].score, 1e-12);
    }
  }
}

TEST(Search, SubsetIndexMatchesFilteredSearch) {
  std::mt19937_64 rng(4);
  auto vecs = random_vectors(rng, 40, 5);
  auto all_ids = ids(40);
  auto q = random_vectors(rng, 1, 5)[0];
  auto full = search(build_index(all_ids, vecs), q, 40);
  std::vector<std::string> sub_ids;
  std::vector<EmbeddingVector> sub_vecs;
  for (std::size_t i = 0; i < 40; i += 3) {
    sub_ids.push_back(all_ids[i]);
    sub_vecs.push_back(vecs[i]);
  }
  auto sub = search(build_index(sub_ids, sub_vecs), q, 40);
  RankedList filtered;
  for (const auto& h : full) {
    if (std::find(sub_ids.begin(), sub_ids.end(), h.doc_id) != sub_ids.end()) filtered.push_back(h);
  }
  EXPECT_EQ(sub, filtered);
}

TEST(Search, ScalingDocumentsKeepsRanking) {
  std::mt19937_64 rng(5);
  auto vecs = random_vectors(rng, 30, 4);
  auto q = random_vectors(rng, 1, 4)[0];
  auto before = search(build_index(ids(30), vecs), q, 30);
  for (double c : {0.5, 3.0, 1e3}) {
    auto scaled = vecs;
    for (auto& v : scaled) {
      for (auto& x : v.values) x *= c;
    }
    auto after = search(build_index(ids(30), scaled), q, 30);
    ASSERT_EQ(after.size(), before.size());
    for (std::size_t i = 0; i < after.size(); ++i) EXPECT_EQ(after[i].doc_id, before[i].doc_id);
  }
}

TEST(Metrics, Examples) {
  corpus::Qrels qrels{{"q1", {"a"}}, {"q2", {"b"}}};
  RunResult top{{"q1", ranked({"a", "x"})}, {"q2", ranked({"b", "y"})}};
  EXPECT_EQ(mrr_at_k(top, qrels), 1.0);
  EXPECT_EQ(recall_at_k(top, qrels), 1.0);

  RunResult fourth{{"q1", ranked({"x", "y", "z", "a"})}};
  EXPECT_EQ(mrr_at_k(fourth, qrels), 0.25);

  RankedList deep;
  for (int i = 0; i < 100; ++i) deep.push_back({"n" + std::to_string(i), 1.0 - i * 1e-3});
  deep.push_back({"a", 0.0});
  RunResult cut{{"q1", deep}};
  EXPECT_EQ(mrr_at_k(cut, qrels, 100), 0.0);
  EXPECT_EQ(mrr_at_k(cut, qrels, 101), 1.0 / 101);

  corpus::Qrels two{{"q1", {"a", "b"}}};
  EXPECT_EQ(recall_at_k(RunResult{{"q1", ranked({"a", "x"})}}, two), 0.5);
}

TEST(Metrics, Errors) {
  corpus::Qrels qrels{{"q1", {"a"}}, {"empty", {}}};
  EXPECT_THROW(mrr_at_k(RunResult{{"missing", ranked({"a"})}}, qrels), ValidationError);
  EXPECT_THROW(recall_at_k(RunResult{{"empty", ranked({"a"})}}, qrels), ValidationError);
}

TEST(Metrics, RecallNonDecreasingInK) {
  std::mt19937_64 rng(6);
  auto vecs = random_vectors(rng, 30, 4);
  auto idx = build_index(ids(30), vecs);
  auto qs = random_vectors(rng, 10, 4);
  corpus::Qrels qrels;
  std::vector<std::string> qids = ids(10, "q");
  for (const auto& q : qids) qrels[q] = {ids(30)[rng() % 30], ids(30)[rng() % 30], ids(30)[rng() % 30]};
  auto run = search_all(idx, qids, qs, 30);
  double prev = 0.0;
  for (std::size_t k = 1; k <= 30; ++k) {
    double r = recall_at_k(run, qrels, k);
    EXPECT_GE(r, prev);
    prev = r;
  }
  EXPECT_EQ(prev, 1.0);
}

TEST(Metrics, MatchNaiveOracleExactly) {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 50; ++t) {
    auto vecs = random_vectors(rng, 30, 5);
    auto idx = build_index(ids(30), vecs);
    auto qids = ids(10, "q");
    auto qs = random_vectors(rng, 10, 5);
    corpus::Qrels qrels;
    for (const auto& q : qids) {
      std::size_t n_rel = 1 + rng() % 3;
      for (std::size_t r = 0; r < n_rel; ++r) qrels[q].push_back(ids(30)[rng() % 30]);
    }
    for (std::size_t k : {1, 5, 10, 30, 100}) {
      auto run = search_all(idx, qids, qs, 30);
      EXPECT_EQ(mrr_at_k(run, qrels, k), oracle::naive_mrr(run, qrels, k));
      EXPECT_EQ(recall_at_k(run, qrels, k), oracle::naive_recall(run, qrels, k));
    }
  }
}

TEST(TrecRun, RoundTripPreservesRunAndMetrics) {
  std::mt19937_64 rng(8);
  auto vecs = random_vectors(rng, 30, 5);
  auto qids = ids(10, "q");
  auto run = search_all(build_index(ids(30), vecs), qids, random_vectors(rng, 10, 5), 30);
  corpus::Qrels qrels;
  for (const auto& q : qids) qrels[q] = {ids(30)[rng() % 30]};
  std::stringstream ss;
  write_trec_run(ss, run, "tag");
  auto back = read_trec_run(ss);
  EXPECT_EQ(back, run);
  EXPECT_EQ(evaluate(back, qrels), evaluate(run, qrels));
}

TEST(TrecRun, LineFormat) {
  std::stringstream ss;
  write_trec_run(ss, RunResult{{"q1", {{"d2", 0.5}, {"d1", 0.25}}}}, "sys");
  EXPECT_EQ(ss.str(), "q1 Q0 d2 1 0.5 sys\nq1 Q0 d1 2 0.25 sys\n");
}

TEST(TrecRun, MalformedLinesRejected) {
  std::stringstream bad("q1 Q0 d1 1\n");
  EXPECT_THROW(read_trec_run(bad), ValidationError);
  std::stringstream dup("q1 Q0 d1 1 0.5 t\nq1 Q0 d1 2 0.4 t\n");
  EXPECT_THROW(read_trec_run(dup), ValidationError);
  std::stringstream score("q1 Q0 d1 1 high t\n");
  EXPECT_THROW(read_trec_run(score), ValidationError);
}

TEST(TrecRun, OrdersByRankField) {
  std::stringstream ss("q1 Q0 b 2 0.4 t\nq1 Q0 a 1 0.9 t\n");
  auto run = read_trec_run(ss);
  EXPECT_EQ(run.at("q1")[0].doc_id, "a");
}
