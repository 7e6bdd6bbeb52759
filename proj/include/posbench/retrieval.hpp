#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "posbench/corpus.hpp"
#include "posbench/embed.hpp"
#include "posbench/error.hpp"

namespace posbench::retrieval {

// Exact cosine index over a fixed document set.
class VectorIndex {
 public:
  VectorIndex() = default;

  std::size_t size() const { return doc_ids_.size(); }
  std::size_t dim() const { return dim_; }
  const std::vector<std::string>& doc_ids() const { return doc_ids_; }
  std::span<const double> row(std::size_t i) const { return {matrix_.data() + i * dim_, dim_}; }
  double norm(std::size_t i) const { return norms_[i]; }

  friend VectorIndex build_index(std::vector<std::string> doc_ids, const std::vector<embed::EmbeddingVector>& vectors);

 private:
  std::vector<std::string> doc_ids_;
  std::vector<double> matrix_;
  std::vector<double> norms_;
  std::size_t dim_ = 0;
};

inline VectorIndex build_index(std::vector<std::string> doc_ids, const std::vector<embed::EmbeddingVector>& vectors) {
  if (doc_ids.size() != vectors.size()) {
    throw ValidationError("build_index: " + std::to_string(doc_ids.size()) + " ids for " +
                          std::to_string(vectors.size()) + " vectors");
  }
  VectorIndex idx;
  if (doc_ids.empty()) return idx;
  idx.dim_ = vectors.front().dim();
  std::unordered_set<std::string> seen;
  idx.matrix_.reserve(idx.dim_ * vectors.size());
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    if (!seen.insert(doc_ids[i]).second) throw ValidationError("build_index: duplicate doc_id '" + doc_ids[i] + "'");
    if (vectors[i].dim() != idx.dim_) throw ValidationError("build_index: dimension mismatch at '" + doc_ids[i] + "'");
    double n = vectors[i].norm();
    if (!(n > 0.0) || !std::isfinite(n)) throw ValidationError("build_index: zero vector for doc '" + doc_ids[i] + "'");
    idx.norms_.push_back(n);
    idx.matrix_.insert(idx.matrix_.end(), vectors[i].values.begin(), vectors[i].values.end());
  }
  idx.doc_ids_ = std::move(doc_ids);
  return idx;
}

struct Hit {
  std::string doc_id;
  double score = 0.0;
  friend bool operator==(const Hit&, const Hit&) = default;
};

using RankedList = std::vector<Hit>;
using RunResult = std::map<std::string, RankedList>;  // query_id -> ranking

// Exact top-k by cosine; equal scores ordered by ascending doc_id.
inline RankedList search(const VectorIndex& index, const embed::EmbeddingVector& q, std::size_t k) {
  if (index.size() == 0 || k == 0) return {};
  if (q.dim() != index.dim()) throw ValidationError("search: query dimension mismatch");
  double qn = q.norm();
  if (!(qn > 0.0)) throw ValidationError("search: zero query vector");
  std::vector<double> scores(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) scores[i] = embed::dot(q.values, index.row(i)) / (qn * index.norm(i));
  std::vector<std::size_t> order(index.size());
  std::iota(order.begin(), order.end(), 0);
  const auto& ids = index.doc_ids();
  auto before = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids[a] < ids[b];
  };
  std::size_t depth = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(depth), order.end(), before);
  RankedList out;
  out.reserve(depth);
  for (std::size_t r = 0; r < depth; ++r) out.push_back({ids[order[r]], scores[order[r]]});
  return out;
}

inline RunResult search_all(const VectorIndex& index, const std::vector<std::string>& query_ids,
                            const std::vector<embed::EmbeddingVector>& query_vecs, std::size_t k) {
  if (query_ids.size() != query_vecs.size()) throw ValidationError("search_all: ids/vectors size mismatch");
  RunResult run;
  for (std::size_t i = 0; i < query_ids.size(); ++i) run[query_ids[i]] = search(index, query_vecs[i], k);
  return run;
}

// ---------------------------------------------------------------------------
// Metrics

struct Metrics {
  double mrr_at_k = 0.0;
  double recall_at_k = 0.0;
  std::size_t k = 100;
  friend bool operator==(const Metrics&, const Metrics&) = default;
};

namespace detail {
inline const std::vector<std::string>& relevant_for(const corpus::Qrels& qrels, const std::string& qid) {
  auto it = qrels.find(qid);
  if (it == qrels.end() || it->second.empty()) {
    throw ValidationError("query '" + qid + "' has no judged-relevant documents in qrels");
  }
  return it->second;
}
}  // namespace detail

// 1/rank of the first relevant document within the top k, 0 if none.
inline double reciprocal_rank(const RankedList& ranking, const std::vector<std::string>& relevant, std::size_t k) {
  std::size_t depth = std::min(k, ranking.size());
  for (std::size_t r = 0; r < depth; ++r) {
    if (std::find(relevant.begin(), relevant.end(), ranking[r].doc_id) != relevant.end()) {
      return 1.0 / static_cast<double>(r + 1);
    }
  }
  return 0.0;
}

inline double recall(const RankedList& ranking, const std::vector<std::string>& relevant, std::size_t k) {
  std::set<std::string> rel(relevant.begin(), relevant.end());
  std::size_t depth = std::min(k, ranking.size()), hits = 0;
  for (std::size_t r = 0; r < depth; ++r) hits += rel.count(ranking[r].doc_id);
  return static_cast<double>(hits) / static_cast<double>(rel.size());
}

inline double mrr_at_k(const RunResult& run, const corpus::Qrels& qrels, std::size_t k = 100) {
  if (run.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& [qid, ranking] : run) acc += reciprocal_rank(ranking, detail::relevant_for(qrels, qid), k);
  return acc / static_cast<double>(run.size());
}

inline double recall_at_k(const RunResult& run, const corpus::Qrels& qrels, std::size_t k = 100) {
  if (run.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& [qid, ranking] : run) acc += recall(ranking, detail::relevant_for(qrels, qid), k);
  return acc / static_cast<double>(run.size());
}

inline Metrics evaluate(const RunResult& run, const corpus::Qrels& qrels, std::size_t k = 100) {
  return {mrr_at_k(run, qrels, k), recall_at_k(run, qrels, k), k};
}

// ---------------------------------------------------------------------------
// TREC run files: `query_id Q0 doc_id rank score run_tag`

inline std::string format_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

inline void write_trec_run(std::ostream& out, const RunResult& run, const std::string& tag) {
  for (const auto& [qid, ranking] : run) {
    for (std::size_t r = 0; r < ranking.size(); ++r) {
      out << qid << " Q0 " << ranking[r].doc_id << ' ' << (r + 1) << ' ' << format_double(ranking[r].score) << ' '
          << tag << '\n';
    }
  }
}

inline void write_trec_run(const std::string& path, const RunResult& run, const std::string& tag) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write '" + path + "'");
  write_trec_run(out, run, tag);
}

inline RunResult read_trec_run(std::istream& in, const std::string& name = "<run>") {
  std::map<std::string, std::vector<std::pair<std::size_t, Hit>>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    std::string qid, q0, doc, score_s, tag;
    std::size_t rank = 0;
    if (!(ls >> qid >> q0 >> doc >> rank >> score_s >> tag)) {
      throw ValidationError(name + ":" + std::to_string(lineno) + ": expected `query_id Q0 doc_id rank score tag`");
    }
    double score = 0.0;
    auto [p, ec] = std::from_chars(score_s.data(), score_s.data() + score_s.size(), score);
    if (ec != std::errc() || p != score_s.data() + score_s.size()) {
      throw ValidationError(name + ":" + std::to_string(lineno) + ": bad score '" + score_s + "'");
    }
    rows[qid].push_back({rank, {doc, score}});
  }
  RunResult run;
  for (auto& [qid, hits] : rows) {
    std::stable_sort(hits.begin(), hits.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::set<std::string> seen;
    auto& ranking = run[qid];
    for (auto& [rank, hit] : hits) {
      if (!seen.insert(hit.doc_id).second) {
        throw ValidationError(name + ": duplicate doc '" + hit.doc_id + "' for query '" + qid + "'");
      }
      ranking.push_back(std::move(hit));
    }
  }
  return run;
}

inline RunResult read_trec_run(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open run file '" + path + "'");
  return read_trec_run(in, path);
}

}  // namespace posbench::retrieval
