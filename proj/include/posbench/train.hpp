#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "posbench/corpus.hpp"
#include "posbench/embed.hpp"
#include "posbench/error.hpp"
#include "posbench/probes.hpp"
#include "posbench/retrieval.hpp"

namespace posbench::train {

using TokenIds = std::vector<std::uint32_t>;

// ---------------------------------------------------------------------------
// Crop pairs: two independent random spans, each 10%..50% of the document.

struct TokenSpan {
  std::size_t start = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - start; }
  friend bool operator==(const TokenSpan&, const TokenSpan&) = default;
};

struct CropPair {
  std::string doc_id;
  TokenSpan query_span;
  TokenSpan doc_span;
  friend bool operator==(const CropPair&, const CropPair&) = default;
};

inline std::size_t min_crop_len(std::size_t n) { return (n + 9) / 10; }
inline std::size_t max_crop_len(std::size_t n) { return n / 2; }

inline TokenSpan sample_span(std::size_t n, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> len_dist(min_crop_len(n), max_crop_len(n));
  std::size_t len = len_dist(rng);
  std::uniform_int_distribution<std::size_t> start_dist(0, n - len);
  std::size_t start = start_dist(rng);
  return {start, start + len};
}

// The query and document spans come from two engines seeded off `rng`.
inline CropPair sample_crop_pair(std::string doc_id, std::size_t n_tokens, std::mt19937_64& rng) {
  if (n_tokens < 10) {
    throw ValidationError("sample_crop_pair: document '" + doc_id + "' has " + std::to_string(n_tokens) +
                          " tokens, need at least 10");
  }
  std::mt19937_64 query_rng(rng());
  std::mt19937_64 doc_rng(rng());
  CropPair p;
  p.doc_id = std::move(doc_id);
  p.query_span = sample_span(n_tokens, query_rng);
  p.doc_span = sample_span(n_tokens, doc_rng);
  return p;
}

// ---------------------------------------------------------------------------
// Batches

struct TrainBatch {
  std::vector<std::string> queries;
  std::vector<std::string> positives;
  std::vector<std::vector<std::string>> hard_negatives;  // per query; empty or k each
};

struct EncodedBatch {
  std::vector<TokenIds> queries;
  std::vector<TokenIds> positives;
  std::vector<std::vector<TokenIds>> hard_negatives;

  std::size_t size() const { return queries.size(); }
  std::size_t negatives_per_query() const { return hard_negatives.empty() ? 0 : hard_negatives.front().size(); }
};

template <typename Batch>
void validate_batch(const Batch& b) {
  if (b.queries.empty()) throw ValidationError("empty batch");
  if (b.queries.size() != b.positives.size()) throw ValidationError("batch: queries and positives differ in size");
  if (!b.hard_negatives.empty()) {
    if (b.hard_negatives.size() != b.queries.size()) throw ValidationError("batch: hard negatives not per query");
    for (const auto& h : b.hard_negatives) {
      if (h.size() != b.hard_negatives.front().size()) throw ValidationError("batch: k differs across queries");
    }
  }
}

inline EncodedBatch encode(const TrainBatch& batch, const embed::NativeBackend& backend) {
  validate_batch(batch);
  EncodedBatch out;
  for (const auto& q : batch.queries) out.queries.push_back(backend.encode(q));
  for (const auto& d : batch.positives) out.positives.push_back(backend.encode(d));
  for (const auto& negs : batch.hard_negatives) {
    auto& enc = out.hard_negatives.emplace_back();
    for (const auto& d : negs) enc.push_back(backend.encode(d));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Contrastive loss over cosine similarities (log-sum-exp stabilized):
//   L = -1/n sum_i log( e^{s(q_i,d_i)/tau} / sum_{c in C_i} e^{s(q_i,c)/tau} )
// C_i = {d_i} + hard negatives of i; with in-batch negatives C_i additionally
// holds every other positive and every other query's hard negatives.

struct LossOptions {
  bool in_batch = true;
  double temperature = 1.0;
};

// Size of each query's softmax denominator, positive included.
inline std::size_t candidates_per_query(std::size_t n, std::size_t k, bool in_batch) {
  return in_batch ? n + n * k : 1 + k;
}

struct VectorLoss {
  double loss = 0.0;
  std::size_t candidates_per_query = 0;
  std::vector<std::vector<double>> grad_queries;
  std::vector<std::vector<double>> grad_positives;
  std::vector<std::vector<std::vector<double>>> grad_negatives;
};

namespace detail {

struct CosineTerms {
  double s, na, nb;
};

inline CosineTerms cosine_terms(std::span<const double> a, std::span<const double> b) {
  double na = std::sqrt(embed::dot(a, a));
  double nb = std::sqrt(embed::dot(b, b));
  if (na == 0.0 || nb == 0.0) throw ValidationError("contrastive loss: zero vector");
  return {embed::dot(a, b) / (na * nb), na, nb};
}

// out += c * d cos(a,b) / da
inline void add_cosine_grad(std::span<double> out, double c, std::span<const double> a, std::span<const double> b,
                            const CosineTerms& t) {
  double inv = 1.0 / (t.na * t.nb);
  double self = t.s / (t.na * t.na);
  for (std::size_t k = 0; k < out.size(); ++k) out[k] += c * (b[k] * inv - a[k] * self);
}

}  // namespace detail

inline VectorLoss contrastive_loss_and_grad(const std::vector<embed::EmbeddingVector>& queries,
                                            const std::vector<embed::EmbeddingVector>& positives,
                                            const std::vector<std::vector<embed::EmbeddingVector>>& negatives,
                                            const LossOptions& opt) {
  if (!(opt.temperature > 0.0)) throw ValidationError("temperature must be positive");
  if (queries.empty() || queries.size() != positives.size()) {
    throw ValidationError("contrastive loss: need equally many (>0) queries and positives");
  }
  const std::size_t n = queries.size();
  if (!negatives.empty() && negatives.size() != n) throw ValidationError("contrastive loss: negatives not per query");
  const std::size_t k = negatives.empty() ? 0 : negatives.front().size();
  const std::size_t dim = queries.front().dim();

  // Flat document list: positives, then negatives of query 0, 1, ...
  std::vector<const embed::EmbeddingVector*> docs;
  docs.reserve(n + n * k);
  for (const auto& p : positives) docs.push_back(&p);
  for (const auto& negs : negatives) {
    if (negs.size() != k) throw ValidationError("contrastive loss: k differs across queries");
    for (const auto& d : negs) docs.push_back(&d);
  }
  for (const auto& q : queries) {
    if (q.dim() != dim) throw ValidationError("contrastive loss: dimension mismatch");
  }
  for (const auto* d : docs) {
    if (d->dim() != dim) throw ValidationError("contrastive loss: dimension mismatch");
  }

  VectorLoss out;
  out.candidates_per_query = candidates_per_query(n, k, opt.in_batch);
  out.grad_queries.assign(n, std::vector<double>(dim, 0.0));
  std::vector<std::vector<double>> grad_docs(docs.size(), std::vector<double>(dim, 0.0));

  std::vector<std::size_t> cand;
  std::vector<double> logits;
  std::vector<detail::CosineTerms> terms;
  double total = 0.0;
  const double scale = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    cand.clear();
    if (opt.in_batch) {
      for (std::size_t j = 0; j < docs.size(); ++j) cand.push_back(j);
    } else {
      cand.push_back(i);
      for (std::size_t j = 0; j < k; ++j) cand.push_back(n + i * k + j);
    }
    logits.resize(cand.size());
    terms.resize(cand.size());
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cand.size(); ++c) {
      terms[c] = detail::cosine_terms(queries[i].values, docs[cand[c]]->values);
      logits[c] = terms[c].s / opt.temperature;
      m = std::max(m, logits[c]);
    }
    double z = 0.0;
    for (double l : logits) z += std::exp(l - m);
    double lse = m + std::log(z);
    const double pos_logit = logits[opt.in_batch ? i : 0];
    total += lse - pos_logit;

    for (std::size_t c = 0; c < cand.size(); ++c) {
      double p = std::exp(logits[c] - lse);
      bool is_pos = cand[c] == i;
      double coeff = (p - (is_pos ? 1.0 : 0.0)) * scale / opt.temperature;
      if (coeff == 0.0) continue;
      const auto& d = docs[cand[c]]->values;
      detail::add_cosine_grad(out.grad_queries[i], coeff, queries[i].values, d, terms[c]);
      auto flipped = terms[c];
      std::swap(flipped.na, flipped.nb);
      detail::add_cosine_grad(grad_docs[cand[c]], coeff, d, queries[i].values, flipped);
    }
  }
  out.loss = std::max(0.0, total * scale);
  if (!std::isfinite(out.loss)) throw NumericalError("contrastive loss is not finite");

  out.grad_positives.assign(grad_docs.begin(), grad_docs.begin() + static_cast<std::ptrdiff_t>(n));
  out.grad_negatives.resize(negatives.size());
  for (std::size_t i = 0; i < negatives.size(); ++i) {
    for (std::size_t j = 0; j < k; ++j) out.grad_negatives[i].push_back(std::move(grad_docs[n + i * k + j]));
  }
  return out;
}

inline double contrastive_loss(const std::vector<embed::EmbeddingVector>& queries,
                               const std::vector<embed::EmbeddingVector>& positives,
                               const std::vector<std::vector<embed::EmbeddingVector>>& negatives, bool in_batch,
                               double temperature) {
  return contrastive_loss_and_grad(queries, positives, negatives, {in_batch, temperature}).loss;
}

// ---------------------------------------------------------------------------
// Backward pass into the toy encoder's parameters.

struct ParamGradient {
  std::vector<double> table;                // dense, buckets x dim
  std::vector<std::uint32_t> touched_rows;  // ascending
  double decay = 0.0;
  double loss = 0.0;
  std::size_t candidates_per_query = 0;
};

namespace detail {

using RowAccumulator = std::map<std::uint32_t, std::vector<double>>;

// Accumulates d(output)/d(params)^T * upstream for one text.
inline void backprop_text(const embed::ToyEncoderParams& params, std::span<const std::uint32_t> ids,
                          std::span<const double> pooled, std::span<const double> upstream, RowAccumulator& rows,
                          double& decay_grad) {
  const std::size_t dim = params.dim;
  std::vector<double> g(upstream.begin(), upstream.end());
  if (params.normalize) {
    double nv = std::sqrt(embed::dot(pooled, pooled));
    double ug = embed::dot(pooled, g) / (nv * nv);
    for (std::size_t k = 0; k < dim; ++k) g[k] = (g[k] - pooled[k] * ug) / nv;
  }
  const std::size_t n = ids.size();
  double wsum = 0.0;
  for (std::size_t t = 0; t < n; ++t) wsum += params.pooling.weight(t, n);
  const bool weighted = params.pooling.kind == embed::Pooling::Kind::position_weighted;
  const double g_dot_v = weighted ? embed::dot(g, pooled) : 0.0;
  double dd = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    double w = params.pooling.weight(t, n);
    double a = w / wsum;
    auto& acc = rows[ids[t]];
    if (acc.empty()) acc.assign(dim, 0.0);
    for (std::size_t k = 0; k < dim; ++k) acc[k] += a * g[k];
    if (weighted) {
      // dv/d(decay) = sum_t -(t/n) w_t (e_t - v) / W
      double pos = static_cast<double>(t) / static_cast<double>(n);
      dd += -pos * a * (embed::dot(g, params.row(ids[t])) - g_dot_v);
    }
  }
  decay_grad += dd;
}

}  // namespace detail

// Gradient of the batch loss w.r.t. every table row the batch touches and the
// pooling decay. Texts are embedded once; their cached vector gradients are
// then pushed back in chunks of `chunk_size` texts (0 = one chunk), each chunk
// accumulated separately and summed in a fixed order.
inline ParamGradient loss_gradient(const EncodedBatch& batch, const embed::ToyEncoderParams& params,
                                   const LossOptions& opt, std::size_t chunk_size = 0) {
  validate_batch(batch);
  std::vector<std::span<const std::uint32_t>> texts;
  for (const auto& q : batch.queries) texts.emplace_back(q);
  for (const auto& d : batch.positives) texts.emplace_back(d);
  for (const auto& negs : batch.hard_negatives) {
    for (const auto& d : negs) texts.emplace_back(d);
  }
  std::vector<std::vector<double>> pooled;
  pooled.reserve(texts.size());
  for (auto ids : texts) pooled.push_back(embed::pool(params, ids));

  auto as_vec = [&](std::size_t i) {
    embed::EmbeddingVector v{pooled[i]};
    if (params.normalize) {
      double nv = v.norm();
      for (auto& x : v.values) x /= nv;
    }
    return v;
  };
  const std::size_t n = batch.size();
  const std::size_t k = batch.negatives_per_query();
  std::vector<embed::EmbeddingVector> qv, pv;
  std::vector<std::vector<embed::EmbeddingVector>> nv(batch.hard_negatives.size());
  for (std::size_t i = 0; i < n; ++i) qv.push_back(as_vec(i));
  for (std::size_t i = 0; i < n; ++i) pv.push_back(as_vec(n + i));
  for (std::size_t i = 0; i < nv.size(); ++i) {
    for (std::size_t j = 0; j < k; ++j) nv[i].push_back(as_vec(2 * n + i * k + j));
  }
  auto vl = contrastive_loss_and_grad(qv, pv, nv, opt);

  std::vector<const std::vector<double>*> upstream;
  for (const auto& g : vl.grad_queries) upstream.push_back(&g);
  for (const auto& g : vl.grad_positives) upstream.push_back(&g);
  for (const auto& negs : vl.grad_negatives) {
    for (const auto& g : negs) upstream.push_back(&g);
  }

  ParamGradient out;
  out.loss = vl.loss;
  out.candidates_per_query = vl.candidates_per_query;
  out.table.assign(params.table.size(), 0.0);
  std::vector<char> touched(params.buckets, 0);
  const std::size_t step = chunk_size == 0 ? texts.size() : chunk_size;
  for (std::size_t c0 = 0; c0 < texts.size(); c0 += step) {
    detail::RowAccumulator rows;
    double decay = 0.0;
    for (std::size_t i = c0; i < std::min(texts.size(), c0 + step); ++i) {
      detail::backprop_text(params, texts[i], pooled[i], *upstream[i], rows, decay);
    }
    for (const auto& [r, g] : rows) {
      touched[r] = 1;
      double* dst = out.table.data() + static_cast<std::size_t>(r) * params.dim;
      for (std::size_t d = 0; d < params.dim; ++d) dst[d] += g[d];
    }
    out.decay += decay;
  }
  for (std::uint32_t r = 0; r < params.buckets; ++r) {
    if (touched[r]) out.touched_rows.push_back(r);
  }
  for (double x : out.table) {
    if (!std::isfinite(x)) throw NumericalError("non-finite gradient");
  }
  if (!std::isfinite(out.decay)) throw NumericalError("non-finite decay gradient");
  return out;
}

// Loss only, through the same encoder path (used by finite-difference checks).
inline double batch_loss(const EncodedBatch& batch, const embed::ToyEncoderParams& params, const LossOptions& opt) {
  validate_batch(batch);
  auto emb = [&](const TokenIds& ids) { return embed::toy_forward(params, std::span<const std::uint32_t>(ids)); };
  std::vector<embed::EmbeddingVector> qv, pv;
  std::vector<std::vector<embed::EmbeddingVector>> nv;
  for (const auto& q : batch.queries) qv.push_back(emb(q));
  for (const auto& d : batch.positives) pv.push_back(emb(d));
  for (const auto& negs : batch.hard_negatives) {
    auto& row = nv.emplace_back();
    for (const auto& d : negs) row.push_back(emb(d));
  }
  return contrastive_loss(qv, pv, nv, opt.in_batch, opt.temperature);
}

// ---------------------------------------------------------------------------
// Configuration

enum class Mode { crop_pretrain, supervised_finetune };

inline Mode parse_mode(std::string_view s) {
  if (s == "crop_pretrain") return Mode::crop_pretrain;
  if (s == "supervised_finetune") return Mode::supervised_finetune;
  throw ValidationError("unknown training mode '" + std::string(s) + "'");
}

inline const char* to_string(Mode m) { return m == Mode::crop_pretrain ? "crop_pretrain" : "supervised_finetune"; }

struct TrainConfig {
  std::size_t batch_size = 128;
  std::size_t hard_negatives_per_query = 9;
  std::size_t epochs = 1;
  double learning_rate = 5e-6;  // linear decay to zero over all steps
  std::size_t chunk_size = 24;
  std::size_t refresh_every_epochs = 2;
  bool in_batch_negatives = true;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  // Retrieval depth for hard-negative mining.
  std::size_t mining_depth = 100;
  // Train the pooling decay alongside the table (position-weighted pooling only).
  bool learn_decay = true;
  double decay_learning_rate_scale = 1.0;
  std::size_t max_input_tokens = 2048;
};

inline void validate(const TrainConfig& c) {
  if (c.epochs == 0) throw ValidationError("train: epochs must be positive");
  if (c.batch_size == 0) throw ValidationError("train: batch_size must be positive");
  if (c.chunk_size == 0 || c.chunk_size > c.batch_size) throw ValidationError("train: need 0 < chunk_size <= batch_size");
  if (!(c.temperature > 0.0)) throw ValidationError("train: temperature must be positive");
  if (!(c.learning_rate >= 0.0)) throw ValidationError("train: learning_rate must be >= 0");
  if (c.refresh_every_epochs == 0) throw ValidationError("train: refresh_every_epochs must be positive");
  if (c.max_input_tokens == 0) throw ValidationError("train: max_input_tokens must be positive");
}

struct LossRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double loss = 0.0;
};

// query_id -> negative doc ids
using NegativePool = std::map<std::string, std::vector<std::string>>;

// SGD step on touched rows and (optionally) the decay, which is kept >= 0.
inline void apply_gradient(embed::ToyEncoderParams& params, const ParamGradient& g, double lr, bool learn_decay,
                           double decay_lr_scale) {
  for (auto r : g.touched_rows) {
    auto row = params.row(r);
    const double* src = g.table.data() + static_cast<std::size_t>(r) * params.dim;
    for (std::size_t d = 0; d < params.dim; ++d) row[d] -= lr * src[d];
  }
  if (learn_decay && params.pooling.kind == embed::Pooling::Kind::position_weighted) {
    params.pooling.decay = std::max(0.0, params.pooling.decay - lr * decay_lr_scale * g.decay);
  }
}

// ---------------------------------------------------------------------------
// Hard-negative mining

// For each query: k documents drawn uniformly without replacement from its
// top-`depth` results, judged-relevant documents excluded.
inline NegativePool mine_negatives(const retrieval::VectorIndex& index, const std::vector<std::string>& query_ids,
                                   const std::vector<embed::EmbeddingVector>& query_vecs, const corpus::Qrels& qrels,
                                   std::size_t depth, std::size_t k, std::mt19937_64& rng) {
  if (query_ids.size() != query_vecs.size()) throw ValidationError("mine_negatives: ids/vectors mismatch");
  NegativePool pool;
  for (std::size_t i = 0; i < query_ids.size(); ++i) {
    const auto& qid = query_ids[i];
    auto rel_it = qrels.find(qid);
    auto hits = retrieval::search(index, query_vecs[i], depth);
    std::vector<std::string> eligible;
    for (auto& h : hits) {
      bool relevant = rel_it != qrels.end() &&
                      std::find(rel_it->second.begin(), rel_it->second.end(), h.doc_id) != rel_it->second.end();
      if (!relevant) eligible.push_back(std::move(h.doc_id));
    }
    if (eligible.size() < k) {
      throw ValidationError("mine_negatives: query '" + qid + "' has " + std::to_string(eligible.size()) +
                            " eligible candidates, need " + std::to_string(k));
    }
    std::shuffle(eligible.begin(), eligible.end(), rng);
    eligible.resize(k);
    pool[qid] = std::move(eligible);
  }
  return pool;
}

inline void write_negative_pool(const std::string& path, const NegativePool& pool) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write '" + path + "'");
  for (const auto& [qid, negs] : pool) {
    nlohmann::ordered_json j;
    j["query_id"] = qid;
    j["negatives"] = negs;
    out << j.dump() << '\n';
  }
}

inline NegativePool load_negative_pool(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open negative pool '" + path + "'");
  NegativePool pool;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = nlohmann::json::parse(line);
      pool[j.at("query_id").get<std::string>()] = j.at("negatives").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(path + ":" + std::to_string(lineno) + ": malformed negatives record: " + e.what());
    }
  }
  return pool;
}

inline void write_loss_log(const std::string& path, const std::vector<LossRecord>& log) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write '" + path + "'");
  out << "epoch,step,loss\n";
  for (const auto& r : log) out << r.epoch << ',' << r.step << ',' << retrieval::format_double(r.loss) << '\n';
}

// ---------------------------------------------------------------------------
// Training drivers

struct TrainHooks {
  // Called after each negative (re)fetch with the epoch and the model that produced it.
  std::function<void(std::size_t epoch, const NegativePool&, const embed::ToyEncoderParams&)> on_refresh;
};

struct TrainResult {
  embed::ToyEncoderParams params;
  std::vector<LossRecord> log;
  std::vector<NegativePool> pools;
};

namespace detail {

inline std::vector<TokenIds> encode_documents(const std::vector<corpus::Document>& docs,
                                              const embed::ToyEncoderParams& params, std::size_t max_tokens) {
  std::vector<TokenIds> out;
  out.reserve(docs.size());
  for (const auto& d : docs) {
    auto tokens = probes::tokenize(d.text);
    out.push_back(embed::encode_tokens(tokens, params.buckets, max_tokens));
  }
  return out;
}

inline std::vector<embed::EmbeddingVector> forward_all(const embed::ToyEncoderParams& params,
                                                       const std::vector<TokenIds>& texts) {
  std::vector<embed::EmbeddingVector> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(embed::toy_forward(params, std::span<const std::uint32_t>(t)));
  return out;
}

inline double learning_rate_at(const TrainConfig& c, std::size_t step, std::size_t total_steps) {
  return c.learning_rate * (1.0 - static_cast<double>(step) / static_cast<double>(total_steps));
}

}  // namespace detail

inline TrainResult train_crop_pretrain(const std::vector<corpus::Document>& docs, embed::ToyEncoderParams params,
                                       const TrainConfig& config) {
  validate(config);
  embed::validate(params);
  if (docs.empty()) throw ValidationError("train: empty corpus");
  auto encoded = detail::encode_documents(docs, params, config.max_input_tokens);
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < encoded.size(); ++i) {
    if (encoded[i].size() >= 10) eligible.push_back(i);
  }
  if (eligible.empty()) throw ValidationError("train: no document has the 10 tokens cropping needs");

  std::mt19937_64 rng(config.seed);
  const std::size_t steps_per_epoch = (eligible.size() + config.batch_size - 1) / config.batch_size;
  const std::size_t total_steps = steps_per_epoch * config.epochs;
  const LossOptions opt{config.in_batch_negatives, config.temperature};
  TrainResult result;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    auto order = eligible;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      EncodedBatch batch;
      for (std::size_t i = b; i < std::min(order.size(), b + config.batch_size); ++i) {
        const auto& ids = encoded[order[i]];
        auto pair = sample_crop_pair(docs[order[i]].id, ids.size(), rng);
        batch.queries.emplace_back(ids.begin() + static_cast<std::ptrdiff_t>(pair.query_span.start),
                                   ids.begin() + static_cast<std::ptrdiff_t>(pair.query_span.end));
        batch.positives.emplace_back(ids.begin() + static_cast<std::ptrdiff_t>(pair.doc_span.start),
                                     ids.begin() + static_cast<std::ptrdiff_t>(pair.doc_span.end));
      }
      auto g = loss_gradient(batch, params, opt, config.chunk_size);
      apply_gradient(params, g, detail::learning_rate_at(config, step, total_steps), config.learn_decay,
                     config.decay_learning_rate_scale);
      result.log.push_back({epoch, step, g.loss});
      ++step;
    }
  }
  result.params = std::move(params);
  return result;
}

inline TrainResult train_supervised(const std::vector<corpus::Document>& docs, const std::vector<corpus::Query>& queries,
                                    const corpus::Qrels& qrels, embed::ToyEncoderParams params,
                                    const TrainConfig& config, const NegativePool* initial_negatives = nullptr,
                                    const TrainHooks& hooks = {}) {
  validate(config);
  embed::validate(params);
  if (docs.empty()) throw ValidationError("train: empty corpus");
  auto by_id = corpus::index_by_id(docs);
  auto doc_ids_enc = detail::encode_documents(docs, params, config.max_input_tokens);

  // Queries with a judged document present in the corpus; the first such document is the positive.
  std::vector<std::size_t> usable;
  std::vector<std::size_t> positive_of(queries.size(), 0);
  for (std::size_t i = 0; i < queries.size(); ++i) {
    auto it = qrels.find(queries[i].id);
    if (it == qrels.end()) continue;
    for (const auto& d : it->second) {
      if (auto f = by_id.find(d); f != by_id.end()) {
        positive_of[i] = f->second;
        usable.push_back(i);
        break;
      }
    }
  }
  if (usable.empty()) throw ValidationError("train: no query has a judged document in the corpus");
  std::vector<TokenIds> query_enc(queries.size());
  std::vector<std::string> usable_ids;
  for (auto i : usable) {
    auto tokens = probes::tokenize(queries[i].text);
    query_enc[i] = embed::encode_tokens(tokens, params.buckets, config.max_input_tokens);
    if (query_enc[i].empty()) throw ValidationError("train: query '" + queries[i].id + "' has no tokens");
    usable_ids.push_back(queries[i].id);
  }

  const std::size_t k = config.hard_negatives_per_query;
  std::mt19937_64 rng(config.seed);
  std::mt19937_64 mining_rng(config.seed ^ 0x9E3779B97F4A7C15ull);
  const std::size_t steps_per_epoch = (usable.size() + config.batch_size - 1) / config.batch_size;
  const std::size_t total_steps = steps_per_epoch * config.epochs;
  const LossOptions opt{config.in_batch_negatives, config.temperature};

  TrainResult result;
  NegativePool pool;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    if (k > 0 && epoch % config.refresh_every_epochs == 0) {
      if (epoch == 0 && initial_negatives != nullptr) {
        pool = *initial_negatives;
      } else {
        auto doc_vecs = detail::forward_all(params, doc_ids_enc);
        std::vector<std::string> ids;
        for (const auto& d : docs) ids.push_back(d.id);
        auto index = retrieval::build_index(std::move(ids), doc_vecs);
        std::vector<embed::EmbeddingVector> qv;
        for (auto i : usable) qv.push_back(embed::toy_forward(params, std::span<const std::uint32_t>(query_enc[i])));
        pool = mine_negatives(index, usable_ids, qv, qrels, config.mining_depth, k, mining_rng);
      }
      for (const auto& qid : usable_ids) {
        auto it = pool.find(qid);
        std::size_t have = it == pool.end() ? 0 : it->second.size();
        if (have < k) {
          throw ValidationError("train: k=" + std::to_string(k) + " exceeds the " + std::to_string(have) +
                                " negatives available for query '" + qid + "'");
        }
        for (const auto& d : it->second) {
          if (!by_id.count(d)) throw ValidationError("train: negative '" + d + "' is not in the corpus");
        }
      }
      result.pools.push_back(pool);
      if (hooks.on_refresh) hooks.on_refresh(epoch, pool, params);
    }

    auto order = usable;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      EncodedBatch batch;
      for (std::size_t i = b; i < std::min(order.size(), b + config.batch_size); ++i) {
        const auto qi = order[i];
        batch.queries.push_back(query_enc[qi]);
        batch.positives.push_back(doc_ids_enc[positive_of[qi]]);
        if (k > 0) {
          auto candidates = pool.at(queries[qi].id);
          std::shuffle(candidates.begin(), candidates.end(), rng);
          auto& negs = batch.hard_negatives.emplace_back();
          for (std::size_t j = 0; j < k; ++j) negs.push_back(doc_ids_enc[by_id.at(candidates[j])]);
        }
      }
      auto g = loss_gradient(batch, params, opt, config.chunk_size);
      apply_gradient(params, g, detail::learning_rate_at(config, step, total_steps), config.learn_decay,
                     config.decay_learning_rate_scale);
      result.log.push_back({epoch, step, g.loss});
      ++step;
    }
  }
  result.params = std::move(params);
  return result;
}

}  // namespace posbench::train
