#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "posbench/analysis.hpp"
#include "posbench/config.hpp"
#include "posbench/corpus.hpp"
#include "posbench/embed.hpp"
#include "posbench/error.hpp"
#include "posbench/remote.hpp"
#include "posbench/report.hpp"
#include "posbench/retrieval.hpp"
#include "posbench/train.hpp"

namespace posbench::cli {

namespace fs = std::filesystem;

inline constexpr int kSchemaVersion = 1;

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

inline const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "seed", "workspace", "k", "format",
      "corpus.documents", "corpus.queries", "corpus.qrels", "corpus.passages", "corpus.format",
      "synth.num_docs", "synth.doc_len_min", "synth.doc_len_max", "synth.passage_len_min", "synth.passage_len_max",
      "synth.position_law", "synth.median_fraction", "synth.fixed_fraction", "synth.vocabulary_size",
      "synth.query_vocab_size", "synth.query_len",
      "encoder.dim", "encoder.buckets", "encoder.pooling", "encoder.decay", "encoder.normalize",
      "encoder.max_input_tokens",
      "train.batch_size", "train.hard_negatives", "train.epochs", "train.learning_rate", "train.chunk_size",
      "train.refresh_every_epochs", "train.in_batch_negatives", "train.temperature", "train.mining_depth",
      "train.learn_decay", "train.decay_lr_scale", "train.initial_negatives",
      "crop_pretrain.batch_size", "crop_pretrain.hard_negatives", "crop_pretrain.epochs",
      "crop_pretrain.learning_rate", "crop_pretrain.chunk_size", "crop_pretrain.in_batch_negatives",
      "crop_pretrain.temperature", "crop_pretrain.learn_decay", "crop_pretrain.decay_lr_scale",
      "supervised_finetune.batch_size", "supervised_finetune.hard_negatives", "supervised_finetune.epochs",
      "supervised_finetune.learning_rate", "supervised_finetune.chunk_size",
      "supervised_finetune.refresh_every_epochs", "supervised_finetune.in_batch_negatives",
      "supervised_finetune.temperature", "supervised_finetune.mining_depth", "supervised_finetune.learn_decay",
      "supervised_finetune.decay_lr_scale",
      "probe.checkpoint", "probe.segments", "probe.sample_size", "probe.poolings", "probe.window_len",
      "probe.instances_per_window", "probe.span_len", "probe.input_token_limit", "probe.span_mock",
      "probe.mock_cutoff", "probe.mock_accuracy", "probe.permutation_rounds",
      "backend.url", "backend.pooling", "backend.batch_size", "backend.timeout_ms", "backend.max_input_tokens",
  };
  return keys;
}

// splitmix64 of the seed mixed with a component tag.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
  std::uint64_t z = seed ^ embed::fnv1a(tag);
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------
// Workspace

class Workspace {
 public:
  explicit Workspace(fs::path root) : root_(std::move(root)) {}

  const fs::path& root() const { return root_; }
  std::string path(const std::string& rel) const { return (root_ / rel).string(); }

  void ensure_dirs() const {
    for (const char* d : {"corpus", "checkpoints", "negatives", "logs", "reports", "runs"}) {
      fs::create_directories(root_ / d);
    }
  }

  bool has_manifest() const { return fs::exists(root_ / "manifest.json"); }

  nlohmann::ordered_json manifest() const {
    if (!has_manifest()) {
      throw ValidationError("workspace '" + root_.string() + "' has no manifest.json; run ingest or synth first");
    }
    std::ifstream in(root_ / "manifest.json", std::ios::binary);
    nlohmann::ordered_json j;
    try {
      j = nlohmann::ordered_json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("malformed manifest.json: " + std::string(e.what()));
    }
    if (!j.contains("schema_version") || j["schema_version"] != kSchemaVersion) {
      throw ValidationError("manifest.json schema_version is not " + std::to_string(kSchemaVersion));
    }
    return j;
  }

  void save_manifest(const nlohmann::ordered_json& j) const {
    std::ofstream out(root_ / "manifest.json", std::ios::binary);
    if (!out) throw ValidationError("cannot write manifest in '" + root_.string() + "'");
    out << j.dump(2) << '\n';
  }

  std::vector<corpus::Document> documents() const {
    return corpus::load_corpus(path("corpus/documents.jsonl"), corpus::Format::jsonl);
  }
  std::vector<corpus::Query> queries() const {
    return corpus::load_queries(path("corpus/queries.jsonl"), corpus::Format::jsonl);
  }
  corpus::Qrels qrels() const { return corpus::load_qrels(path("corpus/qrels.tsv")); }
  std::vector<corpus::PassageAlignment> alignments() const {
    return corpus::load_alignments(path("corpus/alignments.jsonl"));
  }

 private:
  fs::path root_;
};

// ---------------------------------------------------------------------------
// Invocation state

struct Invocation {
  config::Config cfg;
  Workspace ws{fs::path{}};
  std::uint64_t seed = 0;
  std::size_t k = 100;
  report::Format format = report::Format::csv;
  std::string backend_url;
  std::ostream* out = &std::cout;
  std::ostream* err = &std::cerr;
};

inline embed::ToyEncoderParams fresh_params(const Invocation& inv) {
  const auto& c = inv.cfg;
  auto pooling_name = c.get_string("encoder.pooling", "position_weighted");
  embed::Pooling pooling;
  if (pooling_name == "mean") {
    pooling = embed::Pooling::mean();
  } else if (pooling_name == "position_weighted") {
    pooling = embed::Pooling::position_weighted(c.get_double("encoder.decay", 0.0));
  } else {
    throw ValidationError("encoder.pooling must be mean or position_weighted");
  }
  return embed::make_toy_params(c.get_size("encoder.dim", 64), c.get_size("encoder.buckets", 16384), pooling,
                                c.get_bool("encoder.normalize", false), derive_seed(inv.seed, "init"));
}

inline std::optional<std::string> latest_checkpoint(const Invocation& inv) {
  if (inv.cfg.has("probe.checkpoint")) return inv.cfg.get_string("probe.checkpoint");
  auto m = inv.ws.manifest();
  if (m.contains("latest_checkpoint")) return inv.ws.path(m["latest_checkpoint"].get<std::string>());
  return std::nullopt;
}

inline embed::ToyEncoderParams probe_params(const Invocation& inv) {
  if (auto ck = latest_checkpoint(inv)) return embed::load_params(*ck);
  return fresh_params(inv);
}

inline std::unique_ptr<embed::EmbeddingBackend> make_backend(const Invocation& inv, const std::string& pooling = {}) {
  const auto& c = inv.cfg;
  std::size_t max_tokens = c.get_size("backend.max_input_tokens", c.get_size("encoder.max_input_tokens", 2048));
  if (!inv.backend_url.empty()) {
    return std::make_unique<embed::RemoteBackend>(
        inv.backend_url, pooling.empty() ? c.get_string("backend.pooling", "mean") : pooling, max_tokens,
        c.get_size("backend.batch_size", 32), std::chrono::milliseconds(c.get_size("backend.timeout_ms", 60000)));
  }
  auto params = probe_params(inv);
  if (pooling == "mean") params.pooling = embed::Pooling::mean();
  else if (!pooling.empty() && pooling != "checkpoint") {
    throw ValidationError("native backend pooling must be 'checkpoint' or 'mean', got '" + pooling + "'");
  }
  return std::make_unique<embed::NativeBackend>(std::move(params), max_tokens);
}

// ---------------------------------------------------------------------------
// Commands

inline nlohmann::ordered_json corpus_manifest(const std::string& source, std::size_t docs, std::size_t queries,
                                              const corpus::Qrels& qrels, std::size_t passages, std::size_t aligned,
                                              std::size_t unaligned) {
  std::size_t pairs = 0;
  for (const auto& [q, ds] : qrels) pairs += ds.size();
  nlohmann::ordered_json j;
  j["schema_version"] = kSchemaVersion;
  auto& c = j["corpus"];
  c["source"] = source;
  c["documents"] = docs;
  c["queries"] = queries;
  c["qrels"] = pairs;
  c["passages"] = passages;
  c["aligned"] = aligned;
  c["unaligned"] = unaligned;
  j["checkpoints"] = nlohmann::ordered_json::object();
  return j;
}

inline int cmd_ingest(const Invocation& inv) {
  const auto& c = inv.cfg;
  auto need = [&](const std::string& key) {
    if (!c.has(key)) throw ValidationError("ingest: config key '" + key + "' is required");
    auto p = c.get_string(key);
    if (!fs::exists(p)) throw ValidationError("ingest: " + key + " path '" + p + "' does not exist");
    return p;
  };
  auto format = corpus::parse_format(c.get_string("corpus.format", "jsonl"));
  auto docs_path = need("corpus.documents");
  auto queries_path = need("corpus.queries");
  auto qrels_path = need("corpus.qrels");
  std::optional<std::string> passages_path;
  if (c.has("corpus.passages")) passages_path = need("corpus.passages");

  auto docs = corpus::load_corpus(docs_path, format);
  auto queries = corpus::load_queries(queries_path, format);
  auto qrels = corpus::load_qrels(qrels_path);
  std::vector<corpus::PassageRecord> passages;
  if (passages_path) passages = corpus::load_passages(*passages_path);
  auto outcome = corpus::align_queries(docs, qrels, passages);

  inv.ws.ensure_dirs();
  corpus::write_documents(inv.ws.path("corpus/documents.jsonl"), docs);
  corpus::write_queries(inv.ws.path("corpus/queries.jsonl"), queries);
  corpus::write_qrels(inv.ws.path("corpus/qrels.tsv"), qrels);
  corpus::write_alignments(inv.ws.path("corpus/alignments.jsonl"), outcome.alignments);
  {
    std::ofstream un(inv.ws.path("corpus/unaligned.txt"), std::ios::binary);
    for (const auto& q : outcome.unaligned) un << q << '\n';
  }
  auto m = corpus_manifest("ingest", docs.size(), queries.size(), qrels, passages.size(), outcome.alignments.size(),
                           outcome.unaligned.size());
  inv.ws.save_manifest(m);
  *inv.out << m["corpus"].dump(2) << '\n';
  return kExitOk;
}

inline corpus::SynthSpec synth_spec(const Invocation& inv) {
  const auto& c = inv.cfg;
  corpus::SynthSpec s;
  s.num_docs = c.get_size("synth.num_docs", s.num_docs);
  s.doc_char_len = {c.get_size("synth.doc_len_min", s.doc_char_len.min),
                    c.get_size("synth.doc_len_max", s.doc_char_len.max)};
  s.passage_char_len = {c.get_size("synth.passage_len_min", s.passage_char_len.min),
                        c.get_size("synth.passage_len_max", s.passage_char_len.max)};
  auto law = c.get_string("synth.position_law", "uniform");
  if (law == "front_skewed") {
    s.position_law = corpus::FrontSkewed{c.get_double("synth.median_fraction", 0.19)};
  } else if (law == "uniform") {
    s.position_law = corpus::Uniform{};
  } else if (law == "fixed") {
    s.position_law = corpus::Fixed{c.get_double("synth.fixed_fraction", 0.0)};
  } else {
    throw ValidationError("synth.position_law must be front_skewed, uniform or fixed");
  }
  s.vocabulary_size = c.get_size("synth.vocabulary_size", s.vocabulary_size);
  s.query_vocab_size = c.get_size("synth.query_vocab_size", s.query_vocab_size);
  s.query_len = c.get_size("synth.query_len", s.query_len);
  s.seed = derive_seed(inv.seed, "synth");
  corpus::validate(s);
  return s;
}

inline nlohmann::ordered_json to_json(const corpus::PositionDistribution& d) {
  nlohmann::ordered_json j;
  j["count"] = d.count;
  j["mean"] = d.mean;
  j["mean_fraction"] = d.mean_fraction;
  j["p5"] = d.p5;
  j["p25"] = d.p25;
  j["p50"] = d.p50;
  j["p75"] = d.p75;
  j["p95"] = d.p95;
  return j;
}

inline int cmd_synth(const Invocation& inv) {
  auto spec = synth_spec(inv);
  auto sc = corpus::synth_corpus(spec);
  inv.ws.ensure_dirs();
  corpus::write_documents(inv.ws.path("corpus/documents.jsonl"), sc.documents);
  corpus::write_queries(inv.ws.path("corpus/queries.jsonl"), sc.queries);
  corpus::write_qrels(inv.ws.path("corpus/qrels.tsv"), sc.qrels);
  corpus::write_alignments(inv.ws.path("corpus/alignments.jsonl"), sc.alignments);
  std::ofstream(inv.ws.path("corpus/unaligned.txt"), std::ios::binary);
  auto stats = to_json(corpus::passage_position_stats(sc.alignments, sc.documents));
  report::detail::spill(inv.ws.path("reports/position_stats.json"), stats.dump(2) + "\n");
  auto m = corpus_manifest("synth", sc.documents.size(), sc.queries.size(), sc.qrels, sc.alignments.size(),
                           sc.alignments.size(), 0);
  inv.ws.save_manifest(m);
  *inv.out << stats.dump(2) << '\n';
  return kExitOk;
}

inline train::TrainConfig train_config(const Invocation& inv, train::Mode mode) {
  const auto& c = inv.cfg;
  const std::string prefix = train::to_string(mode);
  auto key = [&](const std::string& name) {
    auto specific = prefix + "." + name;
    return c.has(specific) ? specific : "train." + name;
  };
  train::TrainConfig t;
  t.batch_size = c.get_size(key("batch_size"), t.batch_size);
  // train.hard_negatives is a fine-tuning setting; crop pre-training only reads its own key.
  t.hard_negatives_per_query = mode == train::Mode::crop_pretrain
                                   ? c.get_size("crop_pretrain.hard_negatives", 0)
                                   : c.get_size(key("hard_negatives"), t.hard_negatives_per_query);
  t.epochs = c.get_size(key("epochs"), t.epochs);
  t.learning_rate = c.get_double(key("learning_rate"), t.learning_rate);
  t.chunk_size = c.get_size(key("chunk_size"), t.chunk_size);
  t.refresh_every_epochs = c.get_size(key("refresh_every_epochs"), t.refresh_every_epochs);
  t.in_batch_negatives = c.get_bool(key("in_batch_negatives"), t.in_batch_negatives);
  t.temperature = c.get_double(key("temperature"), t.temperature);
  t.mining_depth = c.get_size(key("mining_depth"), t.mining_depth);
  t.learn_decay = c.get_bool(key("learn_decay"), t.learn_decay);
  t.decay_learning_rate_scale = c.get_double(key("decay_lr_scale"), t.decay_learning_rate_scale);
  t.max_input_tokens = c.get_size("encoder.max_input_tokens", t.max_input_tokens);
  t.seed = derive_seed(inv.seed, prefix);
  if (mode == train::Mode::crop_pretrain && t.hard_negatives_per_query != 0) {
    throw ValidationError("crop_pretrain uses in-batch negatives only; hard_negatives must be 0");
  }
  train::validate(t);
  return t;
}

inline int cmd_train(const Invocation& inv, train::Mode mode) {
  auto m = inv.ws.manifest();
  auto config = train_config(inv, mode);
  inv.ws.ensure_dirs();
  auto docs = inv.ws.documents();
  const std::string name = train::to_string(mode);

  embed::ToyEncoderParams init;
  auto& checkpoints = m["checkpoints"];
  if (mode == train::Mode::supervised_finetune && checkpoints.contains("crop_pretrain")) {
    init = embed::load_params(inv.ws.path(checkpoints["crop_pretrain"].get<std::string>()));
  } else {
    init = fresh_params(inv);
  }

  train::TrainResult result;
  if (mode == train::Mode::crop_pretrain) {
    result = train::train_crop_pretrain(docs, std::move(init), config);
  } else {
    auto queries = inv.ws.queries();
    auto qrels = inv.ws.qrels();
    std::optional<train::NegativePool> initial;
    if (inv.cfg.has("train.initial_negatives")) {
      initial = train::load_negative_pool(inv.cfg.get_string("train.initial_negatives"));
    }
    train::TrainHooks hooks;
    hooks.on_refresh = [&](std::size_t epoch, const train::NegativePool& pool, const embed::ToyEncoderParams& p) {
      auto tag = "epoch" + std::to_string(epoch);
      train::write_negative_pool(inv.ws.path("negatives/pool_" + tag + ".jsonl"), pool);
      embed::save_params(inv.ws.path("checkpoints/" + name + "_" + tag + ".bin"), p);
    };
    result = train::train_supervised(docs, queries, qrels, std::move(init), config, initial ? &*initial : nullptr,
                                     hooks);
  }
  auto ck = "checkpoints/" + name + ".bin";
  embed::save_params(inv.ws.path(ck), result.params);
  train::write_loss_log(inv.ws.path("logs/" + name + "_loss.csv"), result.log);
  checkpoints[name] = ck;
  m["latest_checkpoint"] = ck;
  inv.ws.save_manifest(m);

  nlohmann::ordered_json summary;
  summary["mode"] = name;
  summary["steps"] = result.log.size();
  summary["final_loss"] = result.log.empty() ? 0.0 : result.log.back().loss;
  summary["negative_pools"] = result.pools.size();
  summary["pooling"] = embed::to_string(result.params.pooling);
  summary["checkpoint"] = ck;
  *inv.out << summary.dump(2) << '\n';
  return kExitOk;
}

inline std::string sanitize(std::string s) {
  for (auto& ch : s) {
    if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '_' && ch != '-') ch = '_';
  }
  return s;
}

inline int cmd_probe(const Invocation& inv, const std::string& probe) {
  inv.ws.manifest();
  const auto& c = inv.cfg;
  inv.ws.ensure_dirs();
  auto ext = report::extension(inv.format);
  if (probe == "insertion") {
    auto backend = make_backend(inv);
    auto rep = analysis::run_insertion_probe(*backend, inv.ws.documents(), inv.ws.queries(), inv.ws.alignments(),
                                             inv.ws.qrels(), inv.k);
    report::emit_report(rep, inv.ws.path(std::string("reports/insertion") + ext), inv.format);
    auto perm = analysis::permutation_test(rep, c.get_size("probe.permutation_rounds", 1000),
                                           derive_seed(inv.seed, "permutation"));
    nlohmann::ordered_json j;
    j["statistic"] = perm.statistic;
    j["p_value"] = perm.p_value;
    j["null_mean"] = perm.null_mean;
    j["null_std"] = perm.null_std;
    j["delta_std"] = perm.delta_std;
    j["rounds"] = perm.rounds;
    j["spearman_position_mrr"] = analysis::position_trend(rep);
    report::detail::spill(inv.ws.path("reports/insertion_null.json"), j.dump(2) + "\n");
    *inv.out << report::to_csv(rep);
    return kExitOk;
  }
  if (probe == "segment") {
    auto docs = inv.ws.documents();
    std::vector<std::string> defaults = inv.backend_url.empty() ? std::vector<std::string>{"checkpoint", "mean"}
                                                                : std::vector<std::string>{"mean"};
    for (const auto& pooling : c.get_list("probe.poolings", defaults)) {
      auto backend = make_backend(inv, pooling);
      std::string label = pooling;
      if (auto* native = dynamic_cast<const embed::NativeBackend*>(backend.get())) {
        label = embed::to_string(native->params().pooling);
      }
      auto rep = analysis::run_segment_probe(*backend, docs, c.get_size("probe.segments", 10),
                                             c.get_size("probe.sample_size", 24000), derive_seed(inv.seed, "segment"),
                                             label);
      report::emit_report(rep, inv.ws.path("reports/segment_" + sanitize(pooling) + ext), inv.format);
      *inv.out << report::to_csv(rep);
    }
    return kExitOk;
  }
  if (probe == "span") {
    auto instances = analysis::build_span_instances(
        inv.ws.documents(), c.get_size("probe.window_len", 256), c.get_size("probe.instances_per_window", 7000),
        c.get_size("probe.span_len", 3), derive_seed(inv.seed, "span"), c.get_size("probe.input_token_limit", 2048));
    if (instances.empty()) throw ValidationError("span probe: no document covers a full window");
    std::unique_ptr<embed::SpanBackend> backend;
    auto mock = c.get_string("probe.span_mock", "none");
    using Mode = analysis::OracleSpanBackend::Mode;
    if (mock == "echo") {
      backend = std::make_unique<analysis::OracleSpanBackend>(instances, Mode::echo);
    } else if (mock == "empty") {
      backend = std::make_unique<analysis::OracleSpanBackend>(instances, Mode::empty);
    } else if (mock == "position_cutoff") {
      backend = std::make_unique<analysis::OracleSpanBackend>(instances, Mode::position_cutoff,
                                                              c.get_size("probe.mock_cutoff", 256));
    } else if (mock == "uniform") {
      backend = std::make_unique<analysis::OracleSpanBackend>(instances, Mode::uniform, 0,
                                                              c.get_double("probe.mock_accuracy", 0.5),
                                                              derive_seed(inv.seed, "mock"));
    } else if (mock != "none") {
      throw ValidationError("probe.span_mock must be none, echo, empty, position_cutoff or uniform");
    } else if (!inv.backend_url.empty()) {
      backend = std::make_unique<embed::RemoteSpanBackend>(
          inv.backend_url, c.get_size("backend.batch_size", 32),
          std::chrono::milliseconds(c.get_size("backend.timeout_ms", 60000)));
    } else {
      throw ValidationError("span probe needs --backend-url or probe.span_mock");
    }
    auto path = inv.ws.path(std::string("reports/span") + ext);
    try {
      auto rep = analysis::run_span_probe(*backend, instances);
      report::emit_report(rep, path, inv.format);
      *inv.out << report::to_csv(rep);
    } catch (const analysis::PartialReportError& e) {
      if (!e.partial().windows.empty()) report::emit_report(e.partial(), path, inv.format);
      throw;
    }
    return kExitOk;
  }
  throw ValidationError("unknown probe '" + probe + "' (expected insertion, segment or span)");
}

inline int cmd_eval(const Invocation& inv, const std::string& run_file) {
  inv.ws.manifest();
  inv.ws.ensure_dirs();
  auto qrels = inv.ws.qrels();
  retrieval::RunResult run;
  if (!run_file.empty()) {
    run = retrieval::read_trec_run(run_file);
  } else {
    auto backend = make_backend(inv);
    auto docs = inv.ws.documents();
    std::vector<std::string> ids, texts, qids, qtexts;
    for (const auto& d : docs) {
      ids.push_back(d.id);
      texts.push_back(d.text);
    }
    for (const auto& q : inv.ws.queries()) {
      if (!qrels.count(q.id)) continue;
      qids.push_back(q.id);
      qtexts.push_back(q.text);
    }
    auto index = retrieval::build_index(ids, backend->embed_batch(texts));
    run = retrieval::search_all(index, qids, backend->embed_batch(qtexts), inv.k);
    retrieval::write_trec_run(inv.ws.path("runs/eval.trec"), run, "posbench");
  }
  auto metrics = retrieval::evaluate(run, qrels, inv.k);
  nlohmann::ordered_json j;
  j["k"] = metrics.k;
  j["queries"] = run.size();
  j["mrr"] = metrics.mrr_at_k;
  j["recall"] = metrics.recall_at_k;
  report::detail::spill(inv.ws.path("reports/metrics.json"), j.dump(2) + "\n");
  *inv.out << j.dump(2) << '\n';
  return kExitOk;
}

// Re-emits every probe report in the workspace in the requested format and
// prints a short summary.
inline int cmd_report(const Invocation& inv) {
  auto m = inv.ws.manifest();
  auto& out = *inv.out;
  out << "corpus: " << m["corpus"].dump() << '\n';
  if (m.contains("latest_checkpoint")) out << "checkpoint: " << m["latest_checkpoint"].get<std::string>() << '\n';
  auto dir = inv.ws.root() / "reports";
  if (!fs::exists(dir)) return kExitOk;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::set<std::string> done;
  for (const auto& f : files) {
    auto stem = f.stem().string();
    auto ext = f.extension().string();
    if (ext != ".csv" && ext != ".json") continue;
    bool insertion = stem == "insertion", segment = stem.rfind("segment_", 0) == 0, span = stem == "span";
    if (!(insertion || segment || span) || !done.insert(stem).second) continue;
    auto from = ext == ".json" ? report::Format::json : report::Format::csv;
    auto target = inv.ws.path("reports/" + stem + report::extension(inv.format));
    if (insertion) {
      auto r = report::read_position_report(f.string(), from);
      report::emit_report(r, target, inv.format);
      out << stem << ": baseline mrr " << retrieval::format_double(r.baseline.mrr_at_k);
      for (std::size_t i = 0; i < r.deltas.size(); ++i) {
        out << (i == 0 ? "; delta_mrr " : " ") << retrieval::format_double(r.deltas[i].mrr_at_k);
      }
      out << '\n';
    } else if (segment) {
      auto r = report::read_segment_report(f.string(), from);
      report::emit_report(r, target, inv.format);
      out << stem << " (" << r.pooling << "): mean cosine";
      for (const auto& s : r.segments) out << ' ' << retrieval::format_double(s.mean);
      out << '\n';
    } else {
      auto r = report::read_span_report(f.string(), from);
      report::emit_report(r, target, inv.format);
      out << stem << ": accuracy";
      for (const auto& w : r.windows) out << ' ' << retrieval::format_double(w.mean_acc);
      out << '\n';
    }
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Entry point

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Positional-bias probes and contrastive training for text embedders", "posbench"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, workspace, backend_url, format;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> k;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "Configuration file (flat key = value)");
  app.add_option("--seed", seed, "Seed for every stochastic component");
  app.add_option("--workspace", workspace, "Workspace directory")->envname("POSBENCH_WORKSPACE");
  app.add_option("--backend-url", backend_url, "Model-serving endpoint; the native toy encoder is used when absent");
  app.add_option("--k", k, "Retrieval cutoff for metrics");
  app.add_option("--format", format, "Report format: csv or json");
  app.add_option("--set", overrides, "Config override key=value (repeatable)");

  auto* ingest = app.add_subcommand("ingest", "Load and align a corpus into the workspace");
  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus into the workspace");
  auto* train_cmd = app.add_subcommand("train", "Train the toy encoder");
  std::string mode;
  train_cmd->add_option("--mode", mode, "crop_pretrain or supervised_finetune")->required();
  auto* probe_cmd = app.add_subcommand("probe", "Run a positional probe");
  std::string probe;
  probe_cmd->add_option("--probe", probe, "insertion, segment or span")->required();
  auto* eval_cmd = app.add_subcommand("eval", "Compute MRR@k and Recall@k");
  std::string run_file;
  eval_cmd->add_option("--run", run_file, "Evaluate this TREC run file instead of retrieving");
  auto* report_cmd = app.add_subcommand("report", "Summarize and re-emit workspace reports");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    Invocation inv;
    inv.out = &out;
    inv.err = &err;
    if (!config_path.empty()) inv.cfg = config::Config::load(config_path);
    for (const auto& o : overrides) {
      auto eq = o.find('=');
      if (eq == std::string::npos || eq == 0) throw ValidationError("--set expects key=value, got '" + o + "'");
      inv.cfg.set(o.substr(0, eq), o.substr(eq + 1));
    }
    inv.cfg.check_known(known_keys());
    if (seed) inv.cfg.set("seed", std::to_string(*seed));
    if (k) inv.cfg.set("k", std::to_string(*k));
    if (!format.empty()) inv.cfg.set("format", format);
    if (!backend_url.empty()) inv.cfg.set("backend.url", backend_url);
    if (workspace.empty()) workspace = inv.cfg.get_string("workspace");
    if (workspace.empty()) throw ValidationError("no workspace: pass --workspace or set POSBENCH_WORKSPACE");
    inv.ws = Workspace(workspace);
    inv.seed = inv.cfg.get_u64("seed", 0);
    inv.k = inv.cfg.get_size("k", 100);
    if (inv.k == 0) throw ValidationError("k must be positive");
    inv.format = report::parse_format(inv.cfg.get_string("format", "csv"));
    inv.backend_url = inv.cfg.get_string("backend.url");

    if (ingest->parsed()) return cmd_ingest(inv);
    if (synth->parsed()) return cmd_synth(inv);
    if (train_cmd->parsed()) return cmd_train(inv, train::parse_mode(mode));
    if (probe_cmd->parsed()) return cmd_probe(inv, probe);
    if (eval_cmd->parsed()) return cmd_eval(inv, run_file);
    if (report_cmd->parsed()) return cmd_report(inv);
    return kExitValidation;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const NotFoundError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace posbench::cli
