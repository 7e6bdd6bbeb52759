#pragma once

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "posbench/analysis.hpp"
#include "posbench/error.hpp"
#include "posbench/retrieval.hpp"

namespace posbench::report {

enum class Format { json, csv };

inline Format parse_format(std::string_view s) {
  if (s == "json") return Format::json;
  if (s == "csv") return Format::csv;
  throw ValidationError("unknown report format '" + std::string(s) + "' (expected json or csv)");
}

inline const char* extension(Format f) { return f == Format::json ? ".json" : ".csv"; }

namespace detail {

using retrieval::format_double;

inline double parse_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ValidationError(where + ": bad number '" + s + "'");
  return v;
}

inline std::size_t parse_size(const std::string& s, const std::string& where) {
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ValidationError(where + ": bad integer '" + s + "'");
  return v;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ls(line);
  while (std::getline(ls, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

// Header row then data rows; blank lines skipped.
inline std::vector<std::vector<std::string>> read_csv(const std::string& text, const std::string& header,
                                                     const std::string& name) {
  std::istringstream in(text);
  std::string line;
  std::vector<std::vector<std::string>> rows;
  bool seen_header = false;
  std::size_t lineno = 0;
  const std::size_t columns = split_csv(header).size();
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!seen_header) {
      if (line != header) throw ValidationError(name + ": expected header '" + header + "'");
      seen_header = true;
      continue;
    }
    auto cells = split_csv(line);
    if (cells.size() != columns) {
      throw ValidationError(name + ":" + std::to_string(lineno) + ": expected " + std::to_string(columns) + " columns");
    }
    rows.push_back(std::move(cells));
  }
  if (!seen_header) throw ValidationError(name + ": empty report file");
  return rows;
}

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open report '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spill(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write '" + path + "'");
  out << text;
  if (!out) throw ValidationError("write failed for '" + path + "'");
}

inline nlohmann::ordered_json parse_json(const std::string& text, const std::string& name) {
  try {
    return nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(name + ": " + e.what());
  }
}

inline std::string dump(const nlohmann::ordered_json& j) { return j.dump(2) + "\n"; }

inline nlohmann::ordered_json to_json(const retrieval::Metrics& m) {
  nlohmann::ordered_json j;
  j["mrr"] = m.mrr_at_k;
  j["recall"] = m.recall_at_k;
  return j;
}

inline retrieval::Metrics metrics_from(const nlohmann::ordered_json& j, std::size_t k) {
  return {j.at("mrr").get<double>(), j.at("recall").get<double>(), k};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// PositionReport

inline std::string to_csv(const analysis::PositionReport& r) {
  analysis::validate(r);
  using detail::format_double;
  std::string out = "kind,position,mrr,recall,delta_mrr,delta_recall\n";
  out += r.probe_kind + ",0," + format_double(r.baseline.mrr_at_k) + ',' + format_double(r.baseline.recall_at_k) +
         ",0,0\n";
  for (std::size_t i = 0; i < r.per_position.size(); ++i) {
    out += r.probe_kind + ',' + std::to_string(i + 1) + ',' + format_double(r.per_position[i].mrr_at_k) + ',' +
           format_double(r.per_position[i].recall_at_k) + ',' + format_double(r.deltas[i].mrr_at_k) + ',' +
           format_double(r.deltas[i].recall_at_k) + '\n';
  }
  return out;
}

inline std::string to_json(const analysis::PositionReport& r) {
  analysis::validate(r);
  nlohmann::ordered_json j;
  j["kind"] = r.probe_kind;
  j["k"] = r.k;
  j["num_queries"] = r.num_queries;
  j["baseline"] = detail::to_json(r.baseline);
  auto& positions = j["positions"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < r.per_position.size(); ++i) {
    nlohmann::ordered_json p;
    p["position"] = i + 1;
    p["mrr"] = r.per_position[i].mrr_at_k;
    p["recall"] = r.per_position[i].recall_at_k;
    p["delta_mrr"] = r.deltas[i].mrr_at_k;
    p["delta_recall"] = r.deltas[i].recall_at_k;
    positions.push_back(std::move(p));
  }
  return detail::dump(j);
}

inline analysis::PositionReport position_report_from_csv(const std::string& text, const std::string& name = "<csv>") {
  auto rows = detail::read_csv(text, "kind,position,mrr,recall,delta_mrr,delta_recall", name);
  if (rows.size() != analysis::kPositions + 1) throw ValidationError(name + ": expected 11 data rows");
  analysis::PositionReport r;
  r.probe_kind = rows[0][0];
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& c = rows[i];
    if (detail::parse_size(c[1], name) != i) throw ValidationError(name + ": positions must run 0..10 in order");
    retrieval::Metrics m{detail::parse_double(c[2], name), detail::parse_double(c[3], name), r.k};
    if (i == 0) {
      r.baseline = m;
    } else {
      r.per_position.push_back(m);
      r.deltas.push_back({detail::parse_double(c[4], name), detail::parse_double(c[5], name), r.k});
    }
  }
  analysis::validate(r);
  return r;
}

inline analysis::PositionReport position_report_from_json(const std::string& text, const std::string& name = "<json>") {
  auto j = detail::parse_json(text, name);
  analysis::PositionReport r;
  try {
    r.probe_kind = j.at("kind").get<std::string>();
    r.k = j.at("k").get<std::size_t>();
    r.num_queries = j.at("num_queries").get<std::size_t>();
    r.baseline = detail::metrics_from(j.at("baseline"), r.k);
    for (const auto& p : j.at("positions")) {
      r.per_position.push_back(detail::metrics_from(p, r.k));
      r.deltas.push_back({p.at("delta_mrr").get<double>(), p.at("delta_recall").get<double>(), r.k});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(name + ": " + e.what());
  }
  analysis::validate(r);
  return r;
}

// ---------------------------------------------------------------------------
// SegmentSimilarityReport

inline void validate(const analysis::SegmentSimilarityReport& r) {
  if (r.segments.empty()) throw ValidationError("segment report has no segments");
}

inline std::string to_csv(const analysis::SegmentSimilarityReport& r) {
  validate(r);
  using detail::format_double;
  std::string out = "segment,mean,std,p5,p25,p50,p75,p95,pooling\n";
  for (std::size_t i = 0; i < r.segments.size(); ++i) {
    const auto& s = r.segments[i];
    out += std::to_string(i + 1) + ',' + format_double(s.mean) + ',' + format_double(s.std) + ',' +
           format_double(s.p5) + ',' + format_double(s.p25) + ',' + format_double(s.p50) + ',' + format_double(s.p75) +
           ',' + format_double(s.p95) + ',' + r.pooling + '\n';
  }
  return out;
}

inline std::string to_json(const analysis::SegmentSimilarityReport& r) {
  validate(r);
  nlohmann::ordered_json j;
  j["pooling"] = r.pooling;
  auto& segs = j["segments"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < r.segments.size(); ++i) {
    const auto& s = r.segments[i];
    nlohmann::ordered_json e;
    e["segment"] = i + 1;
    e["mean"] = s.mean;
    e["std"] = s.std;
    e["p5"] = s.p5;
    e["p25"] = s.p25;
    e["p50"] = s.p50;
    e["p75"] = s.p75;
    e["p95"] = s.p95;
    e["n"] = s.n;
    segs.push_back(std::move(e));
  }
  return detail::dump(j);
}

inline analysis::SegmentSimilarityReport segment_report_from_csv(const std::string& text,
                                                                 const std::string& name = "<csv>") {
  auto rows = detail::read_csv(text, "segment,mean,std,p5,p25,p50,p75,p95,pooling", name);
  analysis::SegmentSimilarityReport r;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& c = rows[i];
    if (detail::parse_size(c[0], name) != i + 1) throw ValidationError(name + ": segments must run 1..k in order");
    stats::Summary s;
    s.mean = detail::parse_double(c[1], name);
    s.std = detail::parse_double(c[2], name);
    s.p5 = detail::parse_double(c[3], name);
    s.p25 = detail::parse_double(c[4], name);
    s.p50 = detail::parse_double(c[5], name);
    s.p75 = detail::parse_double(c[6], name);
    s.p95 = detail::parse_double(c[7], name);
    if (i == 0) r.pooling = c[8];
    r.segments.push_back(s);
  }
  validate(r);
  return r;
}

inline analysis::SegmentSimilarityReport segment_report_from_json(const std::string& text,
                                                                  const std::string& name = "<json>") {
  auto j = detail::parse_json(text, name);
  analysis::SegmentSimilarityReport r;
  try {
    r.pooling = j.at("pooling").get<std::string>();
    for (const auto& e : j.at("segments")) {
      stats::Summary s;
      s.mean = e.at("mean").get<double>();
      s.std = e.at("std").get<double>();
      s.p5 = e.at("p5").get<double>();
      s.p25 = e.at("p25").get<double>();
      s.p50 = e.at("p50").get<double>();
      s.p75 = e.at("p75").get<double>();
      s.p95 = e.at("p95").get<double>();
      s.n = e.at("n").get<std::size_t>();
      r.segments.push_back(s);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(name + ": " + e.what());
  }
  validate(r);
  return r;
}

// ---------------------------------------------------------------------------
// SpanAccuracyReport

inline void validate(const analysis::SpanAccuracyReport& r) {
  if (r.windows.empty()) throw ValidationError("span report has no windows");
  for (const auto& w : r.windows) {
    if (!(w.mean_acc >= 0.0 && w.mean_acc <= 1.0)) throw ValidationError("span report: accuracy outside [0, 1]");
  }
}

inline std::string to_csv(const analysis::SpanAccuracyReport& r) {
  validate(r);
  using detail::format_double;
  std::string out = "window_start,window_end,mean_acc,std,n\n";
  for (const auto& w : r.windows) {
    out += std::to_string(w.window_start) + ',' + std::to_string(w.window_end) + ',' + format_double(w.mean_acc) + ',' +
           format_double(w.std) + ',' + std::to_string(w.n) + '\n';
  }
  return out;
}

inline std::string to_json(const analysis::SpanAccuracyReport& r) {
  validate(r);
  nlohmann::ordered_json j;
  auto& ws = j["windows"] = nlohmann::ordered_json::array();
  for (const auto& w : r.windows) {
    nlohmann::ordered_json e;
    e["window_start"] = w.window_start;
    e["window_end"] = w.window_end;
    e["mean_acc"] = w.mean_acc;
    e["std"] = w.std;
    e["n"] = w.n;
    ws.push_back(std::move(e));
  }
  return detail::dump(j);
}

inline analysis::SpanAccuracyReport span_report_from_csv(const std::string& text, const std::string& name = "<csv>") {
  analysis::SpanAccuracyReport r;
  for (const auto& c : detail::read_csv(text, "window_start,window_end,mean_acc,std,n", name)) {
    r.windows.push_back({detail::parse_size(c[0], name), detail::parse_size(c[1], name),
                         detail::parse_double(c[2], name), detail::parse_double(c[3], name),
                         detail::parse_size(c[4], name)});
  }
  validate(r);
  return r;
}

inline analysis::SpanAccuracyReport span_report_from_json(const std::string& text, const std::string& name = "<json>") {
  auto j = detail::parse_json(text, name);
  analysis::SpanAccuracyReport r;
  try {
    for (const auto& e : j.at("windows")) {
      r.windows.push_back({e.at("window_start").get<std::size_t>(), e.at("window_end").get<std::size_t>(),
                           e.at("mean_acc").get<double>(), e.at("std").get<double>(), e.at("n").get<std::size_t>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(name + ": " + e.what());
  }
  validate(r);
  return r;
}

// ---------------------------------------------------------------------------
// Files

template <typename Report>
std::string render(const Report& r, Format f) {
  return f == Format::json ? to_json(r) : to_csv(r);
}

template <typename Report>
void emit_report(const Report& r, const std::string& path, Format f) {
  detail::spill(path, render(r, f));
}

inline analysis::PositionReport read_position_report(const std::string& path, Format f) {
  auto text = detail::slurp(path);
  return f == Format::json ? position_report_from_json(text, path) : position_report_from_csv(text, path);
}

inline analysis::SegmentSimilarityReport read_segment_report(const std::string& path, Format f) {
  auto text = detail::slurp(path);
  return f == Format::json ? segment_report_from_json(text, path) : segment_report_from_csv(text, path);
}

inline analysis::SpanAccuracyReport read_span_report(const std::string& path, Format f) {
  auto text = detail::slurp(path);
  return f == Format::json ? span_report_from_json(text, path) : span_report_from_csv(text, path);
}

}  // namespace posbench::report
