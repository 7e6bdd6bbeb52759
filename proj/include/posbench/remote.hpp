#pragma once

// Client side of the model-serving bridge protocol: JSON over HTTP,
// one POST per batch.
//
//   POST /embed       {"texts": [...], "pooling": "mean"}  -> {"vectors": [[...]], "dim": n}
//   POST /fill_spans  {"inputs": [...], "spans_per_input": k} -> {"predictions": [[...]]}
//   GET  /capabilities -> {"dim": n, "poolings": [...], "max_input_tokens": m}

#include <chrono>
#include <cmath>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "posbench/embed.hpp"
#include "posbench/error.hpp"

namespace posbench::embed {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path prefix without trailing slash
  std::string url;
};

inline Endpoint parse_endpoint(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ValidationError("endpoint URL needs a scheme: '" + url + "'");
  auto scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") throw ValidationError("unsupported URL scheme '" + scheme + "'");
  auto path_start = url.find('/', scheme_end + 3);
  Endpoint e;
  e.url = url;
  e.origin = url.substr(0, path_start);
  if (e.origin.size() <= scheme_end + 3) throw ValidationError("endpoint URL has no host: '" + url + "'");
  if (path_start != std::string::npos) {
    e.prefix = url.substr(path_start);
    while (!e.prefix.empty() && e.prefix.back() == '/') e.prefix.pop_back();
  }
  return e;
}

// ---------------------------------------------------------------------------
// Wire messages

struct EmbedRequest {
  std::vector<std::string> texts;
  std::string pooling;
  friend bool operator==(const EmbedRequest&, const EmbedRequest&) = default;
};

struct EmbedResponse {
  std::vector<std::vector<double>> vectors;
  std::size_t dim = 0;
  friend bool operator==(const EmbedResponse&, const EmbedResponse&) = default;
};

struct FillSpansRequest {
  std::vector<std::string> inputs;
  std::size_t spans_per_input = 1;
  friend bool operator==(const FillSpansRequest&, const FillSpansRequest&) = default;
};

struct FillSpansResponse {
  std::vector<std::vector<std::string>> predictions;
  friend bool operator==(const FillSpansResponse&, const FillSpansResponse&) = default;
};

struct Capabilities {
  std::size_t dim = 0;
  std::vector<std::string> poolings;
  std::size_t max_input_tokens = 0;
};

inline std::string serialize(const EmbedRequest& r) {
  nlohmann::ordered_json j;
  j["texts"] = r.texts;
  j["pooling"] = r.pooling;
  return j.dump();
}

inline std::string serialize(const EmbedResponse& r) {
  nlohmann::ordered_json j;
  j["vectors"] = r.vectors;
  j["dim"] = r.dim;
  return j.dump();
}

inline std::string serialize(const FillSpansRequest& r) {
  nlohmann::ordered_json j;
  j["inputs"] = r.inputs;
  j["spans_per_input"] = r.spans_per_input;
  return j.dump();
}

inline std::string serialize(const FillSpansResponse& r) {
  nlohmann::ordered_json j;
  j["predictions"] = r.predictions;
  return j.dump();
}

// Parsers throw ValidationError on malformed or inconsistent payloads.
inline EmbedRequest parse_embed_request(const std::string& body) {
  try {
    auto j = nlohmann::json::parse(body);
    return {j.at("texts").get<std::vector<std::string>>(), j.at("pooling").get<std::string>()};
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed embed request: ") + e.what());
  }
}

inline EmbedResponse parse_embed_response(const std::string& body) {
  EmbedResponse r;
  try {
    auto j = nlohmann::json::parse(body);
    r.vectors = j.at("vectors").get<std::vector<std::vector<double>>>();
    r.dim = j.at("dim").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed embed response: ") + e.what());
  }
  for (const auto& v : r.vectors) {
    if (v.size() != r.dim) throw ValidationError("embed response row length differs from dim");
    for (double x : v) {
      if (!std::isfinite(x)) throw ValidationError("embed response contains a non-finite value");
    }
  }
  return r;
}

inline FillSpansRequest parse_fill_spans_request(const std::string& body) {
  try {
    auto j = nlohmann::json::parse(body);
    const auto& k = j.at("spans_per_input");
    if (!k.is_number_unsigned() || k.get<std::size_t>() == 0) {
      throw ValidationError("malformed fill_spans request: spans_per_input must be a positive integer");
    }
    return {j.at("inputs").get<std::vector<std::string>>(), k.get<std::size_t>()};
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed fill_spans request: ") + e.what());
  }
}

inline FillSpansResponse parse_fill_spans_response(const std::string& body) {
  try {
    auto j = nlohmann::json::parse(body);
    return {j.at("predictions").get<std::vector<std::vector<std::string>>>()};
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed fill_spans response: ") + e.what());
  }
}

namespace detail {

inline std::string post(const Endpoint& ep, const std::string& path, const std::string& body,
                        std::chrono::milliseconds timeout, std::size_t batch_index) {
  httplib::Client client(ep.origin);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  auto res = client.Post(ep.prefix + path, body, "application/json");
  if (!res) throw TransportError(ep.url + path, batch_index, httplib::to_string(res.error()));
  if (res->status != 200) {
    throw TransportError(ep.url + path, batch_index, "HTTP " + std::to_string(res->status) + ": " + res->body);
  }
  return res->body;
}

}  // namespace detail

inline Capabilities fetch_capabilities(const std::string& url,
                                       std::chrono::milliseconds timeout = std::chrono::seconds(10)) {
  auto ep = parse_endpoint(url);
  httplib::Client client(ep.origin);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  auto res = client.Get(ep.prefix + "/capabilities");
  if (!res) throw TransportError(url + "/capabilities", 0, httplib::to_string(res.error()));
  if (res->status != 200) throw TransportError(url + "/capabilities", 0, "HTTP " + std::to_string(res->status));
  try {
    auto j = nlohmann::json::parse(res->body);
    return {j.at("dim").get<std::size_t>(), j.at("poolings").get<std::vector<std::string>>(),
            j.at("max_input_tokens").get<std::size_t>()};
  } catch (const nlohmann::json::exception& e) {
    throw TransportError(url + "/capabilities", 0, std::string("malformed reply: ") + e.what());
  }
}

class RemoteBackend final : public EmbeddingBackend {
 public:
  RemoteBackend(std::string url, std::string pooling, std::size_t max_input_tokens = 2048, std::size_t batch_size = 32,
                std::chrono::milliseconds timeout = std::chrono::seconds(60))
      : endpoint_(parse_endpoint(url)),
        pooling_(std::move(pooling)),
        max_input_tokens_(max_input_tokens),
        batch_size_(batch_size),
        timeout_(timeout) {
    if (max_input_tokens_ == 0 || batch_size_ == 0) throw ValidationError("remote backend: sizes must be positive");
  }

  std::vector<EmbeddingVector> embed_batch(const std::vector<std::string>& texts) const override {
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    std::size_t dim = 0;
    for (std::size_t b = 0, batch = 0; b < texts.size(); b += batch_size_, ++batch) {
      EmbedRequest req;
      req.pooling = pooling_;
      for (std::size_t i = b; i < std::min(texts.size(), b + batch_size_); ++i) {
        req.texts.push_back(truncate_to_tokens(texts[i], max_input_tokens_));
      }
      auto body = detail::post(endpoint_, "/embed", serialize(req), timeout_, batch);
      EmbedResponse resp;
      try {
        resp = parse_embed_response(body);
      } catch (const ValidationError& e) {
        throw TransportError(endpoint_.url + "/embed", batch, e.what());
      }
      if (resp.vectors.size() != req.texts.size()) {
        throw TransportError(endpoint_.url + "/embed", batch,
                             "expected " + std::to_string(req.texts.size()) + " vectors, got " +
                                 std::to_string(resp.vectors.size()));
      }
      if (dim == 0) dim = resp.dim;
      if (resp.dim != dim || dim == 0) throw TransportError(endpoint_.url + "/embed", batch, "inconsistent dim");
      for (auto& v : resp.vectors) out.push_back({std::move(v)});
    }
    return out;
  }

  std::size_t max_input_tokens() const override { return max_input_tokens_; }
  std::string describe() const override { return "remote:" + endpoint_.url + ":" + pooling_; }
  const std::string& pooling() const { return pooling_; }

 private:
  Endpoint endpoint_;
  std::string pooling_;
  std::size_t max_input_tokens_;
  std::size_t batch_size_;
  std::chrono::milliseconds timeout_;
};

// Span infilling: one prediction list (spans_per_input strings) per input.
class SpanBackend {
 public:
  virtual ~SpanBackend() = default;
  virtual std::vector<std::vector<std::string>> fill_spans(const std::vector<std::string>& inputs,
                                                           std::size_t spans_per_input) const = 0;
};

class RemoteSpanBackend final : public SpanBackend {
 public:
  explicit RemoteSpanBackend(std::string url, std::size_t batch_size = 32,
                             std::chrono::milliseconds timeout = std::chrono::seconds(60))
      : endpoint_(parse_endpoint(url)), batch_size_(batch_size), timeout_(timeout) {
    if (batch_size_ == 0) throw ValidationError("remote span backend: batch size must be positive");
  }

  std::vector<std::vector<std::string>> fill_spans(const std::vector<std::string>& inputs,
                                                   std::size_t spans_per_input) const override {
    std::vector<std::vector<std::string>> out;
    out.reserve(inputs.size());
    for (std::size_t b = 0, batch = 0; b < inputs.size(); b += batch_size_, ++batch) {
      FillSpansRequest req;
      req.spans_per_input = spans_per_input;
      req.inputs.assign(inputs.begin() + static_cast<std::ptrdiff_t>(b),
                        inputs.begin() + static_cast<std::ptrdiff_t>(std::min(inputs.size(), b + batch_size_)));
      auto body = detail::post(endpoint_, "/fill_spans", serialize(req), timeout_, batch);
      FillSpansResponse resp;
      try {
        resp = parse_fill_spans_response(body);
      } catch (const ValidationError& e) {
        throw TransportError(endpoint_.url + "/fill_spans", batch, e.what());
      }
      if (resp.predictions.size() != req.inputs.size()) {
        throw TransportError(endpoint_.url + "/fill_spans", batch, "prediction count mismatch");
      }
      for (auto& p : resp.predictions) {
        if (p.size() != spans_per_input) {
          throw TransportError(endpoint_.url + "/fill_spans", batch, "wrong number of spans per input");
        }
        out.push_back(std::move(p));
      }
    }
    return out;
  }

 private:
  Endpoint endpoint_;
  std::size_t batch_size_;
  std::chrono::milliseconds timeout_;
};

}  // namespace posbench::embed
