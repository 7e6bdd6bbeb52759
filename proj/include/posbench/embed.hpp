#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "posbench/error.hpp"
#include "posbench/probes.hpp"

namespace posbench::embed {

struct EmbeddingVector {
  std::vector<double> values;

  std::size_t dim() const { return values.size(); }
  double norm() const {
    double s = 0.0;
    for (double v : values) s += v * v;
    return std::sqrt(s);
  }
  friend bool operator==(const EmbeddingVector&, const EmbeddingVector&) = default;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ValidationError("cosine: dimension mismatch (" + std::to_string(a.size()) + " vs " +
                          std::to_string(b.size()) + ")");
  }
  double na = std::sqrt(dot(a, a));
  double nb = std::sqrt(dot(b, b));
  if (na == 0.0 || nb == 0.0) throw ValidationError("cosine: zero vector");
  double c = dot(a, b) / (na * nb);
  return std::clamp(c, -1.0, 1.0);
}

inline double cosine(const EmbeddingVector& a, const EmbeddingVector& b) { return cosine(a.values, b.values); }

// ---------------------------------------------------------------------------
// Toy encoder: hashed token table + (position-weighted) mean pooling.

struct Pooling {
  enum class Kind : std::uint8_t { mean = 0, position_weighted = 1 };
  Kind kind = Kind::mean;
  double decay = 0.0;  // position_weighted only

  static Pooling mean() { return {Kind::mean, 0.0}; }
  static Pooling position_weighted(double decay) { return {Kind::position_weighted, decay}; }

  // w_t = exp(-decay * t / n); mean pooling uses w_t = 1.
  double weight(std::size_t t, std::size_t n) const {
    if (kind == Kind::mean) return 1.0;
    return std::exp(-decay * static_cast<double>(t) / static_cast<double>(n));
  }

  friend bool operator==(const Pooling&, const Pooling&) = default;
};

inline std::string to_string(const Pooling& p) {
  if (p.kind == Pooling::Kind::mean) return "mean";
  char buf[64];
  std::snprintf(buf, sizeof buf, "position_weighted(%.6g)", p.decay);
  return buf;
}

struct ToyEncoderParams {
  std::size_t dim = 0;
  std::size_t buckets = 0;
  std::vector<double> table;  // buckets x dim, row-major
  Pooling pooling;
  bool normalize = false;

  std::span<double> row(std::size_t b) { return {table.data() + b * dim, dim}; }
  std::span<const double> row(std::size_t b) const { return {table.data() + b * dim, dim}; }

  friend bool operator==(const ToyEncoderParams&, const ToyEncoderParams&) = default;
};

inline void validate(const ToyEncoderParams& p) {
  if (p.dim == 0 || p.buckets == 0) throw ValidationError("toy encoder: dim and buckets must be positive");
  if (p.table.size() != p.dim * p.buckets) throw ValidationError("toy encoder: table size mismatch");
  if (!(p.pooling.decay >= 0.0) || !std::isfinite(p.pooling.decay)) {
    throw ValidationError("toy encoder: decay must be finite and >= 0");
  }
}

// Table entries i.i.d. N(0, 1).
inline ToyEncoderParams make_toy_params(std::size_t dim, std::size_t buckets, Pooling pooling, bool normalize,
                                        std::uint64_t seed) {
  ToyEncoderParams p;
  p.dim = dim;
  p.buckets = buckets;
  p.pooling = pooling;
  p.normalize = normalize;
  p.table.resize(dim * buckets);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (auto& x : p.table) x = gauss(rng);
  validate(p);
  return p;
}

// FNV-1a (64-bit) over the token's UTF-8 bytes.
inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint32_t bucket_of(std::string_view surface, std::size_t buckets) {
  return static_cast<std::uint32_t>(fnv1a(surface) % buckets);
}

// Bucket ids for the first `max_tokens` tokens.
inline std::vector<std::uint32_t> encode_tokens(std::span<const probes::Token> tokens, std::size_t buckets,
                                                std::size_t max_tokens) {
  std::size_t n = std::min(tokens.size(), max_tokens);
  std::vector<std::uint32_t> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = bucket_of(tokens[i].surface, buckets);
  return ids;
}

// Unnormalized pooled vector v = sum_t w_t row(id_t) / sum_t w_t. Mean pooling
// sums rows in bucket order, so it is exactly invariant to token order.
inline std::vector<double> pool(const ToyEncoderParams& params, std::span<const std::uint32_t> ids) {
  if (ids.empty()) throw ValidationError("toy_forward: empty token sequence");
  std::vector<double> v(params.dim, 0.0);
  if (params.pooling.kind == Pooling::Kind::mean) {
    std::vector<std::uint32_t> sorted(ids.begin(), ids.end());
    std::sort(sorted.begin(), sorted.end());
    for (auto id : sorted) {
      auto r = params.row(id);
      for (std::size_t k = 0; k < params.dim; ++k) v[k] += r[k];
    }
    for (auto& x : v) x /= static_cast<double>(ids.size());
    return v;
  }
  double wsum = 0.0;
  const std::size_t n = ids.size();
  for (std::size_t t = 0; t < n; ++t) {
    double w = params.pooling.weight(t, n);
    wsum += w;
    auto r = params.row(ids[t]);
    for (std::size_t k = 0; k < params.dim; ++k) v[k] += w * r[k];
  }
  for (auto& x : v) x /= wsum;
  return v;
}

inline EmbeddingVector toy_forward(const ToyEncoderParams& params, std::span<const std::uint32_t> ids) {
  auto v = pool(params, ids);
  if (params.normalize) {
    double n = std::sqrt(dot(v, v));
    if (n > 0.0) {
      for (auto& x : v) x /= n;
    }
  }
  return {std::move(v)};
}

inline EmbeddingVector toy_forward(const ToyEncoderParams& params, std::span<const probes::Token> tokens) {
  auto ids = encode_tokens(tokens, params.buckets, tokens.size());
  return toy_forward(params, std::span<const std::uint32_t>(ids));
}

// ---------------------------------------------------------------------------
// Params file: fixed little-endian header followed by the raw table.

inline constexpr char kParamsMagic[8] = {'P', 'B', 'T', 'O', 'Y', 'E', 'N', 'C'};
inline constexpr std::uint32_t kParamsVersion = 1;

namespace detail {
template <typename T>
void put(std::ostream& out, T v) {
  static_assert(std::endian::native == std::endian::little, "params files are little-endian");
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
template <typename T>
T get(std::istream& in, const std::string& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw ValidationError("truncated params file '" + path + "'");
  return v;
}
}  // namespace detail

inline void save_params(const std::string& path, const ToyEncoderParams& p) {
  validate(p);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write '" + path + "'");
  out.write(kParamsMagic, sizeof kParamsMagic);
  detail::put<std::uint32_t>(out, kParamsVersion);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(p.dim));
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(p.buckets));
  detail::put<std::uint8_t>(out, static_cast<std::uint8_t>(p.pooling.kind));
  detail::put<std::uint8_t>(out, p.normalize ? 1 : 0);
  detail::put<std::uint16_t>(out, 0);
  detail::put<double>(out, p.pooling.decay);
  out.write(reinterpret_cast<const char*>(p.table.data()), static_cast<std::streamsize>(p.table.size() * sizeof(double)));
  if (!out) throw ValidationError("write failed for '" + path + "'");
}

inline ToyEncoderParams load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open params file '" + path + "'");
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kParamsMagic, sizeof magic) != 0) {
    throw ValidationError("'" + path + "' is not a toy encoder params file");
  }
  auto version = detail::get<std::uint32_t>(in, path);
  if (version != kParamsVersion) throw ValidationError("unsupported params version " + std::to_string(version));
  ToyEncoderParams p;
  p.dim = detail::get<std::uint32_t>(in, path);
  p.buckets = detail::get<std::uint32_t>(in, path);
  auto kind = detail::get<std::uint8_t>(in, path);
  if (kind > 1) throw ValidationError("unknown pooling kind in '" + path + "'");
  p.pooling.kind = static_cast<Pooling::Kind>(kind);
  p.normalize = detail::get<std::uint8_t>(in, path) != 0;
  detail::get<std::uint16_t>(in, path);
  p.pooling.decay = detail::get<double>(in, path);
  p.table.resize(p.dim * p.buckets);
  if (!in.read(reinterpret_cast<char*>(p.table.data()), static_cast<std::streamsize>(p.table.size() * sizeof(double)))) {
    throw ValidationError("truncated params table in '" + path + "'");
  }
  validate(p);
  return p;
}

// ---------------------------------------------------------------------------
// Backends

class EmbeddingBackend {
 public:
  virtual ~EmbeddingBackend() = default;
  // One vector per text, in order. Texts are truncated to max_input_tokens() tokens.
  virtual std::vector<EmbeddingVector> embed_batch(const std::vector<std::string>& texts) const = 0;
  virtual std::size_t max_input_tokens() const = 0;
  virtual std::string describe() const = 0;
};

class NativeBackend final : public EmbeddingBackend {
 public:
  explicit NativeBackend(ToyEncoderParams params, std::size_t max_input_tokens = 2048,
                         const probes::Tokenizer& tokenizer = probes::default_tokenizer())
      : params_(std::move(params)), max_input_tokens_(max_input_tokens), tokenizer_(&tokenizer) {
    validate(params_);
    if (max_input_tokens_ == 0) throw ValidationError("max_input_tokens must be positive");
  }

  std::vector<std::uint32_t> encode(std::string_view text) const {
    auto tokens = tokenizer_->tokenize(text);
    return encode_tokens(tokens, params_.buckets, max_input_tokens_);
  }

  EmbeddingVector embed(std::string_view text) const {
    auto ids = encode(text);
    if (ids.empty()) throw ValidationError("cannot embed a text without tokens");
    return toy_forward(params_, std::span<const std::uint32_t>(ids));
  }

  std::vector<EmbeddingVector> embed_batch(const std::vector<std::string>& texts) const override {
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(embed(t));
    return out;
  }

  std::size_t max_input_tokens() const override { return max_input_tokens_; }
  std::string describe() const override { return "native:" + to_string(params_.pooling); }
  const ToyEncoderParams& params() const { return params_; }
  const probes::Tokenizer& tokenizer() const { return *tokenizer_; }

 private:
  ToyEncoderParams params_;
  std::size_t max_input_tokens_;
  const probes::Tokenizer* tokenizer_;
};

// Text prefix covering the first `max_tokens` tokens (the whole text if shorter).
inline std::string truncate_to_tokens(std::string_view text, std::size_t max_tokens,
                                      const probes::Tokenizer& tokenizer = probes::default_tokenizer()) {
  auto tokens = tokenizer.tokenize(text);
  if (tokens.size() <= max_tokens) return std::string(text);
  if (max_tokens == 0) return {};
  return utf8::substr(text, 0, tokens[max_tokens - 1].char_end);
}

}  // namespace posbench::embed
