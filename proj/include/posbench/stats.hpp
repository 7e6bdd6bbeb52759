#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "posbench/error.hpp"

namespace posbench::stats {

// Lower-value quantile: the element at floor((n - 1) * q) of the sorted sample.
template <typename T>
T quantile_lower(std::span<const T> sorted, double q) {
  if (sorted.empty()) throw ValidationError("quantile of an empty sample");
  auto idx = static_cast<std::size_t>(std::floor(static_cast<double>(sorted.size() - 1) * q));
  return sorted[std::min(idx, sorted.size() - 1)];
}

template <typename T>
double mean(std::span<const T> xs) {
  if (xs.empty()) throw ValidationError("mean of an empty sample");
  double acc = 0.0;
  for (const auto& x : xs) acc += static_cast<double>(x);
  return acc / static_cast<double>(xs.size());
}

// Population standard deviation (divides by n).
template <typename T>
double stddev(std::span<const T> xs) {
  double m = mean(xs);
  double acc = 0.0;
  for (const auto& x : xs) {
    double d = static_cast<double>(x) - m;
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(xs.size()));
}

struct Summary {
  double mean = 0.0;
  double std = 0.0;
  double p5 = 0.0;
  double p25 = 0.0;
  double p50 = 0.0;
  double p75 = 0.0;
  double p95 = 0.0;
  std::size_t n = 0;
  friend bool operator==(const Summary&, const Summary&) = default;
};

inline Summary summarize(std::vector<double> xs) {
  std::span<const double> view(xs);
  Summary s;
  s.n = xs.size();
  s.mean = mean(view);
  s.std = stddev(view);
  std::sort(xs.begin(), xs.end());
  s.p5 = quantile_lower(view, 0.05);
  s.p25 = quantile_lower(view, 0.25);
  s.p50 = quantile_lower(view, 0.50);
  s.p75 = quantile_lower(view, 0.75);
  s.p95 = quantile_lower(view, 0.95);
  return s;
}

// Ranks starting at 1; ties receive the average of their rank span.
inline std::vector<double> average_ranks(std::span<const double> xs) {
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(xs.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && xs[order[j + 1]] == xs[order[i]]) ++j;
    double r = (static_cast<double>(i + j) / 2.0) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

inline double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw ValidationError("pearson needs two equal samples of size >= 2");
  double ma = mean(a), mb = mean(b);
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

// Spearman rank correlation (Pearson over average ranks). Zero for constant input.
inline double spearman(std::span<const double> a, std::span<const double> b) {
  auto ra = average_ranks(a);
  auto rb = average_ranks(b);
  return pearson(ra, rb);
}

}  // namespace posbench::stats
