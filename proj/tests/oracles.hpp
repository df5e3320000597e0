#pragma once

// Straight-line reference implementations used to cross-check the library.
// Everything here is written independently of the production code paths:
// plain loops, long double accumulation, no shared helpers.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "fedarks/param_vector.hpp"
#include "fedarks/rng.hpp"

namespace oracle {

inline double l2_norm(const std::vector<double>& v) {
  long double acc = 0.0L;
  for (double x : v) acc += static_cast<long double>(x) * x;
  return static_cast<double>(std::sqrt(acc));
}

inline std::vector<double> fuse(const std::vector<double>& g,
                                const std::vector<double>& p, double alpha) {
  std::vector<double> out(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    out[i] = alpha * g[i] + (1.0 - alpha) * p[i];
  }
  return out;
}

inline double ratio(double delta_norm, double update_norm) {
  return static_cast<double>(static_cast<long double>(delta_norm) /
                             static_cast<long double>(update_norm));
}

inline double smooth(double raw, double prev, double gamma) {
  return static_cast<double>(static_cast<long double>(gamma) * raw +
                             (1.0L - static_cast<long double>(gamma)) * prev);
}

// Unshifted softmax of -beta*|1-r|, gated entries pinned to zero with the
// mass renormalized over survivors; uniform when everyone is gated.
inline std::vector<double> weights(const std::vector<double>& smoothed,
                                   const std::vector<char>& gated,
                                   double beta) {
  const std::size_t n = smoothed.size();
  std::vector<double> out(n, 0.0);
  long double total = 0.0L;
  std::size_t survivors = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (gated[i]) continue;
    ++survivors;
    total += std::exp(static_cast<long double>(
        -beta * std::fabs(1.0 - smoothed[i])));
  }
  if (survivors == 0) {
    for (auto& w : out) w = 1.0 / static_cast<double>(n);
    return out;
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (gated[i]) continue;
    out[i] = static_cast<double>(
        std::exp(static_cast<long double>(-beta *
                                          std::fabs(1.0 - smoothed[i]))) /
        total);
  }
  return out;
}

// Per-element weighted sum in long double.
inline std::vector<double> weighted_sum(
    const std::vector<std::vector<double>>& vecs,
    const std::vector<double>& w) {
  std::vector<double> out(vecs.front().size(), 0.0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    long double acc = 0.0L;
    for (std::size_t k = 0; k < vecs.size(); ++k) {
      acc += static_cast<long double>(w[k]) * vecs[k][i];
    }
    out[i] = static_cast<double>(acc);
  }
  return out;
}

inline std::vector<double> normalize(const std::vector<double>& x) {
  long double acc = 0.0L;
  for (double v : x) acc += static_cast<long double>(v) * v;
  long double n = std::sqrt(acc);
  if (n < 1e-12L) n = 1e-12L;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = static_cast<double>(x[i] / n);
  }
  return out;
}

inline double sq_dist(const std::vector<double>& a,
                      const std::vector<double>& b) {
  long double acc = 0.0L;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const long double d = static_cast<long double>(a[i]) - b[i];
    acc += d * d;
  }
  return static_cast<double>(acc);
}

inline double rel_err(double got, double want) {
  const double denom = std::max(std::fabs(want), 1e-300);
  return std::fabs(got - want) / denom;
}

}  // namespace oracle

namespace testsup {

// Small nontrivial layout for vector-algebra tests.
inline fedarks::ParamLayout toy_layout() {
  return fedarks::ParamLayout({{"a.w", {3, 4}}, {"a.b", {3}}, {"b.w", {5}}});
}

inline fedarks::ParamVector random_params(const fedarks::ParamLayout& layout,
                                          fedarks::Rng& rng, double scale = 1.0) {
  auto pv = fedarks::ParamVector::zeros(layout);
  for (double& v : pv.values()) v = rng.uniform(-scale, scale);
  return pv;
}

}  // namespace testsup
