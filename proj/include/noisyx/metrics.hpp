#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "noisyx/common.hpp"
#include "noisyx/saliency.hpp"

namespace noisyx {

struct CorrelationResult {
  double coefficient = 0.0;
  std::size_t n = 0;
  std::optional<double> p_value;
};

inline double accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> labels) {
  if (predictions.size() != labels.size()) throw Error("accuracy: length mismatch");
  if (predictions.empty()) throw Error("accuracy: no predictions");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

/// Words ranked by |score| descending, ties by position. nullopt without relevant words.
inline std::optional<double> average_precision(std::span<const double> scores,
                                               const std::vector<bool>& relevant) {
  if (scores.size() != relevant.size()) throw Error("average_precision: length mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(scores[a]) > std::abs(scores[b]);
  });
  double hits = 0.0, sum = 0.0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (relevant[order[k]]) {
      hits += 1.0;
      sum += hits / static_cast<double>(k + 1);
    }
  }
  if (hits == 0.0) return std::nullopt;
  return sum / hits;
}

inline std::vector<bool> relevance_mask(std::span<const double> annotation, double threshold = 0.5) {
  std::vector<bool> out(annotation.size());
  for (std::size_t i = 0; i < annotation.size(); ++i) out[i] = annotation[i] >= threshold;
  return out;
}

/// Mean over defined values; `undefined` counts the rest.
struct DefinedMean {
  double mean = kUndefined;
  std::size_t defined = 0;
  std::size_t undefined = 0;
};

/// Undefined means compare equal to each other.
inline bool operator==(const DefinedMean& a, const DefinedMean& b) {
  const bool both_nan = std::isnan(a.mean) && std::isnan(b.mean);
  return (both_nan || a.mean == b.mean) && a.defined == b.defined && a.undefined == b.undefined;
}

inline DefinedMean mean_defined(std::span<const std::optional<double>> values) {
  DefinedMean m;
  double sum = 0.0;
  for (const auto& v : values) {
    if (v && std::isfinite(*v)) {
      sum += *v;
      ++m.defined;
    } else {
      ++m.undefined;
    }
  }
  if (m.defined > 0) m.mean = sum / static_cast<double>(m.defined);
  return m;
}

inline std::optional<double> t_test_p_value(double r, std::size_t n) {
  if (n < 3) return std::nullopt;
  const double df = static_cast<double>(n - 2);
  if (std::abs(r) >= 1.0) return 0.0;
  const double t = r * std::sqrt(df / (1.0 - r * r));
  boost::math::students_t dist(df);
  return std::clamp(2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t))), 0.0, 1.0);
}

namespace detail {

inline std::optional<double> pearson_coefficient(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace detail

/// Sample Pearson correlation; nullopt when either input is constant.
inline std::optional<CorrelationResult> pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error("pearson: length mismatch");
  if (x.size() < 2) return std::nullopt;
  auto r = detail::pearson_coefficient(x, y);
  if (!r) return std::nullopt;
  return CorrelationResult{*r, x.size(), t_test_p_value(*r, x.size())};
}

/// 1-based ranks with ties sharing their average rank.
inline std::vector<double> midranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

/// Spearman's rho. Two-sided p-value: exact permutation distribution for n < 10,
/// t approximation otherwise. nullopt when either input is constant.
inline std::optional<CorrelationResult> spearman(std::span<const double> x, std::span<const double> y,
                                                 bool with_p_value = true) {
  if (x.size() != y.size()) throw Error("spearman: length mismatch");
  if (x.size() < 2) return std::nullopt;
  const auto rx = midranks(x);
  auto ry = midranks(y);
  auto r = detail::pearson_coefficient(rx, ry);
  if (!r) return std::nullopt;
  CorrelationResult out{*r, x.size(), std::nullopt};
  if (!with_p_value) return out;
  if (x.size() >= 10) {
    out.p_value = t_test_p_value(*r, x.size());
    return out;
  }
  std::sort(ry.begin(), ry.end());
  std::size_t extreme = 0, total = 0;
  do {
    const auto rp = detail::pearson_coefficient(rx, ry);
    ++total;
    if (rp && std::abs(*rp) >= std::abs(*r) - 1e-12) ++extreme;
  } while (std::next_permutation(ry.begin(), ry.end()));
  out.p_value = static_cast<double>(extreme) / static_cast<double>(total);
  return out;
}

/// Pearson correlation between two maps of the same document and method.
inline std::optional<double> robustness(const SaliencyMap& perturbed, const SaliencyMap& base) {
  if (perturbed.doc_id != base.doc_id || perturbed.method != base.method)
    throw Error("robustness: maps belong to different documents or methods");
  if (perturbed.scores.size() != base.scores.size())
    throw Error("robustness: maps differ in length");
  auto r = pearson(perturbed.scores, base.scores);
  if (!r) return std::nullopt;
  return r->coefficient;
}

/// Pearson correlation between |saliency| and the 0/1 perturbed-word indicator.
inline std::optional<double> noise_correlation(const SaliencyMap& map, const std::vector<bool>& perturbed_mask) {
  if (map.scores.size() != perturbed_mask.size()) throw Error("noise_correlation: length mismatch");
  std::vector<double> mag(map.scores.size()), ind(map.scores.size());
  for (std::size_t i = 0; i < mag.size(); ++i) {
    mag[i] = std::abs(map.scores[i]);
    ind[i] = perturbed_mask[i] ? 1.0 : 0.0;
  }
  auto r = pearson(mag, ind);
  if (!r) return std::nullopt;
  return r->coefficient;
}

/// Survival function of the Kolmogorov distribution.
inline double kolmogorov_q(double lambda) {
  if (lambda < 0.2) return 1.0;
  double sum = 0.0;
  for (int k = 1; k <= 200; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    sum += (k % 2 == 1 ? term : -term);
    if (term < 1e-18) break;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// One-sample KS test against a normal with the sample mean and standard deviation.
inline KsResult ks_normality(std::span<const double> samples) {
  const std::size_t n = samples.size();
  if (n < 8) throw Error("ks_normality: need at least 8 samples");
  double mean = 0.0;
  for (double v : samples) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : samples) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n - 1);
  if (!(var > 0.0)) throw Error("ks_normality: zero variance");
  const double sd = std::sqrt(var);
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  double d = 0.0;
  const double nn = static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double f = 0.5 * std::erfc(-(sorted[i] - mean) / (sd * std::sqrt(2.0)));
    d = std::max({d, static_cast<double>(i + 1) / nn - f, f - static_cast<double>(i) / nn});
  }
  return {d, kolmogorov_q(std::sqrt(nn) * d)};
}

}  // namespace noisyx
