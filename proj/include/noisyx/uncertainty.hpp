#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "noisyx/common.hpp"

namespace noisyx {

/// All entropies are in nats.
struct UncertaintyRecord {
  double predictive = 0.0;
  double epistemic = 0.0;
  std::size_t passes = 0;
  std::size_t predicted_class = 0;
};

enum class EpistemicMode {
  mean_softmax,     // entropy of the MC-mean distribution
  mean_of_entropies // average per-pass entropy; sensitivity check only
};

inline double entropy(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return std::max(0.0, h);
}

/// Entropy of softmax(logits), via log-sum-exp.
inline double predictive_uncertainty(std::span<const double> logits) {
  if (logits.empty()) throw Error("predictive_uncertainty: no logits");
  double mx = logits[0];
  for (double z : logits) {
    if (!std::isfinite(z)) throw Error("predictive_uncertainty: non-finite logit");
    mx = std::max(mx, z);
  }
  // H = log(s) - sum_i p_i d_i with d_i = z_i - max, s = sum_i exp(d_i)
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - mx);
  double expected = 0.0;
  for (double z : logits) expected += std::exp(z - mx) / sum * (z - mx);
  const double h = std::log(sum) - expected;
  return std::clamp(h, 0.0, std::log(static_cast<double>(logits.size())));
}

inline double epistemic_uncertainty(const std::vector<std::vector<double>>& mc_softmaxes,
                                    EpistemicMode mode = EpistemicMode::mean_softmax) {
  if (mc_softmaxes.empty()) throw Error("epistemic_uncertainty: no MC passes");
  const std::size_t c = mc_softmaxes.front().size();
  for (const auto& v : mc_softmaxes) {
    if (v.size() != c) throw Error("epistemic_uncertainty: ragged softmax stack");
    double s = 0.0;
    for (double p : v) s += p;
    if (std::abs(s - 1.0) > 1e-6) throw Error("epistemic_uncertainty: vector does not sum to 1");
  }
  const double t = static_cast<double>(mc_softmaxes.size());
  if (mode == EpistemicMode::mean_of_entropies) {
    double h = 0.0;
    for (const auto& v : mc_softmaxes) h += entropy(v);
    return h / t;
  }
  std::vector<double> mean(c, 0.0);
  for (const auto& v : mc_softmaxes)
    for (std::size_t i = 0; i < c; ++i) mean[i] += v[i];
  for (double& m : mean) m /= t;
  return std::min(entropy(mean), std::log(static_cast<double>(c)));
}

}  // namespace noisyx
