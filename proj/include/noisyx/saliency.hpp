#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "noisyx/common.hpp"
#include "noisyx/model.hpp"

namespace noisyx {

enum class SaliencyMethod { gbp, ixg, ig, sg };

inline constexpr std::array<SaliencyMethod, 4> kAllMethods = {SaliencyMethod::gbp, SaliencyMethod::ixg,
                                                              SaliencyMethod::ig, SaliencyMethod::sg};
inline constexpr std::array<std::string_view, 4> kMethodNames = {"gbp", "ixg", "ig", "sg"};

inline std::string_view to_string(SaliencyMethod m) { return kMethodNames[static_cast<std::size_t>(m)]; }

inline SaliencyMethod parse_method(std::string_view s) {
  for (std::size_t i = 0; i < kMethodNames.size(); ++i) {
    if (kMethodNames[i] == s) return static_cast<SaliencyMethod>(i);
  }
  throw Error("unknown saliency method '" + std::string(s) + "'");
}

class UnsupportedMethod : public Error {
 public:
  using Error::Error;
};

struct AttributionConfig {
  std::size_t sg_samples = 25;
  double sg_noise_ratio = 0.15;
  std::size_t ig_steps = 50;

  void validate() const {
    if (sg_samples < 1) throw Error("AttributionConfig: sg_samples must be >= 1");
    if (ig_steps < 2) throw Error("AttributionConfig: ig_steps must be >= 2");
    if (!(sg_noise_ratio > 0.0)) throw Error("AttributionConfig: sg_noise_ratio must be > 0");
  }
};

struct SaliencyMap {
  std::string doc_id;
  SaliencyMethod method = SaliencyMethod::gbp;
  std::vector<double> scores;  // one per word, signed
  std::size_t target_class = 0;
  /// |sum(attr) - (F(x) - F(baseline))| / max(|F(x) - F(baseline)|, 1e-12); IG only.
  double completeness_residual = kUndefined;
};

/// Sums each token row over embedding dimensions, then averages tokens within each word.
inline std::vector<double> reduce_to_words(const Matrix& token_dim_attr,
                                           const std::vector<TokenSpan>& spans) {
  std::size_t expect = 0;
  for (const auto& s : spans) {
    if (s.begin != expect || s.end <= s.begin)
      throw Error("reduce_to_words: spans leave a gap, overlap or are empty");
    expect = s.end;
  }
  if (expect != token_dim_attr.rows())
    throw Error("reduce_to_words: spans cover " + std::to_string(expect) + " of " +
                std::to_string(token_dim_attr.rows()) + " tokens");
  std::vector<double> words;
  words.reserve(spans.size());
  for (const auto& s : spans) {
    double total = 0.0;
    for (std::size_t t = s.begin; t < s.end; ++t) {
      for (double v : token_dim_attr.row(t)) total += v;
    }
    words.push_back(total / static_cast<double>(s.end - s.begin));
  }
  return words;
}

struct SaliencyInput {
  std::string doc_id;
  std::vector<std::string> words;
  std::size_t target_class = 0;
};

inline SaliencyMap make_map(const SaliencyInput& in, SaliencyMethod m, std::vector<double> scores) {
  for (double v : scores) {
    if (!std::isfinite(v)) throw Error("saliency: non-finite attribution for '" + in.doc_id + "'");
  }
  return {in.doc_id, m, std::move(scores), in.target_class, kUndefined};
}

/// Plain input gradient. Tagged gbp because it stands in for guided
/// backpropagation when a model cannot clip gradients.
inline SaliencyMap vanilla_gradient(const DifferentiableModel& model, const SaliencyInput& in) {
  const auto x = model.embed(in.words);
  const Matrix g = model.gradient(x.embeddings, in.target_class, GradientMode::standard);
  return make_map(in, SaliencyMethod::gbp, reduce_to_words(g, x.spans));
}

inline SaliencyMap guided_backprop(const DifferentiableModel& model, const SaliencyInput& in) {
  if (!model.supports_guided()) throw UnsupportedMethod("model does not support guided gradients");
  const auto x = model.embed(in.words);
  const Matrix g = model.gradient(x.embeddings, in.target_class, GradientMode::guided);
  return make_map(in, SaliencyMethod::gbp, reduce_to_words(g, x.spans));
}

inline SaliencyMap input_x_gradient(const DifferentiableModel& model, const SaliencyInput& in) {
  const auto x = model.embed(in.words);
  Matrix g = model.gradient(x.embeddings, in.target_class, GradientMode::standard);
  for (std::size_t k = 0; k < g.size(); ++k) g.data()[k] *= x.embeddings.data()[k];
  return make_map(in, SaliencyMethod::ixg, reduce_to_words(g, x.spans));
}

/// Midpoint-rule path integral from the zero embedding to the input.
inline SaliencyMap integrated_gradients(const DifferentiableModel& model, const SaliencyInput& in,
                                        const AttributionConfig& cfg) {
  cfg.validate();
  const auto x = model.embed(in.words);
  const Matrix& input = x.embeddings;
  Matrix accum(input.rows(), input.cols());
  Matrix point(input.rows(), input.cols());
  const double m = static_cast<double>(cfg.ig_steps);
  for (std::size_t k = 0; k < cfg.ig_steps; ++k) {
    const double alpha = (static_cast<double>(k) + 0.5) / m;
    for (std::size_t i = 0; i < input.size(); ++i) point.data()[i] = alpha * input.data()[i];
    const Matrix g = model.gradient(point, in.target_class, GradientMode::standard);
    for (std::size_t i = 0; i < g.size(); ++i) accum.data()[i] += g.data()[i];
  }
  double total = 0.0;
  for (std::size_t i = 0; i < accum.size(); ++i) {
    accum.data()[i] *= input.data()[i] / m;
    total += accum.data()[i];
  }
  const Matrix baseline(input.rows(), input.cols());
  const double delta = model.forward(input)[in.target_class] - model.forward(baseline)[in.target_class];
  SaliencyMap map = make_map(in, SaliencyMethod::ig, reduce_to_words(accum, x.spans));
  map.completeness_residual = std::abs(total - delta) / std::max(std::abs(delta), 1e-12);
  return map;
}

/// Mean gradient over Gaussian-noised copies of the input embeddings. The noise
/// standard deviation is sg_noise_ratio times the input's coordinate range.
inline SaliencyMap smoothgrad(const DifferentiableModel& model, const SaliencyInput& in,
                              const AttributionConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const auto x = model.embed(in.words);
  const Matrix& input = x.embeddings;
  const auto [lo, hi] = std::minmax_element(input.data().begin(), input.data().end());
  const double sigma = cfg.sg_noise_ratio * (*hi - *lo);
  Rng rng(derive_seed(seed, {"smoothgrad"}));
  Matrix accum(input.rows(), input.cols());
  Matrix noisy(input.rows(), input.cols());
  for (std::size_t s = 0; s < cfg.sg_samples; ++s) {
    for (std::size_t i = 0; i < input.size(); ++i)
      noisy.data()[i] = input.data()[i] + sigma * rng.normal();
    const Matrix g = model.gradient(noisy, in.target_class, GradientMode::standard);
    for (std::size_t i = 0; i < g.size(); ++i) accum.data()[i] += g.data()[i];
  }
  for (double& v : accum.data()) v /= static_cast<double>(cfg.sg_samples);
  return make_map(in, SaliencyMethod::sg, reduce_to_words(accum, x.spans));
}

inline SaliencyMap compute_saliency(const DifferentiableModel& model, const SaliencyInput& in,
                                    SaliencyMethod method, const AttributionConfig& cfg,
                                    std::uint64_t seed) {
  switch (method) {
    case SaliencyMethod::gbp: return guided_backprop(model, in);
    case SaliencyMethod::ixg: return input_x_gradient(model, in);
    case SaliencyMethod::ig: return integrated_gradients(model, in, cfg);
    case SaliencyMethod::sg: return smoothgrad(model, in, cfg, seed);
  }
  throw Error("unreachable");
}

}  // namespace noisyx
