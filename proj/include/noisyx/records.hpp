#pragma once

#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "noisyx/common.hpp"
#include "noisyx/perturb.hpp"
#include "noisyx/saliency.hpp"

namespace noisyx {

struct MethodMetrics {
  std::optional<double> average_precision;
  std::optional<double> robustness;         // vs. the alpha = 0 map
  std::optional<double> noise_correlation;  // |saliency| vs. perturbed indicator
  std::optional<double> ig_residual;
  bool operator==(const MethodMetrics&) const = default;
};

/// One (document x noise x hierarchy x alpha) evaluation.
struct ExperimentRecord {
  std::string doc_id;
  NoiseKind noise = NoiseKind::token_mask;
  HierarchyKind hierarchy = HierarchyKind::random;
  double alpha = 0.0;
  std::size_t n_words = 0;
  std::size_t requested = 0;
  std::size_t actual = 0;
  std::size_t gold = 0;
  std::size_t predicted = 0;
  bool correct = false;
  bool correct_alpha0 = false;
  double predictive = 0.0;  // nats
  double epistemic = 0.0;   // nats
  std::size_t passes = 0;
  std::map<SaliencyMethod, MethodMetrics> methods;

  bool operator==(const ExperimentRecord&) const = default;
};

namespace detail {

inline nlohmann::json opt(const std::optional<double>& v) {
  if (v && std::isfinite(*v)) return *v;
  return nullptr;
}

inline std::optional<double> opt_from(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<double>();
}

}  // namespace detail

inline nlohmann::json to_json(const ExperimentRecord& r) {
  nlohmann::json methods = nlohmann::json::object();
  for (const auto& [m, mm] : r.methods) {
    methods[std::string(to_string(m))] = {{"ap", detail::opt(mm.average_precision)},
                                          {"robustness", detail::opt(mm.robustness)},
                                          {"noise_correlation", detail::opt(mm.noise_correlation)},
                                          {"ig_residual", detail::opt(mm.ig_residual)}};
  }
  nlohmann::json j;
  j["doc_id"] = r.doc_id;
  j["noise"] = to_string(r.noise);
  j["hierarchy"] = to_string(r.hierarchy);
  j["alpha"] = r.alpha;
  j["n_words"] = r.n_words;
  j["requested"] = r.requested;
  j["actual"] = r.actual;
  j["gold"] = r.gold;
  j["predicted"] = r.predicted;
  j["correct"] = r.correct;
  j["correct_alpha0"] = r.correct_alpha0;
  j["predictive_nats"] = r.predictive;
  j["epistemic_nats"] = r.epistemic;
  j["mc_passes"] = r.passes;
  j["methods"] = methods;
  return j;
}

inline ExperimentRecord record_from_json(const nlohmann::json& j) {
  ExperimentRecord r;
  r.doc_id = j.at("doc_id").get<std::string>();
  r.noise = parse_noise(j.at("noise").get<std::string>());
  r.hierarchy = parse_hierarchy(j.at("hierarchy").get<std::string>());
  r.alpha = j.at("alpha").get<double>();
  r.n_words = j.at("n_words").get<std::size_t>();
  r.requested = j.at("requested").get<std::size_t>();
  r.actual = j.at("actual").get<std::size_t>();
  r.gold = j.at("gold").get<std::size_t>();
  r.predicted = j.at("predicted").get<std::size_t>();
  r.correct = j.at("correct").get<bool>();
  r.correct_alpha0 = j.at("correct_alpha0").get<bool>();
  r.predictive = j.at("predictive_nats").get<double>();
  r.epistemic = j.at("epistemic_nats").get<double>();
  r.passes = j.at("mc_passes").get<std::size_t>();
  for (const auto& [name, mm] : j.at("methods").items()) {
    r.methods[parse_method(name)] = {detail::opt_from(mm, "ap"), detail::opt_from(mm, "robustness"),
                                     detail::opt_from(mm, "noise_correlation"),
                                     detail::opt_from(mm, "ig_residual")};
  }
  return r;
}

inline std::vector<ExperimentRecord> load_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open records: " + path);
  std::vector<ExperimentRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw ParseError(path, lineno, e.what());
    }
  }
  return out;
}

/// Saliency dump entry: one (document, method) map with the settings that produced it.
inline nlohmann::json saliency_to_json(const SaliencyMap& m, const AttributionConfig& cfg) {
  return {{"doc_id", m.doc_id},
          {"method", to_string(m.method)},
          {"target_class", m.target_class},
          {"scores", m.scores},
          {"config",
           {{"sg_samples", cfg.sg_samples},
            {"sg_noise_ratio", cfg.sg_noise_ratio},
            {"ig_steps", cfg.ig_steps},
            {"ig_baseline", "zero_embedding"}}}};
}

inline SaliencyMap saliency_from_json(const nlohmann::json& j) {
  SaliencyMap m;
  m.doc_id = j.at("doc_id").get<std::string>();
  m.method = parse_method(j.at("method").get<std::string>());
  m.target_class = j.at("target_class").get<std::size_t>();
  m.scores = j.at("scores").get<std::vector<double>>();
  return m;
}

}  // namespace noisyx
