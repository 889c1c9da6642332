#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <unordered_set>
#include <vector>

#include "noisyx/metrics.hpp"
#include "noisyx/records.hpp"

namespace noisyx {

// ---------------------------------------------------------------------------
// Per-cell and averaged summaries

struct CellStats {
  std::size_t n = 0;
  double accuracy = kUndefined;
  double predictive = kUndefined;
  double epistemic = kUndefined;
  double perturbed_fraction = kUndefined;  // actual / n_words
  std::map<SaliencyMethod, DefinedMean> map;
  std::map<SaliencyMethod, DefinedMean> robustness;
  std::map<SaliencyMethod, DefinedMean> noise_correlation;

  bool operator==(const CellStats&) const = default;
};

/// Pools records into one summary (micro average).
inline CellStats summarize(const std::vector<const ExperimentRecord*>& recs) {
  CellStats s;
  s.n = recs.size();
  if (recs.empty()) return s;
  double acc = 0, pred = 0, epi = 0, frac = 0;
  std::map<SaliencyMethod, std::vector<std::optional<double>>> ap, rob, nc;
  for (const auto* r : recs) {
    acc += r->correct ? 1.0 : 0.0;
    pred += r->predictive;
    epi += r->epistemic;
    frac += r->n_words ? static_cast<double>(r->actual) / static_cast<double>(r->n_words) : 0.0;
    for (const auto& [m, mm] : r->methods) {
      ap[m].push_back(mm.average_precision);
      rob[m].push_back(mm.robustness);
      nc[m].push_back(mm.noise_correlation);
    }
  }
  const double n = static_cast<double>(recs.size());
  s.accuracy = acc / n;
  s.predictive = pred / n;
  s.epistemic = epi / n;
  s.perturbed_fraction = frac / n;
  for (auto& [m, v] : ap) s.map[m] = mean_defined(v);
  for (auto& [m, v] : rob) s.robustness[m] = mean_defined(v);
  for (auto& [m, v] : nc) s.noise_correlation[m] = mean_defined(v);
  return s;
}

/// Unweighted mean of cell summaries (macro average).
inline CellStats macro_average(const std::vector<CellStats>& cells) {
  CellStats s;
  if (cells.empty()) return s;
  double acc = 0, pred = 0, epi = 0, frac = 0;
  auto fold = [](std::map<SaliencyMethod, DefinedMean>& dst, const std::map<SaliencyMethod, DefinedMean>& src,
                 std::map<SaliencyMethod, std::size_t>& counts) {
    for (const auto& [m, dm] : src) {
      auto& d = dst[m];
      if (counts[m] == 0) d.mean = 0.0;
      d.defined += dm.defined;
      d.undefined += dm.undefined;
      if (dm.defined > 0) {
        d.mean += dm.mean;
        ++counts[m];
      }
    }
  };
  std::map<SaliencyMethod, std::size_t> c_map, c_rob, c_nc;
  for (const auto& c : cells) {
    s.n += c.n;
    acc += c.accuracy;
    pred += c.predictive;
    epi += c.epistemic;
    frac += c.perturbed_fraction;
    fold(s.map, c.map, c_map);
    fold(s.robustness, c.robustness, c_rob);
    fold(s.noise_correlation, c.noise_correlation, c_nc);
  }
  auto finish = [](std::map<SaliencyMethod, DefinedMean>& dst, std::map<SaliencyMethod, std::size_t>& counts) {
    for (auto& [m, d] : dst) d.mean = counts[m] ? d.mean / static_cast<double>(counts[m]) : kUndefined;
  };
  finish(s.map, c_map);
  finish(s.robustness, c_rob);
  finish(s.noise_correlation, c_nc);
  const double n = static_cast<double>(cells.size());
  s.accuracy = acc / n;
  s.predictive = pred / n;
  s.epistemic = epi / n;
  s.perturbed_fraction = frac / n;
  return s;
}

struct CellKey {
  NoiseKind noise;
  HierarchyKind hierarchy;
  double alpha;
  auto operator<=>(const CellKey&) const = default;
};

inline std::map<CellKey, CellStats> aggregate_cells(const std::vector<ExperimentRecord>& records) {
  std::map<CellKey, std::vector<const ExperimentRecord*>> groups;
  for (const auto& r : records) groups[{r.noise, r.hierarchy, r.alpha}].push_back(&r);
  std::map<CellKey, CellStats> out;
  for (const auto& [k, v] : groups) out[k] = summarize(v);
  return out;
}

enum class Averaging { macro, micro };

/// Per (hierarchy, alpha), averaged across noise types.
inline std::map<std::pair<HierarchyKind, double>, CellStats> average_over_noise(
    const std::vector<ExperimentRecord>& records, Averaging how = Averaging::macro) {
  std::map<std::pair<HierarchyKind, double>, CellStats> out;
  if (how == Averaging::micro) {
    std::map<std::pair<HierarchyKind, double>, std::vector<const ExperimentRecord*>> groups;
    for (const auto& r : records) groups[{r.hierarchy, r.alpha}].push_back(&r);
    for (const auto& [k, v] : groups) out[k] = summarize(v);
    return out;
  }
  std::map<std::pair<HierarchyKind, double>, std::vector<CellStats>> groups;
  for (const auto& [k, c] : aggregate_cells(records)) groups[{k.hierarchy, k.alpha}].push_back(c);
  for (const auto& [k, v] : groups) out[k] = macro_average(v);
  return out;
}

/// Per (noise, alpha), averaged across hierarchies.
inline std::map<std::pair<NoiseKind, double>, CellStats> average_over_hierarchy(
    const std::vector<ExperimentRecord>& records, Averaging how = Averaging::macro) {
  std::map<std::pair<NoiseKind, double>, CellStats> out;
  if (how == Averaging::micro) {
    std::map<std::pair<NoiseKind, double>, std::vector<const ExperimentRecord*>> groups;
    for (const auto& r : records) groups[{r.noise, r.alpha}].push_back(&r);
    for (const auto& [k, v] : groups) out[k] = summarize(v);
    return out;
  }
  std::map<std::pair<NoiseKind, double>, std::vector<CellStats>> groups;
  for (const auto& [k, c] : aggregate_cells(records)) groups[{k.noise, k.alpha}].push_back(c);
  for (const auto& [k, v] : groups) out[k] = macro_average(v);
  return out;
}

// ---------------------------------------------------------------------------
// Plausibility-uncertainty correlations

enum class UncertaintyMeasure { predictive, epistemic };
enum class CorrectFilter { none, alpha0_correct, record_correct };
enum class AlphaScope { alpha0_only, all, high };

inline constexpr std::array<double, 2> kHighAlphas = {0.90, 0.95};
inline constexpr std::size_t kMinCorrelationN = 10;

inline std::string_view to_string(UncertaintyMeasure m) {
  return m == UncertaintyMeasure::predictive ? "predictive" : "epistemic";
}
inline std::string_view to_string(CorrectFilter f) {
  switch (f) {
    case CorrectFilter::none: return "all";
    case CorrectFilter::alpha0_correct: return "correct_at_alpha0";
    case CorrectFilter::record_correct: return "correct_per_record";
  }
  return "?";
}
inline std::string_view to_string(AlphaScope s) {
  switch (s) {
    case AlphaScope::alpha0_only: return "before_perturbation";
    case AlphaScope::all: return "including_perturbed";
    case AlphaScope::high: return "high_alpha";
  }
  return "?";
}

struct CorrelationCell {
  SaliencyMethod method;
  UncertaintyMeasure measure;
  std::size_t n = 0;
  bool insufficient = true;           // fewer than kMinCorrelationN qualifying records
  std::optional<CorrelationResult> result;  // nullopt when insufficient or constant input
};

struct CorrelationTable {
  AlphaScope scope = AlphaScope::all;
  CorrectFilter filter = CorrectFilter::none;
  std::size_t n_records = 0;  // records in scope after filtering
  std::vector<CorrelationCell> cells;

  std::string regime() const { return std::string(to_string(scope)) + "/" + std::string(to_string(filter)); }

  const CorrelationCell* find(SaliencyMethod m, UncertaintyMeasure u) const {
    for (const auto& c : cells) {
      if (c.method == m && c.measure == u) return &c;
    }
    return nullptr;
  }
};

inline bool in_scope(double alpha, AlphaScope scope) {
  switch (scope) {
    case AlphaScope::alpha0_only: return alpha == 0.0;
    case AlphaScope::all: return true;
    case AlphaScope::high:
      return std::any_of(kHighAlphas.begin(), kHighAlphas.end(),
                         [&](double a) { return std::abs(a - alpha) < 1e-12; });
  }
  return false;
}

/// Records in scope; alpha = 0 rows repeat across sweep cells, so only the
/// first per document is kept.
inline std::vector<const ExperimentRecord*> select_records(const std::vector<ExperimentRecord>& records,
                                                           AlphaScope scope, CorrectFilter filter) {
  std::vector<const ExperimentRecord*> out;
  std::unordered_set<std::string> seen_alpha0;
  for (const auto& r : records) {
    if (!in_scope(r.alpha, scope)) continue;
    if (filter == CorrectFilter::alpha0_correct && !r.correct_alpha0) continue;
    if (filter == CorrectFilter::record_correct && !r.correct) continue;
    if (r.alpha == 0.0 && !seen_alpha0.insert(r.doc_id).second) continue;
    out.push_back(&r);
  }
  return out;
}

/// Spearman correlation between AP and each uncertainty measure, per method.
inline CorrelationTable report_correlations(const std::vector<ExperimentRecord>& records, AlphaScope scope,
                                            CorrectFilter filter) {
  CorrelationTable table;
  table.scope = scope;
  table.filter = filter;
  const auto selected = select_records(records, scope, filter);
  table.n_records = selected.size();
  std::set<SaliencyMethod> methods;
  for (const auto& r : records)
    for (const auto& [m, _] : r.methods) methods.insert(m);
  for (SaliencyMethod m : methods) {
    for (UncertaintyMeasure u : {UncertaintyMeasure::predictive, UncertaintyMeasure::epistemic}) {
      std::vector<double> ap, unc;
      for (const auto* r : selected) {
        auto it = r->methods.find(m);
        if (it == r->methods.end() || !it->second.average_precision) continue;
        ap.push_back(*it->second.average_precision);
        unc.push_back(u == UncertaintyMeasure::predictive ? r->predictive : r->epistemic);
      }
      CorrelationCell cell{m, u, ap.size(), ap.size() < kMinCorrelationN, std::nullopt};
      if (!cell.insufficient) cell.result = spearman(ap, unc);
      table.cells.push_back(cell);
    }
  }
  return table;
}

/// alpha in {.90, .95}, incorrect predictions included.
inline CorrelationTable report_high_alpha(const std::vector<ExperimentRecord>& records) {
  return report_correlations(records, AlphaScope::high, CorrectFilter::none);
}

inline std::vector<CorrelationTable> correlation_grid(const std::vector<ExperimentRecord>& records) {
  std::vector<CorrelationTable> out;
  for (AlphaScope s : {AlphaScope::alpha0_only, AlphaScope::all})
    for (CorrectFilter f : {CorrectFilter::alpha0_correct, CorrectFilter::record_correct, CorrectFilter::none})
      out.push_back(report_correlations(records, s, f));
  return out;
}

// ---------------------------------------------------------------------------
// Hierarchy comparison

struct PairDelta {
  HierarchyKind first;
  HierarchyKind second;
  double accuracy = 0.0;  // first - second
  double predictive = 0.0;
  double epistemic = 0.0;
  std::map<SaliencyMethod, double> map;
};

struct HierarchyDeltaRow {
  double alpha = 0.0;
  std::vector<PairDelta> pairs;
};

struct SignCount {
  std::size_t negative = 0, zero = 0, positive = 0;
};

struct HierarchyComparison {
  std::vector<HierarchyDeltaRow> rows;  // one per alpha
  // (pair index, metric name) -> sign tally across alphas
  std::map<std::pair<std::size_t, std::string>, SignCount> signs;
};

inline HierarchyComparison compare_hierarchies(const std::vector<ExperimentRecord>& records,
                                               Averaging how = Averaging::macro) {
  std::set<HierarchyKind> present;
  std::set<double> alphas;
  for (const auto& r : records) {
    present.insert(r.hierarchy);
    alphas.insert(r.alpha);
  }
  if (present.size() < 2) throw Error("compare_hierarchies: need records from at least two hierarchies");
  // Pairs in the order human-random, human-gradient, gradient-random.
  std::vector<std::pair<HierarchyKind, HierarchyKind>> pairs;
  for (auto [a, b] : {std::pair{HierarchyKind::human, HierarchyKind::random},
                      std::pair{HierarchyKind::human, HierarchyKind::gradient},
                      std::pair{HierarchyKind::gradient, HierarchyKind::random}}) {
    if (present.contains(a) && present.contains(b)) pairs.emplace_back(a, b);
  }
  const auto means = average_over_noise(records, how);
  HierarchyComparison out;
  auto tally = [&](std::size_t pair, const std::string& metric, double d) {
    auto& s = out.signs[{pair, metric}];
    if (std::isnan(d)) return;
    if (d < 0) ++s.negative;
    else if (d > 0) ++s.positive;
    else ++s.zero;
  };
  for (double alpha : alphas) {
    HierarchyDeltaRow row{alpha, {}};
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      auto ia = means.find({pairs[p].first, alpha});
      auto ib = means.find({pairs[p].second, alpha});
      if (ia == means.end() || ib == means.end())
        throw Error("compare_hierarchies: hierarchy missing at alpha " + std::to_string(alpha));
      const CellStats& a = ia->second;
      const CellStats& b = ib->second;
      PairDelta d{pairs[p].first, pairs[p].second, a.accuracy - b.accuracy, a.predictive - b.predictive,
                  a.epistemic - b.epistemic, {}};
      for (const auto& [m, dm] : a.map) {
        auto jt = b.map.find(m);
        d.map[m] = jt == b.map.end() ? kUndefined : dm.mean - jt->second.mean;
        tally(p, "map_" + std::string(to_string(m)), d.map[m]);
      }
      tally(p, "accuracy", d.accuracy);
      tally(p, "predictive", d.predictive);
      tally(p, "epistemic", d.epistemic);
      row.pairs.push_back(std::move(d));
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV output

namespace detail {

inline std::string num(double v) {
  if (!std::isfinite(v)) return "NA";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline std::ofstream open_csv(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  return out;
}

inline std::set<SaliencyMethod> methods_of(const CellStats& c) {
  std::set<SaliencyMethod> s;
  for (const auto& [m, _] : c.map) s.insert(m);
  return s;
}

inline void stats_header(std::ostream& out, const std::set<SaliencyMethod>& methods) {
  out << "n,accuracy,predictive_nats,epistemic_nats,perturbed_fraction";
  for (auto m : methods) {
    const auto name = to_string(m);
    out << ",map_" << name << ",robustness_" << name << ",noise_corr_" << name << ",undefined_robustness_"
        << name;
  }
  out << '\n';
}

inline void stats_row(std::ostream& out, const CellStats& c, const std::set<SaliencyMethod>& methods) {
  out << c.n << ',' << num(c.accuracy) << ',' << num(c.predictive) << ',' << num(c.epistemic) << ','
      << num(c.perturbed_fraction);
  for (auto m : methods) {
    auto get = [&](const std::map<SaliencyMethod, DefinedMean>& mm) {
      auto it = mm.find(m);
      return it == mm.end() ? DefinedMean{} : it->second;
    };
    out << ',' << num(get(c.map).mean) << ',' << num(get(c.robustness).mean) << ','
        << num(get(c.noise_correlation).mean) << ',' << get(c.robustness).undefined;
  }
  out << '\n';
}

}  // namespace detail

inline void write_cells_csv(const std::map<CellKey, CellStats>& cells, const std::string& path) {
  auto out = detail::open_csv(path);
  const auto methods = cells.empty() ? std::set<SaliencyMethod>{} : detail::methods_of(cells.begin()->second);
  out << "noise,hierarchy,alpha,";
  detail::stats_header(out, methods);
  for (const auto& [k, c] : cells) {
    out << to_string(k.noise) << ',' << to_string(k.hierarchy) << ',' << detail::num(k.alpha) << ',';
    detail::stats_row(out, c, methods);
  }
}

template <class Key>
void write_group_csv(const std::map<std::pair<Key, double>, CellStats>& groups, const std::string& key_name,
                     const std::string& path) {
  auto out = detail::open_csv(path);
  const auto methods = groups.empty() ? std::set<SaliencyMethod>{} : detail::methods_of(groups.begin()->second);
  out << key_name << ",alpha,";
  detail::stats_header(out, methods);
  for (const auto& [k, c] : groups) {
    out << to_string(k.first) << ',' << detail::num(k.second) << ',';
    detail::stats_row(out, c, methods);
  }
}

inline void write_correlations_csv(const std::vector<CorrelationTable>& tables, const std::string& path) {
  auto out = detail::open_csv(path);
  out << "regime,method,uncertainty,n,status,spearman_rho,p_value,records_in_scope\n";
  for (const auto& t : tables) {
    for (const auto& c : t.cells) {
      const char* status = c.insufficient ? "insufficient_n" : (c.result ? "ok" : "undefined");
      out << t.regime() << ',' << to_string(c.method) << ',' << to_string(c.measure) << ',' << c.n << ','
          << status << ',' << (c.result ? detail::num(c.result->coefficient) : "NA") << ','
          << (c.result && c.result->p_value ? detail::num(*c.result->p_value) : "NA") << ',' << t.n_records
          << '\n';
    }
  }
}

inline void write_deltas_csv(const HierarchyComparison& cmp, const std::string& path) {
  auto out = detail::open_csv(path);
  out << "alpha,pair,d_accuracy,d_predictive,d_epistemic";
  std::set<SaliencyMethod> methods;
  for (const auto& row : cmp.rows)
    for (const auto& p : row.pairs)
      for (const auto& [m, _] : p.map) methods.insert(m);
  for (auto m : methods) out << ",d_map_" << to_string(m);
  out << '\n';
  for (const auto& row : cmp.rows) {
    for (const auto& p : row.pairs) {
      out << detail::num(row.alpha) << ',' << to_string(p.first) << "-" << to_string(p.second) << ','
          << detail::num(p.accuracy) << ',' << detail::num(p.predictive) << ',' << detail::num(p.epistemic);
      for (auto m : methods) {
        auto it = p.map.find(m);
        out << ',' << (it == p.map.end() ? "NA" : detail::num(it->second));
      }
      out << '\n';
    }
  }
}

/// Every aggregate the sweep emits, computed from records alone.
struct AggregateReport {
  std::map<CellKey, CellStats> cells;
  std::map<std::pair<HierarchyKind, double>, CellStats> by_hierarchy;
  std::map<std::pair<NoiseKind, double>, CellStats> by_noise;
  std::vector<CorrelationTable> correlations;
  CorrelationTable high_alpha;
  std::optional<HierarchyComparison> hierarchy_deltas;
};

inline AggregateReport build_report(const std::vector<ExperimentRecord>& records,
                                    Averaging how = Averaging::macro) {
  AggregateReport rep;
  rep.cells = aggregate_cells(records);
  rep.by_hierarchy = average_over_noise(records, how);
  rep.by_noise = average_over_hierarchy(records, how);
  rep.correlations = correlation_grid(records);
  rep.high_alpha = report_high_alpha(records);
  std::set<HierarchyKind> hs;
  for (const auto& r : records) hs.insert(r.hierarchy);
  if (hs.size() >= 2) rep.hierarchy_deltas = compare_hierarchies(records, how);
  return rep;
}

inline void write_report(const AggregateReport& rep, const std::string& dir) {
  write_cells_csv(rep.cells, dir + "/cells.csv");
  write_group_csv(rep.by_hierarchy, "hierarchy", dir + "/by_hierarchy.csv");
  write_group_csv(rep.by_noise, "noise", dir + "/by_noise.csv");
  write_correlations_csv(rep.correlations, dir + "/correlations.csv");
  write_correlations_csv({rep.high_alpha}, dir + "/high_alpha.csv");
  if (rep.hierarchy_deltas) write_deltas_csv(*rep.hierarchy_deltas, dir + "/hierarchy_deltas.csv");
}

}  // namespace noisyx
