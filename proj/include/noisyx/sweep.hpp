#pragma once

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "noisyx/bridge.hpp"
#include "noisyx/corpus.hpp"
#include "noisyx/metrics.hpp"
#include "noisyx/model.hpp"
#include "noisyx/perturb.hpp"
#include "noisyx/records.hpp"
#include "noisyx/report.hpp"
#include "noisyx/saliency.hpp"
#include "noisyx/uncertainty.hpp"

namespace noisyx {

inline constexpr std::string_view kVersion = "1.0.0";
inline constexpr const char* kWorkersEnv = "NOISYX_WORKERS";

enum class SaliencyTarget { predicted, gold };

struct ExperimentConfig {
  std::string test_corpus;
  std::string pos_lexicon;
  std::size_t num_classes = 0;  // 0 infers from labels
  SynonymPaths synonyms;
  std::string checkpoint;       // built-in model
  std::string bridge_command;   // or an external model
  std::vector<NoiseKind> noise = {kAllNoiseKinds.begin(), kAllNoiseKinds.end()};
  std::vector<HierarchyKind> hierarchies = {HierarchyKind::random, HierarchyKind::human};
  std::vector<double> alphas = {kDefaultAlphas.begin(), kDefaultAlphas.end()};
  std::vector<SaliencyMethod> methods = {kAllMethods.begin(), kAllMethods.end()};
  AttributionConfig attribution;
  std::size_t mc_passes = 20;
  EpistemicMode epistemic_mode = EpistemicMode::mean_softmax;
  SaliencyTarget saliency_target = SaliencyTarget::predicted;
  double relevance_threshold = 0.5;
  std::uint64_t seed = 0;
  std::string output_dir;
  bool correct_only = true;  // which correlation regime the CLI summary prints
  Averaging averaging = Averaging::macro;

  void validate() const {
    if (noise.empty() || hierarchies.empty() || methods.empty())
      throw Error("config: need at least one noise type, hierarchy and method");
    if (alphas.empty()) throw Error("config: alpha list is empty");
    for (double a : alphas) {
      if (!(a >= 0.0 && a < 1.0)) throw Error("config: alpha values must lie in [0,1)");
    }
    if (mc_passes < 1) throw Error("config: mc_passes must be >= 1");
    attribution.validate();
  }

  std::size_t cells_per_document() const { return noise.size() * hierarchies.size() * alphas.size(); }

  nlohmann::json to_json() const {
    std::vector<std::string> n, h, m;
    for (auto k : noise) n.emplace_back(to_string(k));
    for (auto k : hierarchies) h.emplace_back(to_string(k));
    for (auto k : methods) m.emplace_back(to_string(k));
    return {{"test_corpus", test_corpus},
            {"pos_lexicon", pos_lexicon},
            {"num_classes", num_classes},
            {"synonyms",
             {{"equivalence", synonyms.equivalence},
              {"entailment", synonyms.entailment},
              {"mentions", synonyms.mentions},
              {"first_names", synonyms.first_names},
              {"last_names", synonyms.last_names}}},
            {"model", {{"checkpoint", checkpoint}, {"bridge_command", bridge_command}}},
            {"noise", n},
            {"hierarchies", h},
            {"alphas", alphas},
            {"methods", m},
            {"attribution",
             {{"sg_samples", attribution.sg_samples},
              {"sg_noise_ratio", attribution.sg_noise_ratio},
              {"ig_steps", attribution.ig_steps}}},
            {"mc_passes", mc_passes},
            {"epistemic", epistemic_mode == EpistemicMode::mean_softmax ? "mean_softmax" : "mean_of_entropies"},
            {"saliency_target", saliency_target == SaliencyTarget::predicted ? "predicted" : "gold"},
            {"relevance_threshold", relevance_threshold},
            {"seed", seed},
            {"output_dir", output_dir},
            {"correct_only", correct_only},
            {"averaging", averaging == Averaging::macro ? "macro" : "micro"}};
  }

  /// Fields absent from `j` keep their defaults. Relative paths resolve against `base_dir`.
  static ExperimentConfig from_json(const nlohmann::json& j, const std::string& base_dir = "") {
    ExperimentConfig c;
    auto path = [&](const nlohmann::json& obj, const char* key) -> std::string {
      if (!obj.contains(key) || obj[key].is_null()) return "";
      std::string p = obj[key].get<std::string>();
      if (p.empty() || base_dir.empty() || std::filesystem::path(p).is_absolute()) return p;
      return (std::filesystem::path(base_dir) / p).lexically_normal().string();
    };
    try {
      c.test_corpus = path(j, "test_corpus");
      c.pos_lexicon = path(j, "pos_lexicon");
      c.num_classes = j.value("num_classes", std::size_t{0});
      if (j.contains("synonyms")) {
        const auto& s = j["synonyms"];
        c.synonyms = {path(s, "equivalence"), path(s, "entailment"), path(s, "mentions"),
                      path(s, "first_names"), path(s, "last_names")};
      }
      if (j.contains("model")) {
        c.checkpoint = path(j["model"], "checkpoint");
        c.bridge_command = j["model"].value("bridge_command", "");
      }
      if (j.contains("noise")) {
        c.noise.clear();
        for (const auto& s : j["noise"]) c.noise.push_back(parse_noise(s.get<std::string>()));
      }
      if (j.contains("hierarchies")) {
        c.hierarchies.clear();
        for (const auto& s : j["hierarchies"]) c.hierarchies.push_back(parse_hierarchy(s.get<std::string>()));
      }
      if (j.contains("alphas")) c.alphas = j["alphas"].get<std::vector<double>>();
      if (j.contains("methods")) {
        c.methods.clear();
        for (const auto& s : j["methods"]) c.methods.push_back(parse_method(s.get<std::string>()));
      }
      if (j.contains("attribution")) {
        const auto& a = j["attribution"];
        c.attribution.sg_samples = a.value("sg_samples", c.attribution.sg_samples);
        c.attribution.sg_noise_ratio = a.value("sg_noise_ratio", c.attribution.sg_noise_ratio);
        c.attribution.ig_steps = a.value("ig_steps", c.attribution.ig_steps);
      }
      c.mc_passes = j.value("mc_passes", c.mc_passes);
      const std::string epi = j.value("epistemic", "mean_softmax");
      if (epi == "mean_softmax") c.epistemic_mode = EpistemicMode::mean_softmax;
      else if (epi == "mean_of_entropies") c.epistemic_mode = EpistemicMode::mean_of_entropies;
      else throw Error("config: unknown epistemic mode '" + epi + "'");
      const std::string target = j.value("saliency_target", "predicted");
      if (target == "predicted") c.saliency_target = SaliencyTarget::predicted;
      else if (target == "gold") c.saliency_target = SaliencyTarget::gold;
      else throw Error("config: unknown saliency_target '" + target + "'");
      c.relevance_threshold = j.value("relevance_threshold", c.relevance_threshold);
      c.seed = j.value("seed", c.seed);
      c.output_dir = path(j, "output_dir");
      c.correct_only = j.value("correct_only", c.correct_only);
      const std::string avg = j.value("averaging", "macro");
      if (avg == "macro") c.averaging = Averaging::macro;
      else if (avg == "micro") c.averaging = Averaging::micro;
      else throw Error("config: unknown averaging '" + avg + "'");
    } catch (const nlohmann::json::exception& e) {
      throw Error(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
  }

  static ExperimentConfig load(const std::string& file) {
    std::ifstream in(file);
    if (!in) throw Error("cannot open config: " + file);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in, nullptr, true, /*ignore_comments=*/true);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error("config " + file + ": " + e.what());
    }
    return from_json(j, std::filesystem::path(file).parent_path().string());
  }

  /// Hash over everything that influences record content (not the output location).
  std::string hash() const {
    auto j = to_json();
    j.erase("output_dir");
    j.erase("correct_only");
    j.erase("averaging");
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
    return buf;
  }
};

/// Raised when a sweep stops early; completed documents are on disk and a
/// rerun with the same config resumes after them.
class SweepInterrupted : public Error {
 public:
  SweepInterrupted(const std::string& what, std::size_t completed)
      : Error(what), completed_(completed) {}
  std::size_t completed_documents() const noexcept { return completed_; }

 private:
  std::size_t completed_;
};

struct RunOptions {
  std::size_t workers = 0;  // 0 reads NOISYX_WORKERS, defaulting to 1
  bool quiet = true;
};

inline std::size_t resolve_workers(std::size_t requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv(kWorkersEnv)) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<std::size_t>(v);
  }
  return 1;
}

struct DocumentResult {
  std::vector<ExperimentRecord> records;
  std::vector<SaliencyMap> alpha0_maps;
};

struct SweepResult {
  std::vector<ExperimentRecord> records;
  AggregateReport report;
  std::size_t resumed_documents = 0;
  bool gbp_fallback = false;
};

/// Evaluates every sweep cell of one document.
class DocumentEvaluator {
 public:
  DocumentEvaluator(const ExperimentConfig& cfg, const DifferentiableModel& model,
                    const SynonymResources& resources)
      : cfg_(cfg), model_(model), resources_(resources) {}

  bool used_gbp_fallback() const noexcept { return gbp_fallback_.load(); }

  DocumentResult evaluate(const Document& doc) const {
    const auto base_words = doc.surfaces();
    const std::uint64_t mc_seed = derive_seed(cfg_.seed, {doc.id, "mc_dropout"});
    const std::uint64_t sg_seed = derive_seed(cfg_.seed, {doc.id, "smoothgrad"});
    const auto relevant = relevance_mask(doc.annotation, cfg_.relevance_threshold);

    const Evaluation base = evaluate_words(doc, base_words, mc_seed, sg_seed);
    DocumentResult out;
    out.alpha0_maps = base.maps;

    std::optional<std::vector<double>> hotflip;
    for (NoiseKind noise : cfg_.noise) {
      for (HierarchyKind hk : cfg_.hierarchies) {
        const std::uint64_t seed = datapoint_seed(cfg_.seed, doc.id, noise, hk);
        Hierarchy hierarchy;
        switch (hk) {
          case HierarchyKind::random: hierarchy = rank_random(doc, seed); break;
          case HierarchyKind::human: hierarchy = rank_human(doc, seed); break;
          case HierarchyKind::gradient:
            if (!hotflip) hotflip = model_.hotflip_scores(base_words, doc.label);
            hierarchy = rank_gradient(doc, *hotflip);
            break;
        }
        for (double alpha : cfg_.alphas) {
          const PerturbedDoc pd = perturb(doc, noise, hierarchy, alpha, resources_, seed);
          const bool unchanged = pd.words == base_words;
          const Evaluation ev = unchanged ? base : evaluate_words(doc, pd.words, mc_seed, sg_seed);

          ExperimentRecord r;
          r.doc_id = doc.id;
          r.noise = noise;
          r.hierarchy = hk;
          r.alpha = alpha;
          r.n_words = doc.size();
          r.requested = pd.requested_count;
          r.actual = pd.actual_count();
          r.gold = doc.label;
          r.predicted = ev.predicted;
          r.correct = ev.predicted == doc.label;
          r.correct_alpha0 = base.predicted == doc.label;
          r.predictive = ev.predictive;
          r.epistemic = ev.epistemic;
          r.passes = cfg_.mc_passes;
          for (std::size_t k = 0; k < cfg_.methods.size(); ++k) {
            const SaliencyMap& map = ev.maps[k];
            MethodMetrics mm;
            mm.average_precision = average_precision(map.scores, relevant);
            mm.robustness = robustness(map, base.maps[k]);
            mm.noise_correlation = noise_correlation(map, pd.perturbed_mask);
            if (std::isfinite(map.completeness_residual)) mm.ig_residual = map.completeness_residual;
            r.methods[cfg_.methods[k]] = mm;
          }
          out.records.push_back(std::move(r));
        }
      }
    }
    return out;
  }

 private:
  struct Evaluation {
    std::size_t predicted = 0;
    double predictive = 0.0;
    double epistemic = 0.0;
    std::vector<SaliencyMap> maps;  // parallel to cfg_.methods
  };

  Evaluation evaluate_words(const Document& doc, const std::vector<std::string>& words,
                            std::uint64_t mc_seed, std::uint64_t sg_seed) const {
    Evaluation ev;
    const Prediction p = predict(model_, words);
    ev.predicted = p.label;
    ev.predictive = predictive_uncertainty(p.logits);
    ev.epistemic = epistemic_uncertainty(mc_forward(model_, words, cfg_.mc_passes, mc_seed),
                                         cfg_.epistemic_mode);
    const std::size_t target = cfg_.saliency_target == SaliencyTarget::predicted ? p.label : doc.label;
    const SaliencyInput in{doc.id, words, target};
    for (SaliencyMethod m : cfg_.methods) {
      if (m == SaliencyMethod::gbp && !model_.supports_guided()) {
        if (!gbp_fallback_.exchange(true))
          std::cerr << "warning: model has no guided gradient mode; gbp falls back to plain gradients\n";
        ev.maps.push_back(vanilla_gradient(model_, in));
        continue;
      }
      ev.maps.push_back(compute_saliency(model_, in, m, cfg_.attribution, sg_seed));
    }
    return ev;
  }

  const ExperimentConfig& cfg_;
  const DifferentiableModel& model_;
  const SynonymResources& resources_;
  mutable std::atomic<bool> gbp_fallback_{false};
};

namespace detail {

inline std::vector<std::string> read_nonempty_lines(const std::string& path) {
  std::vector<std::string> lines;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

inline void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : lines) out << l << '\n';
}

}  // namespace detail

/// Runs the sweep over an in-memory corpus and model.
///
/// With an output directory, records and alpha-0 saliency maps are appended
/// one whole document at a time in corpus order, and a rerun with the same
/// config resumes after the last complete document. Worker count never
/// changes the output.
inline SweepResult run_sweep(const ExperimentConfig& cfg, const Corpus& corpus,
                             const DifferentiableModel& model, const SynonymResources& resources,
                             const RunOptions& opts = {}) {
  cfg.validate();
  if (model.num_classes() < corpus.num_classes)
    throw Error("sweep: model has fewer classes than the corpus");
  const std::size_t cells = cfg.cells_per_document();
  const std::size_t n_methods = cfg.methods.size();
  const std::size_t n_docs = corpus.documents.size();
  const bool persist = !cfg.output_dir.empty();

  std::string records_path, saliency_path;
  std::vector<ExperimentRecord> records;
  std::size_t start_doc = 0;

  if (persist) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.output_dir);
    const std::string manifest_path = cfg.output_dir + "/manifest.json";
    records_path = cfg.output_dir + "/records.jsonl";
    saliency_path = cfg.output_dir + "/saliency_alpha0.jsonl";
    const nlohmann::json manifest = {{"tool", "noisyx"},
                                     {"version", kVersion},
                                     {"config_hash", cfg.hash()},
                                     {"seed", cfg.seed},
                                     {"mc_passes", cfg.mc_passes},
                                     {"entropy_unit", "nats"},
                                     {"documents", n_docs},
                                     {"cells_per_document", cells},
                                     {"record_file", "records.jsonl"},
                                     {"saliency_file", "saliency_alpha0.jsonl"},
                                     {"config", cfg.to_json()}};
    if (fs::exists(manifest_path)) {
      std::ifstream in(manifest_path);
      const auto old = nlohmann::json::parse(in);
      if (old.value("config_hash", "") != cfg.hash())
        throw Error("sweep: " + cfg.output_dir + " holds a run with a different config; use a new output_dir");
      // Resume: keep only whole documents that match corpus order.
      auto lines = detail::read_nonempty_lines(records_path);
      std::size_t done = lines.size() / cells;
      for (std::size_t d = 0; d < done; ++d) {
        for (std::size_t c = 0; c < cells; ++c) {
          auto rec = record_from_json(nlohmann::json::parse(lines[d * cells + c]));
          if (rec.doc_id != corpus.documents[d].id) {
            done = d;
            break;
          }
          records.push_back(std::move(rec));
        }
        if (done == d) break;
      }
      records.resize(done * cells);
      auto maps = detail::read_nonempty_lines(saliency_path);
      done = std::min(done, maps.size() / n_methods);
      records.resize(done * cells);
      lines.resize(done * cells);
      maps.resize(done * n_methods);
      detail::write_lines(records_path, lines);
      detail::write_lines(saliency_path, maps);
      start_doc = done;
    } else {
      std::ofstream(manifest_path) << manifest.dump(2) << '\n';
      std::ofstream(records_path, std::ios::trunc);
      std::ofstream(saliency_path, std::ios::trunc);
    }
  }

  SweepResult result;
  result.resumed_documents = start_doc;

  DocumentEvaluator evaluator(cfg, model, resources);
  const std::size_t workers = std::max<std::size_t>(1, std::min(resolve_workers(opts.workers), n_docs));

  std::vector<std::optional<DocumentResult>> slots(n_docs);
  std::mutex mu;
  std::condition_variable cv;
  std::atomic<std::size_t> next{start_doc};
  std::atomic<bool> stop{false};
  std::exception_ptr failure;
  std::size_t failed_doc = n_docs;
  std::size_t running = 0;

  auto work = [&] {
    while (!stop.load()) {
      const std::size_t d = next.fetch_add(1);
      if (d >= n_docs) break;
      try {
        DocumentResult r = evaluator.evaluate(corpus.documents[d]);
        std::lock_guard lock(mu);
        slots[d] = std::move(r);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure || d < failed_doc) {
          failure = std::current_exception();
          failed_doc = d;
        }
        stop = true;
      }
      cv.notify_all();
    }
    std::lock_guard lock(mu);
    --running;
    cv.notify_all();
  };

  std::vector<std::thread> pool;
  running = workers;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);

  // Single writer: flush documents strictly in corpus order.
  std::ofstream rec_out, map_out;
  if (persist) {
    rec_out.open(records_path, std::ios::app);
    map_out.open(saliency_path, std::ios::app);
  }
  std::size_t written = start_doc;
  {
    std::unique_lock lock(mu);
    while (written < n_docs) {
      cv.wait(lock, [&] { return slots[written].has_value() || running == 0; });
      if (!slots[written]) break;
      DocumentResult doc = std::move(*slots[written]);
      slots[written].reset();
      lock.unlock();
      if (persist) {
        std::string rec_block, map_block;
        for (const auto& r : doc.records) rec_block += to_json(r).dump() + "\n";
        for (const auto& m : doc.alpha0_maps) map_block += saliency_to_json(m, cfg.attribution).dump() + "\n";
        rec_out << rec_block;
        map_out << map_block;
        rec_out.flush();
        map_out.flush();
      }
      for (auto& r : doc.records) records.push_back(std::move(r));
      ++written;
      if (!opts.quiet && written % 50 == 0) std::cerr << "sweep: " << written << "/" << n_docs << " documents\n";
      lock.lock();
    }
  }
  stop = true;
  for (auto& t : pool) t.join();

  if (failure) {
    std::string what = "unknown error";
    try {
      std::rethrow_exception(failure);
    } catch (const std::exception& e) {
      what = e.what();
    }
    throw SweepInterrupted("sweep interrupted at document " + std::to_string(failed_doc) + " ('" +
                               corpus.documents[failed_doc].id + "'): " + what +
                               (persist ? "; rerun the same config to resume" : ""),
                           written);
  }

  result.gbp_fallback = evaluator.used_gbp_fallback();
  result.report = build_report(records, cfg.averaging);
  result.records = std::move(records);
  if (persist) write_report(result.report, cfg.output_dir);
  return result;
}

/// Loads the model named by the config: a built-in checkpoint or a bridge session.
inline std::unique_ptr<DifferentiableModel> open_model(const ExperimentConfig& cfg) {
  if (!cfg.bridge_command.empty()) return std::make_unique<BridgeModel>(cfg.bridge_command);
  if (cfg.checkpoint.empty()) throw Error("config: model.checkpoint or model.bridge_command is required");
  return std::make_unique<TinyClassifier>(TinyClassifier::load(cfg.checkpoint));
}

/// Loads corpus, resources and model from the paths in `cfg`, then runs the sweep.
inline SweepResult run_sweep(const ExperimentConfig& cfg, const RunOptions& opts = {}) {
  const PosLexicon lexicon = cfg.pos_lexicon.empty() ? PosLexicon{} : PosLexicon::load(cfg.pos_lexicon);
  const Corpus corpus = load_corpus(cfg.test_corpus, Split::test, lexicon, cfg.num_classes);
  const SynonymResources resources = load_synonym_resources(cfg.synonyms);
  const auto model = open_model(cfg);
  return run_sweep(cfg, corpus, *model, resources, opts);
}

}  // namespace noisyx
