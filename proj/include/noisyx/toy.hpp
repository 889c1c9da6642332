#pragma once

// Synthetic three-class review corpus with planted, annotated sentiment markers.
// Label 0 documents are neutral filler, labels 1 and 2 carry positive or
// negative marker adjectives. Filler words are drawn independently of the label.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "noisyx/corpus.hpp"
#include "noisyx/synonym.hpp"

namespace noisyx::toy {

struct Entry {
  const char* word;
  PosTag pos;
};

inline const std::vector<std::string> kPositive = {"brilliant", "superb", "delightful",
                                                   "wonderful", "charming", "splendid"};
inline const std::vector<std::string> kNegative = {"dreadful", "awful", "tedious",
                                                   "clumsy",   "dismal", "shoddy"};

inline const std::vector<Entry> kFiller = {
    {"film", PosTag::NOUN},     {"movie", PosTag::NOUN},     {"story", PosTag::NOUN},
    {"tale", PosTag::NOUN},     {"plot", PosTag::NOUN},      {"actor", PosTag::NOUN},
    {"scene", PosTag::NOUN},    {"director", PosTag::NOUN},  {"music", PosTag::NOUN},
    {"camera", PosTag::NOUN},   {"ending", PosTag::NOUN},    {"script", PosTag::NOUN},
    {"cast", PosTag::NOUN},     {"audience", PosTag::NOUN},  {"screen", PosTag::NOUN},
    {"picture", PosTag::NOUN},  {"watched", PosTag::VERB},   {"saw", PosTag::VERB},
    {"found", PosTag::VERB},    {"thought", PosTag::VERB},   {"seemed", PosTag::VERB},
    {"appeared", PosTag::VERB}, {"showed", PosTag::VERB},    {"made", PosTag::VERB},
    {"was", PosTag::VERB},      {"is", PosTag::VERB},        {"really", PosTag::ADV},
    {"quite", PosTag::ADV},     {"rather", PosTag::ADV},     {"fairly", PosTag::ADV},
    {"long", PosTag::ADJ},      {"recent", PosTag::ADJ},     {"new", PosTag::ADJ},
    {"the", PosTag::DET},       {"a", PosTag::DET},          {"an", PosTag::DET},
    {"this", PosTag::DET},      {"that", PosTag::DET},       {"of", PosTag::OTHER},
    {"in", PosTag::OTHER},      {"with", PosTag::OTHER},     {"and", PosTag::OTHER},
    {"it", PosTag::OTHER},      {"we", PosTag::OTHER},       {".", PosTag::PUNCT},
    {",", PosTag::PUNCT},       {"!", PosTag::PUNCT},        {"?", PosTag::PUNCT},
};

/// Filler equivalence classes used as the synonym lexicon.
inline const std::vector<std::vector<std::string>> kFillerSynonyms = {
    {"film", "movie", "picture"}, {"story", "tale", "plot"}, {"actor", "cast"},
    {"watched", "saw"},           {"found", "thought"},      {"seemed", "appeared"},
    {"really", "quite"},          {"rather", "fairly"},      {"recent", "new"},
};

struct ToyConfig {
  std::size_t documents = 200;
  std::size_t min_words = 20;
  std::size_t max_words = 30;
  std::size_t min_markers = 2;
  std::size_t max_markers = 4;
  /// Fraction of filler slots written as [MASK] or [UNK]. Training data uses
  /// this so the special tokens carry no class signal, as in a pretrained model.
  double special_rate = 0.0;
  std::uint64_t seed = 7;
};

inline Corpus make_corpus(const ToyConfig& cfg, Split split) {
  if (cfg.min_words < cfg.max_markers + 1 || cfg.min_words > cfg.max_words || cfg.min_markers < 1 ||
      cfg.min_markers > cfg.max_markers)
    throw Error("toy: inconsistent length or marker bounds");
  Rng rng(derive_seed(cfg.seed, {"toy", to_string(split)}));
  Corpus corpus;
  corpus.split = split;
  corpus.num_classes = 3;
  for (std::size_t i = 0; i < cfg.documents; ++i) {
    const std::size_t label = i % 3;
    const std::size_t n = cfg.min_words + rng.below(cfg.max_words - cfg.min_words + 1);
    std::vector<std::string> words;
    std::vector<PosTag> pos;
    std::vector<double> annotation;
    for (std::size_t k = 0; k < n; ++k) {
      if (rng.bernoulli(cfg.special_rate)) {
        words.emplace_back(rng.bernoulli(0.5) ? "[MASK]" : "[UNK]");
        pos.push_back(PosTag::OTHER);
      } else {
        const Entry& e = kFiller[rng.below(kFiller.size())];
        words.emplace_back(e.word);
        pos.push_back(e.pos);
      }
      annotation.push_back(0.0);
    }
    if (label != 0) {
      const auto& pool = label == 1 ? kPositive : kNegative;
      const std::size_t m = cfg.min_markers + rng.below(cfg.max_markers - cfg.min_markers + 1);
      std::vector<std::size_t> slots(n);
      for (std::size_t k = 0; k < n; ++k) slots[k] = k;
      rng.shuffle(slots);
      for (std::size_t k = 0; k < m; ++k) {
        words[slots[k]] = pool[rng.below(pool.size())];
        pos[slots[k]] = PosTag::ADJ;
        annotation[slots[k]] = 0.6 + 0.1 * static_cast<double>(rng.below(5));
      }
    }
    Document doc;
    doc.id = std::string(to_string(split)) + "-" + std::to_string(i);
    doc.label = label;
    for (std::size_t k = 0; k < n; ++k) doc.words.push_back({words[k], k});
    doc.pos = std::move(pos);
    doc.annotation = std::move(annotation);
    corpus.documents.push_back(std::move(doc));
  }
  return corpus;
}

inline PosLexicon lexicon() {
  PosLexicon lex;
  for (const auto& e : kFiller) lex.add(e.word, e.pos);
  for (const auto& w : kPositive) lex.add(w, PosTag::ADJ);
  for (const auto& w : kNegative) lex.add(w, PosTag::ADJ);
  return lex;
}

/// Each marker's synonyms are the other markers of the same polarity.
inline SynonymResources synonyms() {
  SynonymResources res;
  auto add_group = [&](const std::vector<std::string>& group, std::string_view pos) {
    for (const auto& w : group) {
      std::vector<std::string> others;
      for (const auto& o : group)
        if (o != w) others.push_back(o);
      res.add_equivalence(w, pos, others);
    }
  };
  add_group(kPositive, "ADJ");
  add_group(kNegative, "ADJ");
  for (const auto& g : kFillerSynonyms) add_group(g, "");
  return res;
}

/// Writes the train/test splits, the POS lexicon and the synonym lexicon to `dir`.
inline void write_files(const std::string& dir, const ToyConfig& train_cfg, const ToyConfig& test_cfg) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  save_corpus(make_corpus(train_cfg, Split::train), dir + "/train.jsonl");
  save_corpus(make_corpus(test_cfg, Split::test), dir + "/test.jsonl");

  std::ofstream lex(dir + "/pos_lexicon.tsv");
  for (const auto& e : kFiller) lex << e.word << '\t' << to_string(e.pos) << '\n';
  for (const auto& w : kPositive) lex << w << "\tADJ\n";
  for (const auto& w : kNegative) lex << w << "\tADJ\n";

  std::ofstream eq(dir + "/equivalence.tsv");
  auto write_group = [&](const std::vector<std::string>& group, const char* pos) {
    for (const auto& w : group) {
      std::string line = w + '\t' + pos + '\t';
      bool first = true;
      for (const auto& o : group) {
        if (o == w) continue;
        if (!first) line += '|';
        line += o;
        first = false;
      }
      eq << line << '\n';
    }
  };
  write_group(kPositive, "ADJ");
  write_group(kNegative, "ADJ");
  for (const auto& g : kFillerSynonyms) write_group(g, "*");
}

/// Default train/test settings for the committed toy data.
inline ToyConfig default_train_config() {
  ToyConfig c;
  c.documents = 300;
  c.special_rate = 0.08;
  c.seed = 11;
  return c;
}

inline ToyConfig default_test_config() {
  ToyConfig c;
  c.documents = 210;
  c.seed = 12;
  return c;
}

}  // namespace noisyx::toy
