#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "noisyx/common.hpp"

namespace noisyx {

enum class PosTag { ADJ, ADV, VERB, NOUN, PROPN, DET, WDT, NUM, PUNCT, OTHER };

inline constexpr std::array<std::string_view, 10> kPosNames = {
    "ADJ", "ADV", "VERB", "NOUN", "PROPN", "DET", "WDT", "NUM", "PUNCT", "OTHER"};

inline std::string_view to_string(PosTag t) { return kPosNames[static_cast<std::size_t>(t)]; }

inline std::optional<PosTag> parse_pos(std::string_view s) {
  for (std::size_t i = 0; i < kPosNames.size(); ++i) {
    if (kPosNames[i] == s) return static_cast<PosTag>(i);
  }
  return std::nullopt;
}

struct Word {
  std::string surface;
  std::size_t index = 0;
};

struct Document {
  std::string id;
  std::vector<Word> words;
  std::size_t label = 0;
  std::vector<double> annotation;
  std::vector<PosTag> pos;

  std::size_t size() const noexcept { return words.size(); }

  std::vector<std::string> surfaces() const {
    std::vector<std::string> out;
    out.reserve(words.size());
    for (const auto& w : words) out.push_back(w.surface);
    return out;
  }

  std::string text() const {
    std::string out;
    for (const auto& w : words) {
      if (!out.empty()) out += ' ';
      out += w.surface;
    }
    return out;
  }
};

enum class Split { train, test };

inline std::string_view to_string(Split s) { return s == Split::train ? "train" : "test"; }

struct Corpus {
  std::vector<Document> documents;
  std::size_t num_classes = 2;
  Split split = Split::test;
};

inline bool is_space(unsigned char c) { return std::isspace(c) != 0; }

/// Splits on runs of whitespace. Punctuation stays attached to its word.
inline std::vector<Word> tokenize_words(std::string_view text) {
  std::vector<Word> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_space(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) words.push_back({std::string(text.substr(i, j - i)), words.size()});
    i = j;
  }
  if (words.empty()) throw Error("tokenize_words: text is empty or all whitespace");
  return words;
}

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline std::string to_upper(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

/// Word-to-tag map with a suffix fallback for unknown words.
class PosLexicon {
 public:
  PosLexicon() = default;

  void add(std::string word, PosTag tag) { entries_[to_lower(word)] = tag; }

  std::optional<PosTag> lookup(std::string_view word) const {
    auto it = entries_.find(to_lower(word));
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t size() const noexcept { return entries_.size(); }

  static PosLexicon load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open POS lexicon: " + path);
    PosLexicon lex;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos) throw ParseError(path, lineno, "expected word<TAB>TAG");
      auto tag = parse_pos(line.substr(tab + 1));
      if (!tag) throw ParseError(path, lineno, "unknown POS tag '" + line.substr(tab + 1) + "'");
      lex.add(line.substr(0, tab), *tag);
    }
    return lex;
  }

 private:
  std::unordered_map<std::string, PosTag> entries_;
};

struct SuffixRule {
  std::string_view suffix;
  PosTag tag;
};

// Checked in order; longer suffixes first where they overlap.
inline constexpr std::array<SuffixRule, 18> kSuffixRules = {{
    {"ly", PosTag::ADV},     {"ward", PosTag::ADV},   {"wise", PosTag::ADV},
    {"ing", PosTag::VERB},   {"ed", PosTag::VERB},    {"ize", PosTag::VERB},
    {"ous", PosTag::ADJ},    {"ful", PosTag::ADJ},    {"ive", PosTag::ADJ},
    {"able", PosTag::ADJ},   {"ible", PosTag::ADJ},   {"less", PosTag::ADJ},
    {"ish", PosTag::ADJ},    {"ness", PosTag::NOUN},  {"tion", PosTag::NOUN},
    {"ment", PosTag::NOUN},  {"ity", PosTag::NOUN},   {"ism", PosTag::NOUN},
}};

inline bool all_of_chars(std::string_view s, int (*pred)(int)) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [pred](char c) {
    return pred(static_cast<unsigned char>(c)) != 0;
  });
}

inline PosTag tag_word(std::string_view surface, const PosLexicon& lexicon) {
  if (auto t = lexicon.lookup(surface)) return *t;
  if (all_of_chars(surface, std::ispunct)) return PosTag::PUNCT;
  if (all_of_chars(surface, std::isdigit)) return PosTag::NUM;
  // Strip surrounding punctuation before the lexicon retry and suffix test.
  std::size_t b = 0, e = surface.size();
  while (b < e && std::ispunct(static_cast<unsigned char>(surface[b]))) ++b;
  while (e > b && std::ispunct(static_cast<unsigned char>(surface[e - 1]))) --e;
  const std::string_view core = surface.substr(b, e - b);
  if (b > 0 && core.size() < surface.size() && surface[0] != '\'' && surface[0] != '"' &&
      surface[0] != '(')
    return PosTag::OTHER;  // @handles, #tags and similar
  if (auto t = lexicon.lookup(core)) return *t;
  const bool alpha = std::all_of(core.begin(), core.end(), [](char c) {
    return std::isalpha(static_cast<unsigned char>(c)) || c == '-' || c == '\'';
  });
  if (!alpha || core.empty()) return PosTag::OTHER;
  const std::string lower = to_lower(core);
  for (const auto& rule : kSuffixRules) {
    if (lower.size() > rule.suffix.size() + 2 && lower.ends_with(rule.suffix)) return rule.tag;
  }
  return PosTag::OTHER;
}

inline std::vector<PosTag> tag_pos(const std::vector<Word>& words, const PosLexicon& lexicon) {
  std::vector<PosTag> tags;
  tags.reserve(words.size());
  for (const auto& w : words) tags.push_back(tag_word(w.surface, lexicon));
  return tags;
}

/// Parses one corpus line. Throws ParseError naming the line on any defect.
inline Document parse_document(const std::string& line, const std::string& source,
                               std::size_t lineno, const PosLexicon& lexicon) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(source, lineno, std::string("invalid JSON: ") + e.what());
  }
  auto fail = [&](const std::string& msg) { throw ParseError(source, lineno, msg); };
  if (!j.is_object()) fail("record is not an object");
  for (const char* key : {"id", "text", "label", "annotation"}) {
    if (!j.contains(key)) fail(std::string("missing field '") + key + "'");
  }
  if (!j["id"].is_string()) fail("'id' must be a string");
  if (!j["text"].is_string()) fail("'text' must be a string");
  if (!j["label"].is_number_integer() || j["label"].get<long long>() < 0)
    fail("'label' must be a non-negative integer");
  if (!j["annotation"].is_array()) fail("'annotation' must be an array");

  Document doc;
  doc.id = j["id"].get<std::string>();
  doc.label = j["label"].get<std::size_t>();
  try {
    doc.words = tokenize_words(j["text"].get<std::string>());
  } catch (const Error& e) {
    fail(e.what());
  }
  for (const auto& a : j["annotation"]) {
    if (!a.is_number()) fail("annotation weights must be numbers");
    const double w = a.get<double>();
    if (!(w >= 0.0 && w <= 1.0)) fail("annotation weight outside [0,1]");
    doc.annotation.push_back(w);
  }
  if (doc.annotation.size() != doc.words.size()) {
    fail("annotation has " + std::to_string(doc.annotation.size()) + " entries for " +
         std::to_string(doc.words.size()) + " words");
  }
  if (j.contains("pos") && !j["pos"].is_null()) {
    if (!j["pos"].is_array() || j["pos"].size() != doc.words.size())
      fail("'pos' must be a word-aligned array");
    for (const auto& t : j["pos"]) {
      auto tag = t.is_string() ? parse_pos(t.get<std::string>()) : std::nullopt;
      if (!tag) fail("unknown POS tag " + t.dump());
      doc.pos.push_back(*tag);
    }
  } else {
    doc.pos = tag_pos(doc.words, lexicon);
  }
  return doc;
}

inline nlohmann::json document_to_json(const Document& doc) {
  std::vector<std::string> pos;
  for (auto t : doc.pos) pos.emplace_back(to_string(t));
  return {{"id", doc.id},
          {"text", doc.text()},
          {"label", doc.label},
          {"annotation", doc.annotation},
          {"pos", pos}};
}

/// Loads a line-delimited JSON corpus. `num_classes` of 0 infers max(label)+1 (at least 2).
inline Corpus load_corpus(const std::string& path, Split split, const PosLexicon& lexicon = {},
                          std::size_t num_classes = 0) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open corpus: " + path);
  Corpus corpus;
  corpus.split = split;
  std::unordered_set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  std::size_t max_label = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    Document doc = parse_document(line, path, lineno, lexicon);
    if (!ids.insert(doc.id).second) throw ParseError(path, lineno, "duplicate id '" + doc.id + "'");
    max_label = std::max(max_label, doc.label);
    corpus.documents.push_back(std::move(doc));
  }
  if (corpus.documents.empty()) throw Error("corpus is empty: " + path);
  if (num_classes == 0) {
    corpus.num_classes = std::max<std::size_t>(2, max_label + 1);
  } else {
    if (max_label >= num_classes) throw Error("label out of range in corpus: " + path);
    corpus.num_classes = num_classes;
  }
  return corpus;
}

inline void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write corpus: " + path);
  for (const auto& d : corpus.documents) out << document_to_json(d).dump() << '\n';
}

}  // namespace noisyx
