#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "noisyx/common.hpp"
#include "noisyx/corpus.hpp"

namespace noisyx {

namespace closed_class {
inline const std::vector<std::string> kDeterminants = {"a", "an", "the", "this", "that"};
inline const std::vector<std::string> kQuestionDeterminants = {"that", "what", "whatever", "which",
                                                               "whichever"};
inline const std::vector<std::string> kQuotes = {"'", "''", "`", "``", "\""};
inline const std::vector<std::string> kBrackets = {"(", ")", "{", "}", "[", "]", "/"};
inline const std::vector<std::string> kPunctuation = {".", "!", "?", ","};
inline const std::vector<std::string> kSentenceBreaks = {"-", "--", ",", ":", ";"};
}  // namespace closed_class

/// Lexicons, pools and closed-class tables used by the synonym rules.
struct SynonymResources {
  // Keyed by lowercase word, then POS name ("" matches any POS).
  std::unordered_map<std::string, std::map<std::string, std::vector<std::string>>> equivalence;
  std::unordered_map<std::string, std::map<std::string, std::vector<std::string>>> entailment;
  std::vector<std::string> mentions;
  std::vector<std::string> first_names;
  std::vector<std::string> last_names;

  void add_equivalence(const std::string& word, std::string_view pos,
                       std::vector<std::string> synonyms) {
    auto& slot = equivalence[to_lower(word)][std::string(pos)];
    slot.insert(slot.end(), synonyms.begin(), synonyms.end());
  }
  void add_entailment(const std::string& word, std::string_view pos,
                      std::vector<std::string> entailed) {
    auto& slot = entailment[to_lower(word)][std::string(pos)];
    slot.insert(slot.end(), entailed.begin(), entailed.end());
  }
};

namespace detail {

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

inline std::vector<std::string> read_pool(const std::string& path) {
  std::vector<std::string> pool;
  for (auto& l : read_lines(path)) {
    if (!l.empty() && l[0] != '#') pool.push_back(l);
  }
  return pool;
}

}  // namespace detail

/// `word<TAB>POS<TAB>syn1|syn2...`; POS may be `*` for any.
inline void load_equivalence_lexicon(SynonymResources& res, const std::string& path) {
  std::size_t lineno = 0;
  for (const auto& line : detail::read_lines(path)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    auto cols = detail::split(line, '\t');
    if (cols.size() != 3) throw ParseError(path, lineno, "expected word<TAB>POS<TAB>syn1|syn2");
    const std::string pos = cols[1] == "*" ? "" : cols[1];
    if (!pos.empty() && !parse_pos(pos)) throw ParseError(path, lineno, "unknown POS " + pos);
    res.add_equivalence(cols[0], pos, detail::split(cols[2], '|'));
  }
}

/// `word<TAB>POS<TAB>direction<TAB>e1|e2...`; direction is `forward` or `reverse`.
/// Both directions are eligible replacements.
inline void load_entailment_lexicon(SynonymResources& res, const std::string& path) {
  std::size_t lineno = 0;
  for (const auto& line : detail::read_lines(path)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    auto cols = detail::split(line, '\t');
    if (cols.size() != 4) throw ParseError(path, lineno, "expected word<TAB>POS<TAB>dir<TAB>e1|e2");
    if (cols[2] != "forward" && cols[2] != "reverse")
      throw ParseError(path, lineno, "direction must be forward or reverse");
    const std::string pos = cols[1] == "*" ? "" : cols[1];
    res.add_entailment(cols[0], pos, detail::split(cols[3], '|'));
  }
}

struct SynonymPaths {
  std::string equivalence;
  std::string entailment;
  std::string mentions;
  std::string first_names;
  std::string last_names;
};

inline SynonymResources load_synonym_resources(const SynonymPaths& paths) {
  SynonymResources res;
  if (!paths.equivalence.empty()) load_equivalence_lexicon(res, paths.equivalence);
  if (!paths.entailment.empty()) load_entailment_lexicon(res, paths.entailment);
  if (!paths.mentions.empty()) res.mentions = detail::read_pool(paths.mentions);
  if (!paths.first_names.empty()) res.first_names = detail::read_pool(paths.first_names);
  if (!paths.last_names.empty()) res.last_names = detail::read_pool(paths.last_names);
  return res;
}

namespace detail {

inline bool contains(const std::vector<std::string>& v, std::string_view s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

inline bool has_alpha(std::string_view s) {
  return std::any_of(s.begin(), s.end(), [](char c) { return std::isalpha(static_cast<unsigned char>(c)); });
}

inline bool is_all_upper(std::string_view s) {
  return has_alpha(s) && std::none_of(s.begin(), s.end(), [](char c) {
           return std::islower(static_cast<unsigned char>(c));
         });
}

inline bool is_title(std::string_view s) {
  return !s.empty() && std::isupper(static_cast<unsigned char>(s[0])) && !is_all_upper(s);
}

/// Transfers the case pattern of `original` onto `replacement`.
inline std::string match_case(std::string_view original, std::string replacement) {
  if (original.size() > 1 && is_all_upper(original)) return to_upper(replacement);
  if (is_title(original) || (original.size() == 1 && is_all_upper(original))) {
    if (!replacement.empty())
      replacement[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(replacement[0])));
  }
  return replacement;
}

inline std::string hyphenate(std::string s) {
  std::replace(s.begin(), s.end(), ' ', '-');
  return s;
}

/// Uniform draw from `pool` excluding entries equal (case-insensitively) to `word`.
inline std::optional<std::string> pick_other(const std::vector<std::string>& pool,
                                             std::string_view word, Rng& rng) {
  const std::string lower = to_lower(word);
  std::vector<std::string> candidates;
  for (const auto& c : pool) {
    if (!c.empty() && to_lower(c) != lower) candidates.push_back(c);
  }
  if (candidates.empty()) return std::nullopt;
  return rng.pick(candidates);
}

inline const std::vector<std::string>* find_class(std::string_view w) {
  using namespace closed_class;
  for (const auto* cls : {&kQuotes, &kBrackets, &kPunctuation, &kSentenceBreaks}) {
    if (contains(*cls, w)) return cls;
  }
  return nullptr;
}

inline bool is_strippable(char c) {
  const std::string s(1, c);
  return find_class(s) != nullptr || c == '\n';
}

inline const std::vector<std::string> kOnes = {"zero",    "one",     "two",       "three",
                                               "four",    "five",    "six",       "seven",
                                               "eight",   "nine",    "ten",       "eleven",
                                               "twelve",  "thirteen", "fourteen", "fifteen",
                                               "sixteen", "seventeen", "eighteen", "nineteen"};
inline const std::vector<std::string> kTens = {"",      "",      "twenty",  "thirty", "forty",
                                               "fifty", "sixty", "seventy", "eighty", "ninety"};

inline void number_words(std::uint64_t n, std::vector<std::string>& out) {
  static constexpr std::pair<std::uint64_t, const char*> scales[] = {
      {1000000000ULL, "billion"}, {1000000ULL, "million"}, {1000ULL, "thousand"}};
  for (auto [value, name] : scales) {
    if (n >= value) {
      number_words(n / value, out);
      out.emplace_back(name);
      n %= value;
      if (n == 0) return;
    }
  }
  if (n >= 100) {
    out.push_back(kOnes[n / 100]);
    out.emplace_back("hundred");
    n %= 100;
    if (n == 0) return;
  }
  if (n >= 20) {
    out.push_back(kTens[n / 10]);
    if (n % 10) out.push_back(kOnes[n % 10]);
    return;
  }
  out.push_back(kOnes[n]);
}

}  // namespace detail

/// English words for an arabic numeral, hyphen-joined; nullopt if not a plain numeral.
inline std::optional<std::string> numeral_to_english(std::string_view digits) {
  if (digits.empty() || digits.size() > 12 || !all_of_chars(digits, std::isdigit))
    return std::nullopt;
  if (digits.size() > 1 && digits[0] == '0') return std::nullopt;
  std::vector<std::string> parts;
  detail::number_words(std::stoull(std::string(digits)), parts);
  std::string out;
  for (const auto& p : parts) {
    if (!out.empty()) out += '-';
    out += p;
  }
  return out;
}

namespace detail {

inline std::optional<std::string> lexicon_lookup(
    const std::unordered_map<std::string, std::map<std::string, std::vector<std::string>>>& lex,
    std::string_view word, std::optional<PosTag> pos, Rng& rng) {
  auto it = lex.find(to_lower(word));
  if (it == lex.end()) return std::nullopt;
  std::vector<std::string> pool;
  for (const auto& [key, syns] : it->second) {
    if (!pos || key.empty() || key == to_string(*pos)) pool.insert(pool.end(), syns.begin(), syns.end());
  }
  auto choice = pick_other(pool, word, rng);
  if (!choice) return std::nullopt;
  return match_case(word, hyphenate(*choice));
}

inline std::optional<std::string> random_tco_url(std::string_view word, Rng& rng) {
  static constexpr std::string_view kAlnum =
      "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
  const std::size_t cut = word.find("t.co/") + 5;
  std::string out(word.substr(0, cut));
  const std::size_t n = std::max<std::size_t>(word.size() - cut, 10);
  for (std::size_t i = 0; i < n; ++i) out += kAlnum[rng.below(kAlnum.size())];
  if (out == word) out.back() = out.back() == 'a' ? 'b' : 'a';
  return out;
}

inline std::optional<std::string> synonym_rules(std::string_view word, std::optional<PosTag> pos,
                                                const SynonymResources& res, Rng& rng) {
  using namespace closed_class;
  if (word.empty()) return std::nullopt;
  const std::string lower = to_lower(word);

  // 1. t.co links
  if (word.starts_with("http://t.co/") || word.starts_with("https://t.co/"))
    return random_tco_url(word, rng);

  // 2. hashtags
  if (word.size() > 1 && word[0] == '#') {
    if (auto r = synonym_rules(word.substr(1), std::nullopt, res, rng)) return "#" + *r;
    return std::nullopt;
  }

  // 3. mentions
  if (word.size() > 1 && word[0] == '@') return pick_other(res.mentions, word, rng);

  // 4. determinants and question determinants
  const bool wdt = pos && *pos == PosTag::WDT;
  if (wdt && contains(kQuestionDeterminants, lower)) {
    if (auto r = pick_other(kQuestionDeterminants, lower, rng)) return match_case(word, *r);
  }
  if (contains(kDeterminants, lower)) {
    if (auto r = pick_other(kDeterminants, lower, rng)) return match_case(word, *r);
  }
  if (contains(kQuestionDeterminants, lower)) {
    if (auto r = pick_other(kQuestionDeterminants, lower, rng)) return match_case(word, *r);
  }

  // 5. proper nouns
  if (pos && *pos == PosTag::PROPN) {
    std::string_view stem = word;
    std::string suffix;
    if (stem.size() > 2 && stem.ends_with("'s")) {
      stem.remove_suffix(2);
      suffix = "'s";
    }
    const bool first = rng.bernoulli(0.5);
    const auto& primary = first ? res.first_names : res.last_names;
    const auto& secondary = first ? res.last_names : res.first_names;
    auto name = pick_other(primary, stem, rng);
    if (!name) name = pick_other(secondary, stem, rng);
    if (name) return hyphenate(*name) + suffix;
  }

  // 6. quotes, brackets, punctuation, sentence breaks
  if (const auto* cls = find_class(word)) return pick_other(*cls, word, rng);

  // 7. numerals
  if (auto num = numeral_to_english(word)) return num;

  // 8. equivalence lexicon with POS
  if (auto r = lexicon_lookup(res.equivalence, word, pos, rng)) return r;

  // 9. surrounding quote/bracket/punctuation characters
  {
    std::size_t b = 0, e = word.size();
    while (b < e && is_strippable(word[b])) ++b;
    while (e > b && is_strippable(word[e - 1])) --e;
    if (e > b && (b > 0 || e < word.size())) {
      if (auto r = synonym_rules(word.substr(b, e - b), pos, res, rng))
        return std::string(word.substr(0, b)) + *r + std::string(word.substr(e));
    }
  }

  // 10. hyphen, period or '//' separated subsections
  {
    std::vector<std::pair<std::size_t, std::size_t>> parts;  // [begin, end)
    bool has_sep = false;
    std::size_t start = 0;
    for (std::size_t i = 0; i < word.size();) {
      const std::size_t sep = word.substr(i, 2) == "//" ? 2 : (word[i] == '-' || word[i] == '.') ? 1 : 0;
      if (sep == 0) {
        ++i;
        continue;
      }
      has_sep = true;
      if (i > start) parts.emplace_back(start, i);
      i += sep;
      start = i;
    }
    if (start < word.size()) parts.emplace_back(start, word.size());
    if (has_sep) {
      rng.shuffle(parts);
      for (auto [b, e] : parts) {
        if (auto r = synonym_rules(word.substr(b, e - b), std::nullopt, res, rng))
          return std::string(word.substr(0, b)) + *r + std::string(word.substr(e));
      }
    }
  }

  // 11. entailment
  if (pos) {
    if (auto r = lexicon_lookup(res.entailment, word, pos, rng)) return r;
  }

  // 12. POS-free lexicon search
  if (auto r = lexicon_lookup(res.equivalence, word, std::nullopt, rng)) return r;
  if (auto r = lexicon_lookup(res.entailment, word, std::nullopt, rng)) return r;

  // 13. -ish / -ness / -less
  for (std::string_view suffix : {"ish", "ness", "less"}) {
    if (lower.size() > suffix.size() + 1 && lower.ends_with(suffix)) {
      const auto stem = word.substr(0, word.size() - suffix.size());
      if (auto r = synonym_rules(stem, std::nullopt, res, rng))
        return *r + std::string(word.substr(stem.size()));
    }
  }
  return std::nullopt;
}

}  // namespace detail

/// Replaces `word` by the first applicable synonym rule; nullopt when none applies.
/// The result never contains whitespace and never equals the input.
inline std::optional<std::string> apply_synonym(std::string_view word, std::optional<PosTag> pos,
                                                const SynonymResources& resources, Rng& rng) {
  if (pos && *pos == PosTag::OTHER) pos.reset();
  auto r = detail::synonym_rules(word, pos, resources, rng);
  if (!r || *r == word || r->empty()) return std::nullopt;
  std::replace_if(r->begin(), r->end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); }, '-');
  return r;
}

}  // namespace noisyx
