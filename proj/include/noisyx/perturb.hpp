#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "noisyx/common.hpp"
#include "noisyx/corpus.hpp"
#include "noisyx/synonym.hpp"

namespace noisyx {

enum class NoiseKind { token_mask, token_unk, charinsert, charswap, butterfingers, l33t, synonym };
enum class HierarchyKind { random, human, gradient };

inline constexpr std::array<NoiseKind, 7> kAllNoiseKinds = {
    NoiseKind::token_mask, NoiseKind::token_unk,     NoiseKind::charinsert, NoiseKind::charswap,
    NoiseKind::butterfingers, NoiseKind::l33t, NoiseKind::synonym};
inline constexpr std::array<HierarchyKind, 3> kAllHierarchies = {
    HierarchyKind::random, HierarchyKind::human, HierarchyKind::gradient};

/// The nine perturbation levels swept by default.
inline constexpr std::array<double, 9> kDefaultAlphas = {0.0, 0.05, 0.10, 0.25, 0.50,
                                                         0.70, 0.80, 0.90, 0.95};

inline constexpr std::array<std::string_view, 7> kNoiseNames = {
    "token_mask", "token_unk", "charinsert", "charswap", "butterfingers", "l33t", "synonym"};
inline constexpr std::array<std::string_view, 3> kHierarchyNames = {"random", "human", "gradient"};

inline std::string_view to_string(NoiseKind k) { return kNoiseNames[static_cast<std::size_t>(k)]; }
inline std::string_view to_string(HierarchyKind k) {
  return kHierarchyNames[static_cast<std::size_t>(k)];
}

inline NoiseKind parse_noise(std::string_view s) {
  for (std::size_t i = 0; i < kNoiseNames.size(); ++i) {
    if (kNoiseNames[i] == s) return static_cast<NoiseKind>(i);
  }
  if (s == "mask") return NoiseKind::token_mask;
  if (s == "unk") return NoiseKind::token_unk;
  throw Error("unknown noise type '" + std::string(s) + "'");
}

inline HierarchyKind parse_hierarchy(std::string_view s) {
  for (std::size_t i = 0; i < kHierarchyNames.size(); ++i) {
    if (kHierarchyNames[i] == s) return static_cast<HierarchyKind>(i);
  }
  throw Error("unknown hierarchy '" + std::string(s) + "'");
}

struct Hierarchy {
  HierarchyKind kind = HierarchyKind::random;
  std::vector<std::size_t> ranking;  // highest perturbation priority first
};

struct PerturbedDoc {
  std::string base_id;
  double alpha = 0.0;
  std::vector<std::string> words;
  std::vector<bool> perturbed_mask;
  std::size_t requested_count = 0;

  std::size_t actual_count() const {
    return static_cast<std::size_t>(std::count(perturbed_mask.begin(), perturbed_mask.end(), true));
  }
  bool operator==(const PerturbedDoc&) const = default;
};

/// Per-document seed shared by every level of one (noise, hierarchy) sweep.
inline std::uint64_t datapoint_seed(std::uint64_t global_seed, std::string_view doc_id,
                                    NoiseKind noise, HierarchyKind hierarchy) {
  return derive_seed(global_seed, {doc_id, to_string(noise), to_string(hierarchy)});
}

// ---------------------------------------------------------------------------
// Hierarchies

inline std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

inline Hierarchy rank_random(const Document& doc, std::uint64_t seed) {
  Hierarchy h{HierarchyKind::random, iota_indices(doc.size())};
  Rng rng(derive_seed(seed, {"rank_random"}));
  rng.shuffle(h.ranking);
  return h;
}

/// Annotated words by descending weight, then ADJ, ADV, VERB, NOUN blocks, then
/// the rest. Ties and within-block order are shuffled by `seed`.
inline Hierarchy rank_human(const Document& doc, std::uint64_t seed) {
  if (doc.annotation.size() != doc.size() || doc.pos.size() != doc.size())
    throw Error("rank_human: document '" + doc.id + "' lacks word-aligned annotation/pos");
  Rng rng(derive_seed(seed, {"rank_human"}));
  std::vector<std::size_t> shuffled = iota_indices(doc.size());
  rng.shuffle(shuffled);

  auto block = [&](std::size_t i) -> int {
    if (doc.annotation[i] > 0.0) return 0;
    switch (doc.pos[i]) {
      case PosTag::ADJ: return 1;
      case PosTag::ADV: return 2;
      case PosTag::VERB: return 3;
      case PosTag::NOUN: return 4;
      default: return 5;
    }
  };
  std::stable_sort(shuffled.begin(), shuffled.end(), [&](std::size_t a, std::size_t b) {
    const int ba = block(a), bb = block(b);
    if (ba != bb) return ba < bb;
    if (ba == 0) return doc.annotation[a] > doc.annotation[b];
    return false;
  });
  return {HierarchyKind::human, std::move(shuffled)};
}

/// Indices by descending score; ties by ascending position.
inline Hierarchy rank_gradient(const Document& doc, std::span<const double> word_scores) {
  if (word_scores.size() != doc.size())
    throw Error("rank_gradient: " + std::to_string(word_scores.size()) + " scores for " +
                std::to_string(doc.size()) + " words");
  Hierarchy h{HierarchyKind::gradient, iota_indices(doc.size())};
  std::stable_sort(h.ranking.begin(), h.ranking.end(),
                   [&](std::size_t a, std::size_t b) { return word_scores[a] > word_scores[b]; });
  return h;
}

/// Number of words to perturb. Zero until alpha*n reaches 1; never all words.
inline std::size_t select_count(std::size_t n_words, double alpha) {
  if (n_words == 0) throw Error("select_count: empty document");
  const double target = alpha * static_cast<double>(n_words);
  // Tolerate representation error so that e.g. 0.05*20 counts as 1.
  constexpr double kSlack = 1e-9;
  if (target + kSlack < 1.0) return 0;
  const auto rounded = static_cast<std::size_t>(std::floor(target + 0.5 + kSlack));
  if (n_words == 1) return 0;
  return std::clamp<std::size_t>(rounded, 1, n_words - 1);
}

// ---------------------------------------------------------------------------
// Word transforms

inline constexpr std::string_view kMaskToken = "[MASK]";
inline constexpr std::string_view kUnkToken = "[UNK]";

enum class SpecialToken { mask, unk };

inline std::string apply_token(std::string_view /*word*/, SpecialToken which) {
  return std::string(which == SpecialToken::mask ? kMaskToken : kUnkToken);
}

inline constexpr std::string_view kLetters = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ";

/// Inserts a random letter strictly inside the word (never before the first or after the last character).
inline std::string apply_charinsert(std::string_view word, Rng& rng) {
  std::string out(word);
  if (word.size() < 2) return out;
  const std::size_t pos = 1 + rng.below(word.size() - 1);
  out.insert(out.begin() + static_cast<std::ptrdiff_t>(pos), kLetters[rng.below(kLetters.size())]);
  return out;
}

inline std::string apply_charswap(std::string_view word, Rng& rng) {
  std::string out(word);
  if (word.empty()) return out;
  const std::size_t pos = rng.below(word.size());
  char c;
  do {
    c = kLetters[rng.below(kLetters.size())];
  } while (c == word[pos]);
  out[pos] = c;
  return out;
}

/// Letters horizontally or diagonally adjacent to `c` on a US qwerty layout.
inline std::string qwerty_neighbors(char c) {
  static constexpr std::array<std::string_view, 3> rows = {"qwertyuiop", "asdfghjkl", "zxcvbnm"};
  const char lower = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto col = rows[r].find(lower);
    if (col == std::string_view::npos) continue;
    std::string out;
    auto add = [&](std::size_t row, std::ptrdiff_t k) {
      if (k >= 0 && static_cast<std::size_t>(k) < rows[row].size()) out += rows[row][k];
    };
    const auto ic = static_cast<std::ptrdiff_t>(col);
    add(r, ic - 1);
    add(r, ic + 1);
    if (r > 0) {  // the row above sits half a key to the left
      add(r - 1, ic);
      add(r - 1, ic + 1);
    }
    if (r + 1 < rows.size()) {
      add(r + 1, ic - 1);
      add(r + 1, ic);
    }
    return out;
  }
  return {};
}

inline std::string apply_butterfingers(std::string_view word, Rng& rng) {
  std::string out(word);
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < word.size(); ++i) {
    if (!qwerty_neighbors(word[i]).empty()) candidates.push_back(i);
  }
  if (candidates.empty()) return out;
  const std::size_t pos = rng.pick(candidates);
  const std::string near = qwerty_neighbors(word[pos]);
  char c = near[rng.below(near.size())];
  if (std::isupper(static_cast<unsigned char>(word[pos])))
    c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  out[pos] = c;
  return out;
}

inline char l33t_char(char c) {
  switch (std::tolower(static_cast<unsigned char>(c))) {
    case 'a': return '@';
    case 'b': return '6';
    case 'e': return '3';
    case 'g': return '9';
    case 'h': return '4';
    case 'i': return '1';
    case 'l': return '1';
    case 'o': return '0';
    case 's': return '5';
    case 't': return '7';
    default: return c;
  }
}

inline std::string apply_l33t(std::string_view word) {
  std::string out(word);
  for (char& c : out) c = l33t_char(c);
  return out;
}

/// Applies one noise transform; nullopt means the word could not be perturbed.
inline std::optional<std::string> apply_noise(std::string_view word, PosTag pos, NoiseKind noise,
                                              const SynonymResources& resources, Rng& rng) {
  std::string out;
  switch (noise) {
    case NoiseKind::token_mask: out = apply_token(word, SpecialToken::mask); break;
    case NoiseKind::token_unk: out = apply_token(word, SpecialToken::unk); break;
    case NoiseKind::charinsert: out = apply_charinsert(word, rng); break;
    case NoiseKind::charswap: out = apply_charswap(word, rng); break;
    case NoiseKind::butterfingers: out = apply_butterfingers(word, rng); break;
    case NoiseKind::l33t: out = apply_l33t(word); break;
    case NoiseKind::synonym: return apply_synonym(word, pos, resources, rng);
  }
  if (out == word) return std::nullopt;
  return out;
}

/// Perturbs the first select_count(N, alpha) words of the ranking.
///
/// Each word draws from its own generator seeded by (seed, word index), so a
/// word's replacement is the same at every level and masks nest across levels.
/// Words without a valid replacement stay unmodified and are not compensated.
inline PerturbedDoc perturb(const Document& doc, NoiseKind noise, const Hierarchy& hierarchy,
                            double alpha, const SynonymResources& resources, std::uint64_t seed) {
  if (hierarchy.ranking.size() != doc.size())
    throw Error("perturb: hierarchy does not match document '" + doc.id + "'");
  PerturbedDoc out;
  out.base_id = doc.id;
  out.alpha = alpha;
  out.words = doc.surfaces();
  out.perturbed_mask.assign(doc.size(), false);
  out.requested_count = select_count(doc.size(), alpha);
  const std::uint64_t noise_seed = derive_seed(seed, {"noise", to_string(noise)});
  for (std::size_t k = 0; k < out.requested_count; ++k) {
    const std::size_t i = hierarchy.ranking[k];
    Rng rng(derive_seed(noise_seed, static_cast<std::uint64_t>(i)));
    const PosTag tag = i < doc.pos.size() ? doc.pos[i] : PosTag::OTHER;
    if (auto replaced = apply_noise(doc.words[i].surface, tag, noise, resources, rng)) {
      out.words[i] = std::move(*replaced);
      out.perturbed_mask[i] = true;
    }
  }
  return out;
}

inline Document as_document(const Document& base, const PerturbedDoc& p) {
  Document d = base;
  for (std::size_t i = 0; i < d.words.size(); ++i) d.words[i].surface = p.words[i];
  return d;
}

}  // namespace noisyx
