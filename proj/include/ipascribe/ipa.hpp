#pragma once

// French phoneme inventory, IPA tokenization and rendering, and phoneme-level
// edit distance / alignment.

#include <algorithm>
#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <unicode/normalizer2.h>
#include <unicode/unistr.h>

#include "ipascribe/errors.hpp"

namespace ipascribe {

inline constexpr std::size_t kPhonemeCount = 37;

/// One of the 37 French phonemes, identified by its inventory index.
class Phoneme {
 public:
  constexpr Phoneme() = default;
  constexpr explicit Phoneme(std::uint8_t id) : id_(id) {}

  constexpr std::uint8_t id() const noexcept { return id_; }
  std::string_view symbol() const noexcept;

  constexpr auto operator<=>(const Phoneme&) const = default;

 private:
  std::uint8_t id_ = 0;
};

using PhonemeSeq = std::vector<Phoneme>;

namespace detail {

struct InventoryEntry {
  std::string_view symbol;  // NFC UTF-8
  std::u32string_view codepoints;
};

// Order fixes the ids. Nasal vowels have no precomposed form, so their NFC
// spelling is base vowel + U+0303.
inline constexpr std::array<InventoryEntry, kPhonemeCount> kInventory{{
    {"i", U"i"},
    {"e", U"e"},
    {"\u025B", U"\u025B"},  // ɛ
    {"a", U"a"},
    {"\u0251", U"\u0251"},  // ɑ
    {"\u0254", U"\u0254"},  // ɔ
    {"o", U"o"},
    {"u", U"u"},
    {"y", U"y"},
    {"\u00F8", U"\u00F8"},  // ø
    {"\u0153", U"\u0153"},  // œ
    {"\u0259", U"\u0259"},  // ə
    {"\u025B\u0303", U"\u025B\u0303"},  // ɛ̃
    {"\u0251\u0303", U"\u0251\u0303"},  // ɑ̃
    {"\u0254\u0303", U"\u0254\u0303"},  // ɔ̃
    {"\u0153\u0303", U"\u0153\u0303"},  // œ̃
    {"j", U"j"},
    {"w", U"w"},
    {"\u0265", U"\u0265"},  // ɥ
    {"p", U"p"},
    {"k", U"k"},
    {"t", U"t"},
    {"b", U"b"},
    {"d", U"d"},
    {"g", U"g"},
    {"f", U"f"},
    {"s", U"s"},
    {"\u0283", U"\u0283"},  // ʃ
    {"v", U"v"},
    {"z", U"z"},
    {"\u0292", U"\u0292"},  // ʒ
    {"l", U"l"},
    {"\u0281", U"\u0281"},  // ʁ
    {"m", U"m"},
    {"n", U"n"},
    {"\u0272", U"\u0272"},  // ɲ
    {"\u014B", U"\u014B"},  // ŋ
}};

inline bool is_stripped(char32_t cp) {
  switch (cp) {
    case U'.':
    case U'(':
    case U')':
    case U'-':
    case U':':
    case U'\'':
    case U'\u0361':  // combining double inverted breve (tie bar)
    case U'\u203F':  // undertie
    case U'\u02C8':  // primary stress
    case U'\u02D0':  // length mark
      return true;
    default:
      break;
  }
  // space-like characters
  return cp == U' ' || cp == U'\t' || cp == U'\u00A0' || (cp >= U'\u2000' && cp <= U'\u200B') ||
         cp == U'\u202F' || cp == U'\u205F' || cp == U'\u3000';
}

// Codepoints accepted as spellings of an inventory symbol.
inline char32_t fold_alias(char32_t cp) {
  if (cp == U'\u0261') return U'g';  // script g
  return cp;
}

inline std::u32string to_nfd_codepoints(std::string_view utf8) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfd = icu::Normalizer2::getNFDInstance(status);
  if (U_FAILURE(status)) throw Error("ICU NFD normalizer unavailable");
  icu::UnicodeString src = icu::UnicodeString::fromUTF8(
      icu::StringPiece(utf8.data(), static_cast<std::int32_t>(utf8.size())));
  icu::UnicodeString norm = nfd->normalize(src, status);
  if (U_FAILURE(status)) throw Error("NFD normalization failed");
  std::u32string out;
  out.reserve(static_cast<std::size_t>(norm.length()));
  for (std::int32_t i = 0; i < norm.length();) {
    UChar32 c = norm.char32At(i);
    out.push_back(static_cast<char32_t>(c));
    i += U16_LENGTH(c);
  }
  return out;
}

}  // namespace detail

inline std::string_view Phoneme::symbol() const noexcept {
  return detail::kInventory[id_].symbol;
}

/// Looks up a phoneme by its NFC symbol.
inline std::optional<Phoneme> phoneme_from_symbol(std::string_view symbol) {
  for (std::size_t i = 0; i < kPhonemeCount; ++i) {
    if (detail::kInventory[i].symbol == symbol) return Phoneme(static_cast<std::uint8_t>(i));
  }
  return std::nullopt;
}

/// Unicode codepoints of a phoneme's symbol.
inline std::u32string_view phoneme_codepoints(Phoneme p) {
  return detail::kInventory[p.id()].codepoints;
}

/// All 37 phonemes in id order.
inline std::array<Phoneme, kPhonemeCount> inventory() {
  std::array<Phoneme, kPhonemeCount> out{};
  for (std::size_t i = 0; i < kPhonemeCount; ++i) out[i] = Phoneme(static_cast<std::uint8_t>(i));
  return out;
}

/// Splits IPA text into inventory phonemes.
///
/// The text is NFD-normalized, optional symbols (stress and length marks, tie
/// bars, syllable dots, parentheses, hyphens, spaces) are dropped, and the
/// remainder is matched greedily against the inventory, longest symbol first.
/// Throws UnknownSymbol with the index into the normalized codepoint sequence.
inline PhonemeSeq tokenize_ipa(std::string_view text) {
  const std::u32string cps = detail::to_nfd_codepoints(text);
  std::u32string kept;
  std::vector<std::size_t> origin;
  kept.reserve(cps.size());
  for (std::size_t i = 0; i < cps.size(); ++i) {
    if (detail::is_stripped(cps[i])) continue;
    kept.push_back(detail::fold_alias(cps[i]));
    origin.push_back(i);
  }

  PhonemeSeq out;
  std::size_t pos = 0;
  while (pos < kept.size()) {
    std::size_t best_len = 0;
    std::uint8_t best_id = 0;
    for (std::size_t id = 0; id < kPhonemeCount; ++id) {
      const auto cand = detail::kInventory[id].codepoints;
      if (cand.size() > best_len && kept.compare(pos, cand.size(), cand) == 0) {
        best_len = cand.size();
        best_id = static_cast<std::uint8_t>(id);
      }
    }
    if (best_len == 0) throw UnknownSymbol(origin[pos], kept[pos]);
    out.emplace_back(best_id);
    pos += best_len;
  }
  return out;
}

inline std::string render_ipa(const PhonemeSeq& seq) {
  std::string out;
  for (Phoneme p : seq) out += p.symbol();
  return out;
}

namespace detail {

template <typename Seq>
std::size_t unit_levenshtein(const Seq& a, const Seq& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace detail

/// Unit-cost edit distance between two phoneme sequences.
inline std::size_t levenshtein(const PhonemeSeq& a, const PhonemeSeq& b) {
  return detail::unit_levenshtein(a, b);
}

/// Codepoints of the rendered pronunciation; a nasal vowel contributes two.
inline std::u32string ipa_codepoints(const PhonemeSeq& seq) {
  std::u32string out;
  for (Phoneme p : seq) out += phoneme_codepoints(p);
  return out;
}

/// Granularity of a word-level edit distance.
enum class DistanceUnit : std::uint8_t {
  Phoneme,    // one edit per inventory phoneme
  Codepoint,  // one edit per Unicode codepoint of the rendered IPA string
};

inline std::size_t ipa_distance(const PhonemeSeq& a, const PhonemeSeq& b, DistanceUnit unit) {
  if (unit == DistanceUnit::Phoneme) return levenshtein(a, b);
  return detail::unit_levenshtein(ipa_codepoints(a), ipa_codepoints(b));
}

enum class EditKind : std::uint8_t { Match, Substitute, Delete, Insert };

/// One edit operation. `target` is unset for Insert, `predicted` for Delete.
struct EditOp {
  EditKind kind;
  std::optional<Phoneme> target;
  std::optional<Phoneme> predicted;

  bool operator==(const EditOp&) const = default;

  static EditOp match(Phoneme p) { return {EditKind::Match, p, p}; }
  static EditOp substitute(Phoneme t, Phoneme p) { return {EditKind::Substitute, t, p}; }
  static EditOp remove(Phoneme t) { return {EditKind::Delete, t, std::nullopt}; }
  static EditOp insert(Phoneme p) { return {EditKind::Insert, std::nullopt, p}; }
};

using EditScript = std::vector<EditOp>;

inline std::size_t edit_cost(const EditScript& script) {
  return static_cast<std::size_t>(std::count_if(script.begin(), script.end(), [](const EditOp& op) {
    return op.kind != EditKind::Match;
  }));
}

/// A minimal-cost edit script from `target` to `predicted`.
///
/// Traceback starts at the end of both sequences and, at each cell, takes the
/// first optimal move in the order Match, Substitute, Delete, Insert.
inline EditScript align(const PhonemeSeq& target, const PhonemeSeq& predicted) {
  const std::size_t n = target.size(), m = predicted.size();
  std::vector<std::size_t> dist((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return dist[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t sub = at(i - 1, j - 1) + (target[i - 1] == predicted[j - 1] ? 0 : 1);
      at(i, j) = std::min({sub, at(i - 1, j) + 1, at(i, j - 1) + 1});
    }
  }

  EditScript script;
  script.reserve(n + m);
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    const std::size_t here = at(i, j);
    if (i > 0 && j > 0 && target[i - 1] == predicted[j - 1] && at(i - 1, j - 1) == here) {
      script.push_back(EditOp::match(target[i - 1]));
      --i, --j;
    } else if (i > 0 && j > 0 && at(i - 1, j - 1) + 1 == here) {
      script.push_back(EditOp::substitute(target[i - 1], predicted[j - 1]));
      --i, --j;
    } else if (i > 0 && at(i - 1, j) + 1 == here) {
      script.push_back(EditOp::remove(target[i - 1]));
      --i;
    } else {
      script.push_back(EditOp::insert(predicted[j - 1]));
      --j;
    }
  }
  std::reverse(script.begin(), script.end());
  return script;
}

}  // namespace ipascribe
