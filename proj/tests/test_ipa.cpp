#include <gtest/gtest.h>

#include <random>
#include <set>

#include "ipascribe/ipa.hpp"
#include "oracles/edit_oracle.hpp"
#include "test_helpers.hpp"

using namespace ipascribe;
using testing_helpers::P;
using testing_helpers::random_seq;
using testing_helpers::seq;

TEST(Inventory, HasThirtySevenDistinctSymbols) {
  std::set<std::string_view> symbols;
  for (Phoneme p : inventory()) symbols.insert(p.symbol());
  EXPECT_EQ(symbols.size(), 37u);
}

TEST(Inventory, IdSymbolBijection) {
  for (Phoneme p : inventory()) {
    auto back = phoneme_from_symbol(p.symbol());
    ASSERT_TRUE(back.has_value());
    EXPECT_EQ(back->id(), p.id());
  }
}

TEST(Inventory, NasalVowelsAreBasePlusCombiningTilde) {
  for (auto sym : {"ɛ̃", "ɑ̃", "ɔ̃", "œ̃"}) {
    auto cps = phoneme_codepoints(P(sym));
    ASSERT_EQ(cps.size(), 2u) << sym;
    EXPECT_EQ(cps[1], U'\x0303');
  }
}

TEST(Inventory, SymbolsAreNfc) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  ASSERT_FALSE(U_FAILURE(status));
  for (Phoneme p : inventory()) {
    auto sym = p.symbol();
    auto u = icu::UnicodeString::fromUTF8(icu::StringPiece(sym.data(), static_cast<int32_t>(sym.size())));
    EXPECT_TRUE(nfc->isNormalized(u, status)) << sym;
  }
}

TEST(Tokenize, Bonjour) {
  EXPECT_EQ(tokenize_ipa("bɔ̃ʒuʁ"), seq({"b", "ɔ̃", "ʒ", "u", "ʁ"}));
}

TEST(Tokenize, Empty) { EXPECT_TRUE(tokenize_ipa("").empty()); }

TEST(Tokenize, DotStripped) { EXPECT_EQ(tokenize_ipa("a.bɛ"), seq({"a", "b", "ɛ"})); }

TEST(Tokenize, UnknownSymbolReportsPositionAndCodepoint) {
  try {
    tokenize_ipa("bra");
    FAIL() << "expected UnknownSymbol";
  } catch (const UnknownSymbol& e) {
    EXPECT_EQ(e.position(), 1u);
    EXPECT_EQ(e.codepoint(), U'r');
  }
}

TEST(Tokenize, StripsAllOptionalSymbols) {
  // tie bar, undertie, stress, length, parentheses, hyphen, space, dot
  EXPECT_EQ(tokenize_ipa("ˈt͡s(a)ː-b‿ɛ . a"), seq({"t", "s", "a", "b", "ɛ", "a"}));
}

TEST(Tokenize, SpaceLikeCharactersStripped) {
  EXPECT_EQ(tokenize_ipa("a b ɛ a"), seq({"a", "b", "ɛ", "a"}));
}

TEST(Tokenize, NasalPreferredOverOralVowel) {
  EXPECT_EQ(tokenize_ipa("ɑ̃ɑ"), seq({"ɑ̃", "ɑ"}));
  EXPECT_EQ(tokenize_ipa("œ̃"), seq({"œ̃"}));
}

TEST(Tokenize, PrecomposedTildeDecomposesAndIsRejected) {
  // "õ" normalizes to o + U+0303, which is no inventory symbol.
  EXPECT_THROW(tokenize_ipa("õ"), UnknownSymbol);
}

TEST(Tokenize, ScriptGIsAcceptedAsG) { EXPECT_EQ(tokenize_ipa("ɡa"), seq({"g", "a"})); }

TEST(Tokenize, StrayCombiningTildeIsUnknown) {
  EXPECT_THROW(tokenize_ipa("̃a"), UnknownSymbol);
}

TEST(Render, Bonjour) { EXPECT_EQ(render_ipa(seq({"b", "ɔ̃", "ʒ", "u", "ʁ"})), "bɔ̃ʒuʁ"); }

TEST(Render, Empty) { EXPECT_EQ(render_ipa({}), ""); }

TEST(Render, RoundTripRandomSequences) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 1000; ++i) {
    auto s = random_seq(rng, 25);
    ASSERT_EQ(tokenize_ipa(render_ipa(s)), s);
  }
}

TEST(Tokenize, IdempotentOnStrippedText) {
  for (auto text : {"ˈbɔ̃.ʒuʁ", "a‿ɛ̃ː", "(ʁ)ə-ɡa"}) {
    auto once = tokenize_ipa(text);
    EXPECT_EQ(tokenize_ipa(render_ipa(once)), once);
  }
}

TEST(Levenshtein, SuspectRow1337PhonemeVersusCodepoint) {
  auto target = seq({"l", "i", "t"});
  auto predicted = seq({"m", "i", "t", "a", "s", "ɑ̃", "t", "ʁ", "ɑ̃", "m", "z", "ɔ", "t"});
  // l->m, keep i t, insert ten phonemes.
  EXPECT_EQ(oracle::levenshtein_recursive(seq({"l", "i"}), seq({"m", "i", "t"})), 2u);
  EXPECT_EQ(levenshtein(target, predicted), 11u);
  // The reference value counts the two nasal vowels as two codepoints each.
  EXPECT_EQ(ipa_distance(target, predicted, DistanceUnit::Codepoint), 13u);
  EXPECT_EQ(ipa_distance(target, predicted, DistanceUnit::Phoneme), 11u);
}

TEST(Levenshtein, CodepointUnitEqualsPhonemeUnitWithoutNasals) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 200; ++i) {
    auto a = random_seq(rng, 10, 12);  // ids 0..11 are single-codepoint symbols
    auto b = random_seq(rng, 10, 12);
    EXPECT_EQ(ipa_distance(a, b, DistanceUnit::Codepoint), levenshtein(a, b));
  }
}

TEST(Levenshtein, IdenticalIsZero) {
  auto s = seq({"b", "ɔ̃", "ʒ", "u", "ʁ"});
  EXPECT_EQ(levenshtein(s, s), 0u);
}

TEST(Levenshtein, SingleDeletion) {
  auto a = seq({"a", "b", "ɛ"});
  auto b = seq({"a", "ɛ"});
  EXPECT_EQ(oracle::levenshtein_recursive(a, b), 1u);
  EXPECT_EQ(levenshtein(a, b), 1u);
}

TEST(Levenshtein, MatchesRecursiveOracle) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 300; ++i) {
    auto a = random_seq(rng, 6, 4);
    auto b = random_seq(rng, 6, 4);
    ASSERT_EQ(levenshtein(a, b), oracle::levenshtein_recursive(a, b));
  }
}

TEST(Levenshtein, MetricAxioms) {
  std::mt19937_64 rng(13);
  for (int i = 0; i < 1000; ++i) {
    auto a = random_seq(rng, 19, 6);
    auto b = random_seq(rng, 19, 6);
    auto c = random_seq(rng, 19, 6);
    const auto ab = levenshtein(a, b);
    EXPECT_EQ(ab, levenshtein(b, a));
    EXPECT_EQ(ab == 0, a == b);
    EXPECT_LE(levenshtein(a, c), ab + levenshtein(b, c));
  }
}

TEST(Align, IdenticalIsAllMatches) {
  auto s = seq({"a", "b"});
  EXPECT_EQ(align(s, s), (EditScript{EditOp::match(P("a")), EditOp::match(P("b"))}));
}

TEST(Align, ForcedSubstitution) {
  EXPECT_EQ(align(seq({"o"}), seq({"ɔ"})), (EditScript{EditOp::substitute(P("o"), P("ɔ"))}));
}

TEST(Align, TieBreakPicksMatchDeleteMatch) {
  auto target = seq({"a", "b", "ɛ"});
  auto predicted = seq({"a", "ɛ"});
  auto minimal = oracle::all_scripts_with_cost(target, predicted, 1);
  ASSERT_FALSE(minimal.empty());
  const EditScript expected{EditOp::match(P("a")), EditOp::remove(P("b")), EditOp::match(P("ɛ"))};
  EXPECT_EQ(oracle::preferred_script(minimal), expected);
  EXPECT_EQ(align(target, predicted), expected);
}

TEST(Align, DeleteAtEnd) {
  EXPECT_EQ(align(seq({"a", "b"}), seq({"a"})),
            (EditScript{EditOp::match(P("a")), EditOp::remove(P("b"))}));
}

TEST(Align, AgreesWithEnumeratedTieBreak) {
  std::mt19937_64 rng(17);
  for (int i = 0; i < 200; ++i) {
    auto a = random_seq(rng, 5, 3);
    auto b = random_seq(rng, 5, 3);
    auto all = oracle::all_scripts_with_cost(a, b, levenshtein(a, b));
    ASSERT_EQ(align(a, b), oracle::preferred_script(all));
  }
}

TEST(Align, CostEqualsDistanceAndReplaysBothSides) {
  std::mt19937_64 rng(19);
  for (int i = 0; i < 1000; ++i) {
    auto a = random_seq(rng, 19);
    auto b = random_seq(rng, 19);
    auto script = align(a, b);
    EXPECT_EQ(edit_cost(script), levenshtein(a, b));
    PhonemeSeq ra, rb;
    for (const auto& op : script) {
      if (op.target) ra.push_back(*op.target);
      if (op.predicted) rb.push_back(*op.predicted);
    }
    EXPECT_EQ(ra, a);
    EXPECT_EQ(rb, b);
  }
}
