#pragma once

#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

#include "ipascribe/ipa.hpp"

namespace testing_helpers {

inline ipascribe::Phoneme P(std::string_view symbol) {
  auto p = ipascribe::phoneme_from_symbol(symbol);
  if (!p) throw std::invalid_argument("not an inventory symbol: " + std::string(symbol));
  return *p;
}

inline ipascribe::PhonemeSeq seq(std::initializer_list<std::string_view> symbols) {
  ipascribe::PhonemeSeq out;
  for (auto s : symbols) out.push_back(P(s));
  return out;
}

inline ipascribe::PhonemeSeq random_seq(std::mt19937_64& rng, std::size_t max_len,
                                        std::size_t alphabet = ipascribe::kPhonemeCount) {
  std::uniform_int_distribution<std::size_t> len(0, max_len);
  std::uniform_int_distribution<std::size_t> id(0, alphabet - 1);
  ipascribe::PhonemeSeq out(len(rng));
  for (auto& p : out) p = ipascribe::Phoneme(static_cast<std::uint8_t>(id(rng)));
  return out;
}

}  // namespace testing_helpers
