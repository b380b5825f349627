#pragma once

// Prediction-pair fixtures shared by the analysis tests and the acceptance run.

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ipascribe/analysis.hpp"
#include "test_helpers.hpp"

namespace fixtures {

using ipascribe::PredictionPair;
using testing_helpers::seq;

/// ŋ aligned 57 times: 40 matches, 10 substitutions (ŋ→n), 7 deletions.
inline std::vector<PredictionPair> eng_accuracy_pairs() {
  std::vector<PredictionPair> out;
  for (int i = 0; i < 40; ++i) out.push_back(ipascribe::make_prediction_pair("ok", "", seq({"a", "ŋ"}), seq({"a", "ŋ"})));
  for (int i = 0; i < 10; ++i) out.push_back(ipascribe::make_prediction_pair("sub", "", seq({"a", "ŋ"}), seq({"a", "n"})));
  for (int i = 0; i < 7; ++i) out.push_back(ipascribe::make_prediction_pair("del", "", seq({"a", "ŋ"}), seq({"a"})));
  return out;
}

struct PairCount {
  const char* target;
  const char* predicted;
  std::size_t count;
};

/// Head of the reference error-pair ranking, in basis points of all errors.
inline const std::vector<PairCount>& error_pair_head() {
  static const std::vector<PairCount> head = {
      {"o", "ɔ", 1203}, {"e", "ɛ", 651}, {"ɛ", "e", 546}, {"ɑ", "a", 316},
      {"ɔ", "o", 307},  {"t", "d", 125}, {"ɛ", "a", 104}, {"a", "ɑ", 83},
  };
  return head;
}

/// 10000 single-phoneme substitutions: the head above plus a tail of other
/// pairs, each rarer than the last head entry.
inline std::vector<PredictionPair> error_pair_corpus() {
  std::vector<PredictionPair> out;
  std::size_t used = 0;
  auto add = [&](ipascribe::Phoneme t, ipascribe::Phoneme p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
      out.push_back(ipascribe::make_prediction_pair("w", "", {t}, {p}));
    used += n;
  };
  for (const auto& h : error_pair_head()) add(testing_helpers::P(h.target), testing_helpers::P(h.predicted), h.count);
  auto in_head = [](ipascribe::Phoneme t, ipascribe::Phoneme p) {
    for (const auto& h : error_pair_head())
      if (testing_helpers::P(h.target) == t && testing_helpers::P(h.predicted) == p) return true;
    return false;
  };
  for (std::uint8_t t = 0; t < ipascribe::kPhonemeCount && used < 10000; ++t)
    for (std::uint8_t p = 0; p < ipascribe::kPhonemeCount && used < 10000; ++p) {
      const ipascribe::Phoneme pt(t), pp(p);
      if (t == p || in_head(pt, pp)) continue;
      add(pt, pp, std::min<std::size_t>(81, 10000 - used));
    }
  return out;
}

struct SuspectRow {
  std::string word;
  std::string target;
  std::string predicted;
  std::size_t distance;
};

/// Rows in reference order.
inline std::vector<SuspectRow> suspect_rows() {
  std::ifstream in(std::string(IPASCRIBE_TEST_DATA) + "/suspects_reference.tsv");
  if (!in) throw std::runtime_error("missing suspects_reference.tsv");
  std::vector<SuspectRow> rows;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream s(line);
    SuspectRow r;
    std::string d;
    std::getline(s, r.word, '\t');
    std::getline(s, r.target, '\t');
    std::getline(s, r.predicted, '\t');
    std::getline(s, d, '\t');
    r.distance = std::stoul(d);
    rows.push_back(std::move(r));
  }
  return rows;
}

inline std::vector<PredictionPair> suspect_pairs() {
  std::vector<PredictionPair> out;
  for (const auto& r : suspect_rows())
    out.push_back(ipascribe::make_prediction_pair(r.word, r.word + ".wav", ipascribe::tokenize_ipa(r.target),
                                                  ipascribe::tokenize_ipa(r.predicted)));
  return out;
}

}  // namespace fixtures
