#pragma once

// Error analytics over (target, predicted) transcription pairs.

#include <nlohmann/json.hpp>
#include <unicode/coll.h>
#include <unicode/locid.h>
#include <unicode/unistr.h>

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ipascribe/errors.hpp"
#include "ipascribe/ipa.hpp"

namespace ipascribe {

struct PredictionPair {
  std::string word;
  std::string filename;
  PhonemeSeq target;
  PhonemeSeq predicted;
  std::size_t distance = 0;  // ipa_distance(target, predicted, unit)
};

inline PredictionPair make_prediction_pair(std::string word, std::string filename, PhonemeSeq target,
                                           PhonemeSeq predicted, DistanceUnit unit = DistanceUnit::Codepoint) {
  const std::size_t d = ipa_distance(target, predicted, unit);
  return {std::move(word), std::move(filename), std::move(target), std::move(predicted), d};
}

// ---------------------------------------------------------------------------
// Per-phoneme accuracy and confusion

struct PhonemeAccuracy {
  Phoneme phoneme;
  std::size_t correct = 0;
  std::size_t incorrect = 0;

  double accuracy() const {
    const auto n = correct + incorrect;
    return n ? static_cast<double>(correct) / static_cast<double>(n) : 0.0;
  }
};

/// Rows for target phonemes that occur at least once, in inventory order.
inline std::vector<PhonemeAccuracy> phoneme_accuracy(const std::vector<PredictionPair>& pairs) {
  std::array<PhonemeAccuracy, kPhonemeCount> acc{};
  for (std::size_t i = 0; i < kPhonemeCount; ++i) acc[i].phoneme = Phoneme(static_cast<std::uint8_t>(i));
  for (const auto& p : pairs)
    for (const auto& op : align(p.target, p.predicted)) {
      if (!op.target) continue;
      auto& row = acc[op.target->id()];
      if (op.kind == EditKind::Match)
        ++row.correct;
      else
        ++row.incorrect;
    }
  std::vector<PhonemeAccuracy> out;
  for (const auto& r : acc)
    if (r.correct + r.incorrect > 0) out.push_back(r);
  return out;
}

inline constexpr std::size_t kDeletedColumn = kPhonemeCount;

struct ConfusionMatrix {
  // counts[target][predicted], column kDeletedColumn counts deletions.
  std::array<std::array<std::size_t, kPhonemeCount + 1>, kPhonemeCount> counts{};
  // Insertions per predicted phoneme; reported, not part of the matrix.
  std::array<std::size_t, kPhonemeCount> inserted{};

  std::size_t row_total(std::size_t target) const {
    std::size_t n = 0;
    for (auto c : counts[target]) n += c;
    return n;
  }

  /// Row-normalized proportion; 0 for rows with no occurrences.
  double proportion(std::size_t target, std::size_t column) const {
    const auto n = row_total(target);
    return n ? static_cast<double>(counts[target][column]) / static_cast<double>(n) : 0.0;
  }
};

inline ConfusionMatrix confusion_matrix(const std::vector<PredictionPair>& pairs) {
  ConfusionMatrix m;
  for (const auto& p : pairs)
    for (const auto& op : align(p.target, p.predicted)) switch (op.kind) {
        case EditKind::Match:
        case EditKind::Substitute:
          ++m.counts[op.target->id()][op.predicted->id()];
          break;
        case EditKind::Delete:
          ++m.counts[op.target->id()][kDeletedColumn];
          break;
        case EditKind::Insert:
          ++m.inserted[op.predicted->id()];
          break;
      }
  return m;
}

struct ErrorPair {
  Phoneme target;
  Phoneme predicted;
  std::size_t count = 0;
  double share = 0.0;  // of all substitutions
};

/// Substitutions ranked by count (ties: target id, then predicted id).
inline std::vector<ErrorPair> error_pairs(const std::vector<PredictionPair>& pairs) {
  const auto m = confusion_matrix(pairs);
  std::vector<ErrorPair> out;
  std::size_t total = 0;
  for (std::size_t t = 0; t < kPhonemeCount; ++t)
    for (std::size_t p = 0; p < kPhonemeCount; ++p)
      if (t != p && m.counts[t][p] > 0) {
        out.push_back({Phoneme(static_cast<std::uint8_t>(t)), Phoneme(static_cast<std::uint8_t>(p)), m.counts[t][p], 0.0});
        total += m.counts[t][p];
      }
  for (auto& e : out) e.share = static_cast<double>(e.count) / static_cast<double>(total);
  std::stable_sort(out.begin(), out.end(), [](const ErrorPair& a, const ErrorPair& b) { return a.count > b.count; });
  return out;
}

// ---------------------------------------------------------------------------
// Word-level statistics

struct DistanceStats {
  double mean = 0.0;
  double std = 0.0;  // population
};

inline DistanceStats distance_stats(const std::vector<PredictionPair>& pairs) {
  if (pairs.empty()) throw EmptyInput("distance statistics need at least one pair");
  double sum = 0.0;
  for (const auto& p : pairs) sum += static_cast<double>(p.distance);
  const double mean = sum / static_cast<double>(pairs.size());
  double sq = 0.0;
  for (const auto& p : pairs) sq += (static_cast<double>(p.distance) - mean) * (static_cast<double>(p.distance) - mean);
  return {mean, std::sqrt(sq / static_cast<double>(pairs.size()))};
}

struct LengthAccuracy {
  // Mean phoneme counts of targets and of predictions, split by exact match.
  std::optional<double> exact_target;
  std::optional<double> wrong_target;
  std::optional<double> exact_predicted;
  std::optional<double> wrong_predicted;
};

inline LengthAccuracy length_accuracy(const std::vector<PredictionPair>& pairs) {
  if (pairs.empty()) throw EmptyInput("length accuracy needs at least one pair");
  double et = 0, wt = 0, ep = 0, wp = 0;
  std::size_t ne = 0, nw = 0;
  for (const auto& p : pairs) {
    if (p.target == p.predicted) {
      et += static_cast<double>(p.target.size());
      ep += static_cast<double>(p.predicted.size());
      ++ne;
    } else {
      wt += static_cast<double>(p.target.size());
      wp += static_cast<double>(p.predicted.size());
      ++nw;
    }
  }
  LengthAccuracy r;
  if (ne) r.exact_target = et / static_cast<double>(ne), r.exact_predicted = ep / static_cast<double>(ne);
  if (nw) r.wrong_target = wt / static_cast<double>(nw), r.wrong_predicted = wp / static_cast<double>(nw);
  return r;
}

// ---------------------------------------------------------------------------
// Suspects

struct Suspect {
  std::string word;
  std::string filename;
  std::string target_ipa;
  std::string predicted_ipa;
  std::size_t distance = 0;

  bool operator==(const Suspect&) const = default;
};

struct OutlierReport {
  std::vector<Suspect> rows;
};

struct SuspectQuery {
  std::optional<std::size_t> top_k;
  std::optional<std::size_t> min_distance;
};

namespace detail {

/// Locale-aware word comparison (French collation), falling back to bytes so
/// the order is total.
class WordOrder {
 public:
  WordOrder() {
    UErrorCode err = U_ZERO_ERROR;
    coll_.reset(icu::Collator::createInstance(icu::Locale::getFrench(), err));
    if (U_FAILURE(err)) coll_.reset();
  }

  int compare(const std::string& a, const std::string& b) const {
    if (coll_) {
      UErrorCode err = U_ZERO_ERROR;
      const auto r = coll_->compare(icu::UnicodeString::fromUTF8(a), icu::UnicodeString::fromUTF8(b), err);
      if (U_SUCCESS(err) && r != UCOL_EQUAL) return r == UCOL_LESS ? -1 : 1;
    }
    return a.compare(b);
  }

 private:
  std::unique_ptr<icu::Collator> coll_;
};

}  // namespace detail

/// Ranked by distance (descending), ties by word then filename. `min_distance`
/// filters first, `top_k` truncates after.
inline OutlierReport suspects(const std::vector<PredictionPair>& pairs, const SuspectQuery& q = {}) {
  OutlierReport r;
  for (const auto& p : pairs) {
    if (q.min_distance && p.distance < *q.min_distance) continue;
    r.rows.push_back({p.word, p.filename, render_ipa(p.target), render_ipa(p.predicted), p.distance});
  }
  const detail::WordOrder order;
  std::sort(r.rows.begin(), r.rows.end(), [&](const Suspect& a, const Suspect& b) {
    if (a.distance != b.distance) return a.distance > b.distance;
    if (const int c = order.compare(a.word, b.word); c != 0) return c < 0;
    return a.filename < b.filename;
  });
  if (q.top_k && r.rows.size() > *q.top_k) r.rows.resize(*q.top_k);
  return r;
}

inline void to_json(nlohmann::json& j, const Suspect& s) {
  j = {{"word", s.word},
       {"filename", s.filename},
       {"target", s.target_ipa},
       {"predicted", s.predicted_ipa},
       {"distance", s.distance}};
}

inline std::string suspects_csv(const OutlierReport& r) {
  auto esc = [](const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
      if (c == '"') out += '"';
      out += c;
    }
    return out + "\"";
  };
  std::string out = "word,filename,target,predicted,distance\n";
  for (const auto& s : r.rows)
    out += esc(s.word) + "," + esc(s.filename) + "," + esc(s.target_ipa) + "," + esc(s.predicted_ipa) + "," +
           std::to_string(s.distance) + "\n";
  return out;
}

inline nlohmann::json suspects_json(const OutlierReport& r) { return nlohmann::json(r.rows); }

// ---------------------------------------------------------------------------
// Report bundle

inline std::string confusion_csv(const ConfusionMatrix& m) {
  std::ostringstream out;
  out.precision(6);
  out << "target";
  for (std::size_t c = 0; c < kPhonemeCount; ++c) out << "," << Phoneme(static_cast<std::uint8_t>(c)).symbol();
  out << ",deleted\n";
  for (std::size_t t = 0; t < kPhonemeCount; ++t) {
    out << Phoneme(static_cast<std::uint8_t>(t)).symbol();
    for (std::size_t c = 0; c <= kPhonemeCount; ++c) out << "," << std::fixed << m.proportion(t, c);
    out << "\n";
  }
  return out.str();
}

inline nlohmann::json pair_json(const PredictionPair& p) {
  return {{"word", p.word},
          {"filename", p.filename},
          {"target", render_ipa(p.target)},
          {"predicted", render_ipa(p.predicted)},
          {"distance", p.distance}};
}

inline nlohmann::json report_json(const std::vector<PredictionPair>& pairs, DistanceUnit unit) {
  nlohmann::json j;
  std::size_t exact = 0;
  for (const auto& p : pairs) exact += p.target == p.predicted ? 1 : 0;
  j["samples"] = pairs.size();
  j["accuracy"] = pairs.empty() ? 0.0 : static_cast<double>(exact) / static_cast<double>(pairs.size());
  j["distance_unit"] = unit == DistanceUnit::Codepoint ? "codepoint" : "phoneme";

  auto& acc = j["phoneme_accuracy"] = nlohmann::json::array();
  for (const auto& r : phoneme_accuracy(pairs))
    acc.push_back({{"phoneme", r.phoneme.symbol()}, {"correct", r.correct}, {"incorrect", r.incorrect},
                   {"accuracy", r.accuracy()}});

  const auto cm = confusion_matrix(pairs);
  auto& conf = j["confusion"];
  conf["columns"] = nlohmann::json::array();
  for (std::size_t c = 0; c < kPhonemeCount; ++c) conf["columns"].push_back(Phoneme(static_cast<std::uint8_t>(c)).symbol());
  conf["columns"].push_back("deleted");
  conf["counts"] = nlohmann::json::array();
  for (std::size_t t = 0; t < kPhonemeCount; ++t) conf["counts"].push_back(cm.counts[t]);
  conf["inserted"] = cm.inserted;

  auto& ep = j["error_pairs"] = nlohmann::json::array();
  for (const auto& e : error_pairs(pairs))
    ep.push_back({{"target", e.target.symbol()}, {"predicted", e.predicted.symbol()}, {"count", e.count},
                  {"share", e.share}});

  if (!pairs.empty()) {
    const auto ds = distance_stats(pairs);
    j["distance"] = {{"mean", ds.mean}, {"std", ds.std}};
    const auto la = length_accuracy(pairs);
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); };
    j["length"] = {{"exact_target_mean", opt(la.exact_target)},
                   {"wrong_target_mean", opt(la.wrong_target)},
                   {"exact_predicted_mean", opt(la.exact_predicted)},
                   {"wrong_predicted_mean", opt(la.wrong_predicted)}};
  }
  auto& pj = j["pairs"] = nlohmann::json::array();
  for (const auto& p : pairs) pj.push_back(pair_json(p));
  return j;
}

inline std::string report_markdown(const std::vector<PredictionPair>& pairs, std::size_t top = 10) {
  std::ostringstream md;
  md.setf(std::ios::fixed);
  md.precision(2);
  std::size_t exact = 0;
  for (const auto& p : pairs) exact += p.target == p.predicted ? 1 : 0;
  md << "# Evaluation report\n\n";
  md << "Samples: " << pairs.size() << "  \nExact-match accuracy: "
     << (pairs.empty() ? 0.0 : static_cast<double>(exact) / static_cast<double>(pairs.size())) << "\n\n";

  auto rows = phoneme_accuracy(pairs);
  std::stable_sort(rows.begin(), rows.end(),
                   [](const PhonemeAccuracy& a, const PhonemeAccuracy& b) { return a.accuracy() < b.accuracy(); });
  md << "## Accuracy per phoneme\n\n| Phoneme | Correct | Incorrect | Accuracy |\n|---|---:|---:|---:|\n";
  for (const auto& r : rows)
    md << "| " << r.phoneme.symbol() << " | " << r.correct << " | " << r.incorrect << " | " << r.accuracy() << " |\n";

  md << "\n## Most frequent substitutions\n\n| Target | Predicted | Share of errors |\n|---|---|---:|\n";
  const auto ep = error_pairs(pairs);
  for (std::size_t i = 0; i < std::min<std::size_t>(ep.size(), top); ++i)
    md << "| " << ep[i].target.symbol() << " | " << ep[i].predicted.symbol() << " | " << 100.0 * ep[i].share << "% |\n";

  if (!pairs.empty()) {
    const auto ds = distance_stats(pairs);
    md << "\n## Levenshtein distance\n\n| Samples | Mean | Std |\n|---:|---:|---:|\n";
    md << "| " << pairs.size() << " | " << ds.mean << " | " << ds.std << " |\n";
    const auto la = length_accuracy(pairs);
    auto fmt = [](const std::optional<double>& v) {
      if (!v) return std::string("n/a");
      std::ostringstream s;
      s.setf(std::ios::fixed);
      s.precision(2);
      s << *v;
      return s.str();
    };
    md << "\n## Length of exact vs wrong transcriptions\n\n| | Exact | Wrong |\n|---|---:|---:|\n";
    md << "| Target length | " << fmt(la.exact_target) << " | " << fmt(la.wrong_target) << " |\n";
    md << "| Predicted length | " << fmt(la.exact_predicted) << " | " << fmt(la.wrong_predicted) << " |\n";
  }

  md << "\n## Highest distances\n\n| Word | Target | Prediction | Distance |\n|---|---|---|---:|\n";
  for (const auto& s : suspects(pairs, {.top_k = top}).rows)
    md << "| " << s.word << " | /" << s.target_ipa << "/ | /" << s.predicted_ipa << "/ | " << s.distance << " |\n";
  return md.str();
}

inline void write_report(const std::filesystem::path& dir, const std::vector<PredictionPair>& pairs,
                         DistanceUnit unit = DistanceUnit::Codepoint, const nlohmann::json& extra = {}) {
  std::filesystem::create_directories(dir);
  auto j = report_json(pairs, unit);
  if (extra.is_object()) j.update(extra);
  auto put = [&](const std::string& name, const std::string& text) {
    std::ofstream out(dir / name, std::ios::binary);
    out << text;
    if (!out) throw IoError("cannot write " + (dir / name).string());
  };
  put("report.json", j.dump(2) + "\n");
  put("report.md", report_markdown(pairs));
  put("confusion.csv", confusion_csv(confusion_matrix(pairs)));
}

/// Pairs stored in a report bundle, with distances as recorded.
inline std::vector<PredictionPair> read_report_pairs(const std::filesystem::path& dir) {
  std::ifstream in(dir / "report.json");
  if (!in) throw IoError("cannot open " + (dir / "report.json").string());
  nlohmann::json j;
  try {
    in >> j;
    std::vector<PredictionPair> out;
    for (const auto& p : j.at("pairs"))
      out.push_back({p.at("word").get<std::string>(), p.value("filename", ""), tokenize_ipa(p.at("target").get<std::string>()),
                     tokenize_ipa(p.at("predicted").get<std::string>()), p.at("distance").get<std::size_t>()});
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed report.json: " + std::string(e.what()));
  }
}

}  // namespace ipascribe
