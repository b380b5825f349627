#pragma once

// Manifest parsing, sample filtering, and audio fetching.

#include <openssl/evp.h>
#include <unicode/ustring.h>

#include <algorithm>
#include <array>
#include <atomic>
#include <cctype>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "ipascribe/errors.hpp"
#include "ipascribe/ipa.hpp"

namespace ipascribe {

struct PageRecord {
  std::string word;
  std::string language;
  std::vector<std::string> ipa_pronunciations;
  std::vector<std::string> audio_filenames;

  bool operator==(const PageRecord&) const = default;
};

struct SampleRecord {
  std::string word;
  std::string audio_filename;
  PhonemeSeq ipa;
  std::string speaker;

  bool operator==(const SampleRecord&) const = default;
};

// ---------------------------------------------------------------------------
// CSV (RFC 4180)

namespace detail {

inline bool valid_utf8(std::string_view s) {
  UErrorCode err = U_ZERO_ERROR;
  int32_t len = 0;
  u_strFromUTF8(nullptr, 0, &len, s.data(), static_cast<int32_t>(s.size()), &err);
  return err == U_BUFFER_OVERFLOW_ERROR || err == U_STRING_NOT_TERMINATED_WARNING || U_SUCCESS(err);
}

struct CsvRow {
  std::size_t line = 0;  // 1-based line where the row starts
  std::vector<std::string> cells;
};

/// Splits RFC 4180 text into rows. Quoted cells may contain commas, doubled
/// quotes and line breaks. CRLF and LF are both accepted.
inline std::vector<CsvRow> parse_csv(std::string_view text) {
  std::vector<CsvRow> rows;
  std::size_t i = 0, line = 1;
  while (i < text.size()) {
    CsvRow row;
    row.line = line;
    std::string cell;
    bool in_quotes = false, quoted = false, done = false;
    while (!done) {
      if (i >= text.size()) {
        if (in_quotes) throw MalformedRow(row.line, "unterminated quoted cell");
        row.cells.push_back(std::move(cell));
        break;
      }
      const char c = text[i];
      if (in_quotes) {
        if (c == '"') {
          if (i + 1 < text.size() && text[i + 1] == '"') {
            cell.push_back('"');
            i += 2;
          } else {
            in_quotes = false;
            ++i;
          }
        } else {
          if (c == '\n') ++line;
          cell.push_back(c);
          ++i;
        }
        continue;
      }
      switch (c) {
        case '"':
          if (!cell.empty() || quoted) throw MalformedRow(line, "stray quote inside unquoted cell");
          in_quotes = quoted = true;
          ++i;
          break;
        case ',':
          row.cells.push_back(std::move(cell));
          cell.clear();
          quoted = false;
          ++i;
          break;
        case '\r':
          if (i + 1 < text.size() && text[i + 1] == '\n') ++i;
          [[fallthrough]];
        case '\n':
          row.cells.push_back(std::move(cell));
          ++i;
          ++line;
          done = true;
          break;
        default:
          if (quoted) throw MalformedRow(line, "text after closing quote");
          cell.push_back(c);
          ++i;
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string csv_escape(std::string_view cell) {
  if (cell.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(cell);
  std::string out = "\"";
  for (char c : cell) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

inline std::vector<std::string> split_list(const std::string& cell) {
  std::vector<std::string> out;
  if (cell.empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto bar = cell.find('|', start);
    out.push_back(cell.substr(start, bar - start));
    if (bar == std::string::npos) break;
    start = bar + 1;
  }
  return out;
}

inline std::string join_list(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out.push_back('|');
    out += items[i];
  }
  return out;
}

}  // namespace detail

inline constexpr std::string_view kManifestHeader = "word,language,ipa_list,audio_list";

/// Parses manifest text. The first row must be the fixed header; blank lines
/// are skipped.
inline std::vector<PageRecord> parse_manifest_text(std::string_view text) {
  if (!detail::valid_utf8(text)) throw IoError("manifest is not valid UTF-8");
  if (text.starts_with("\xEF\xBB\xBF")) text.remove_prefix(3);
  std::vector<PageRecord> out;
  const auto rows = detail::parse_csv(text);
  bool header_seen = false;
  for (const auto& row : rows) {
    if (row.cells.size() == 1 && row.cells[0].empty()) continue;
    if (!header_seen) {
      const std::vector<std::string> want{"word", "language", "ipa_list", "audio_list"};
      if (row.cells != want) throw MalformedRow(row.line, "expected header " + std::string(kManifestHeader));
      header_seen = true;
      continue;
    }
    if (row.cells.size() != 4)
      throw MalformedRow(row.line, "expected 4 cells, found " + std::to_string(row.cells.size()));
    if (row.cells[0].empty()) throw MalformedRow(row.line, "empty word");
    out.push_back({row.cells[0], row.cells[1], detail::split_list(row.cells[2]), detail::split_list(row.cells[3])});
  }
  return out;
}

inline std::vector<PageRecord> parse_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_manifest_text(buf.str());
}

inline std::string format_manifest(const std::vector<PageRecord>& pages) {
  std::string out(kManifestHeader);
  out += "\n";
  for (const auto& p : pages) {
    out += detail::csv_escape(p.word) + "," + detail::csv_escape(p.language) + "," +
           detail::csv_escape(detail::join_list(p.ipa_pronunciations)) + "," +
           detail::csv_escape(detail::join_list(p.audio_filenames)) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Filtering

/// Lingua Libre naming: "LL-<Qid> (<lang>)-<user>-<word>.wav".
inline bool is_lingua_libre_filename(std::string_view name) {
  static const std::regex pattern(R"(^LL-Q[0-9]+ \([^)]+\)-[^-]+-.+\.wav$)");
  return std::regex_match(name.begin(), name.end(), pattern);
}

inline std::string extract_speaker(std::string_view filename) {
  if (!is_lingua_libre_filename(filename)) throw PatternMismatch("not a Lingua Libre filename: " + std::string(filename));
  const auto start = filename.find(")-") + 2;
  const auto end = filename.find('-', start);
  return std::string(filename.substr(start, end - start));
}

struct FilterConfig {
  std::string language = "fra";
  std::size_t max_phonemes = 19;  // inclusive
};

inline constexpr std::array<std::string_view, 5> kFilterRules{"language", "single_ipa", "inventory", "length",
                                                               "lingua_libre"};

struct FilterStats {
  std::size_t input_count = 0;
  std::size_t kept_count = 0;
  std::map<std::string, std::size_t> rejected_by_rule;

  std::size_t rejected_total() const {
    std::size_t n = 0;
    for (const auto& [_, c] : rejected_by_rule) n += c;
    return n;
  }
};

/// Each (page, audio file) pair is one candidate; a page without audio files
/// counts as a single candidate. Candidates are attributed to the first rule
/// they fail.
inline std::pair<std::vector<SampleRecord>, FilterStats> filter_samples(const std::vector<PageRecord>& pages,
                                                                        const FilterConfig& cfg = {}) {
  std::vector<SampleRecord> kept;
  FilterStats stats;
  for (auto r : kFilterRules) stats.rejected_by_rule[std::string(r)] = 0;
  for (const auto& page : pages) {
    const std::size_t candidates = std::max<std::size_t>(1, page.audio_filenames.size());
    stats.input_count += candidates;
    auto reject_all = [&](std::string_view rule) { stats.rejected_by_rule[std::string(rule)] += candidates; };
    if (page.language != cfg.language) {
      reject_all("language");
      continue;
    }
    if (page.ipa_pronunciations.size() != 1) {
      reject_all("single_ipa");
      continue;
    }
    PhonemeSeq ipa;
    try {
      ipa = tokenize_ipa(page.ipa_pronunciations[0]);
    } catch (const UnknownSymbol&) {
      reject_all("inventory");
      continue;
    }
    if (ipa.empty()) {
      reject_all("inventory");
      continue;
    }
    if (ipa.size() > cfg.max_phonemes) {
      reject_all("length");
      continue;
    }
    if (page.audio_filenames.empty()) {
      reject_all("lingua_libre");
      continue;
    }
    for (const auto& audio : page.audio_filenames) {
      if (!is_lingua_libre_filename(audio)) {
        ++stats.rejected_by_rule["lingua_libre"];
        continue;
      }
      kept.push_back({page.word, audio, ipa, extract_speaker(audio)});
      ++stats.kept_count;
    }
  }
  return {std::move(kept), stats};
}

/// Samples file: the manifest's CSV dialect with the columns below; ipa is the
/// rendered phoneme string.
inline constexpr std::string_view kSamplesHeader = "word,audio_filename,ipa,speaker";

inline std::string format_samples(const std::vector<SampleRecord>& samples) {
  std::string out(kSamplesHeader);
  out += "\n";
  for (const auto& s : samples)
    out += detail::csv_escape(s.word) + "," + detail::csv_escape(s.audio_filename) + "," +
           detail::csv_escape(render_ipa(s.ipa)) + "," + detail::csv_escape(s.speaker) + "\n";
  return out;
}

inline std::vector<SampleRecord> parse_samples_text(std::string_view text) {
  if (!detail::valid_utf8(text)) throw IoError("samples file is not valid UTF-8");
  std::vector<SampleRecord> out;
  bool header_seen = false;
  for (const auto& row : detail::parse_csv(text)) {
    if (row.cells.size() == 1 && row.cells[0].empty()) continue;
    if (!header_seen) {
      const std::vector<std::string> want{"word", "audio_filename", "ipa", "speaker"};
      if (row.cells != want) throw MalformedRow(row.line, "expected header " + std::string(kSamplesHeader));
      header_seen = true;
      continue;
    }
    if (row.cells.size() != 4)
      throw MalformedRow(row.line, "expected 4 cells, found " + std::to_string(row.cells.size()));
    PhonemeSeq ipa;
    try {
      ipa = tokenize_ipa(row.cells[2]);
    } catch (const UnknownSymbol& e) {
      throw MalformedRow(row.line, e.what());
    }
    out.push_back({row.cells[0], row.cells[1], std::move(ipa), row.cells[3]});
  }
  return out;
}

inline std::vector<SampleRecord> read_samples(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open samples file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_samples_text(buf.str());
}

// ---------------------------------------------------------------------------
// Media URLs and fetching

namespace detail {

inline std::string digest_hex(const EVP_MD* md, std::string_view data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> out{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), out.data(), &len, md, nullptr) != 1) throw Error("digest failed");
  static const char* digits = "0123456789abcdef";
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex.push_back(digits[out[i] >> 4]);
    hex.push_back(digits[out[i] & 0xF]);
  }
  return hex;
}

/// Percent-encoding as done for MediaWiki file paths: everything but
/// unreserved characters and a small set of sub-delimiters is escaped.
inline std::string wiki_urlencode(std::string_view s) {
  static const std::string_view keep = "-_.~;@$!*(),/:";
  static const char* digits = "0123456789ABCDEF";
  std::string out;
  for (unsigned char c : s) {
    if (std::isalnum(c) || keep.find(static_cast<char>(c)) != std::string_view::npos) {
      out.push_back(static_cast<char>(c));
    } else {
      out.push_back('%');
      out.push_back(digits[c >> 4]);
      out.push_back(digits[c & 0xF]);
    }
  }
  return out;
}

}  // namespace detail

inline std::string sha1_hex(std::string_view data) { return detail::digest_hex(EVP_sha1(), data); }

/// Commons upload URL: directories come from the MD5 of the title with spaces
/// replaced by underscores.
inline std::string resolve_media_url(std::string_view filename) {
  if (filename.empty()) throw ConfigError("empty media filename");
  std::string title(filename);
  std::replace(title.begin(), title.end(), ' ', '_');
  const std::string md5 = detail::digest_hex(EVP_md5(), title);
  return "https://upload.wikimedia.org/wikipedia/commons/" + md5.substr(0, 1) + "/" + md5.substr(0, 2) + "/" +
         detail::wiki_urlencode(title);
}

struct HttpResponse {
  int status = 0;
  std::string body;
};

/// Blocking GET. Implementations throw Timeout when the request times out.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual HttpResponse get(const std::string& url) = 0;
};

struct FetchOptions {
  std::chrono::milliseconds min_interval{1000};
  int attempts = 3;
  std::chrono::milliseconds backoff{500};  // doubled after each failed attempt
  std::function<void(std::chrono::milliseconds)> sleep = [](std::chrono::milliseconds d) {
    std::this_thread::sleep_for(d);
  };
  std::function<std::chrono::steady_clock::time_point()> now = [] { return std::chrono::steady_clock::now(); };
};

/// Downloads into `<cache_dir>/<filename>`. Safe to share between threads:
/// requests are spaced by `min_interval`, files land via temp file + rename.
class AudioFetcher {
 public:
  AudioFetcher(Transport& transport, FetchOptions options = {}) : transport_(transport), opt_(std::move(options)) {}

  std::filesystem::path fetch(const std::string& url, const std::filesystem::path& cache_dir,
                              const std::string& filename, const std::optional<std::string>& sha1 = std::nullopt) {
    const auto target = cache_dir / filename;
    if (std::filesystem::exists(target)) return target;
    std::filesystem::create_directories(cache_dir);

    std::string body;
    for (int attempt = 1;; ++attempt) {
      try {
        const HttpResponse r = throttled_get(url);
        if (r.status == 200) {
          body = r.body;
          break;
        }
        const bool transient = r.status == 429 || r.status >= 500;
        if (!transient || attempt >= opt_.attempts) throw HttpError(r.status);
      } catch (const Timeout&) {
        if (attempt >= opt_.attempts) throw;
      }
      opt_.sleep(opt_.backoff * (1 << (attempt - 1)));
    }
    if (sha1 && sha1_hex(body) != *sha1) throw ChecksumMismatch("checksum mismatch for " + filename);

    static std::atomic<std::uint64_t> counter{0};
    const auto tmp = cache_dir / ("." + filename + ".part" + std::to_string(counter++) + "-" +
                                  std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id())));
    {
      std::ofstream out(tmp, std::ios::binary);
      out.write(body.data(), static_cast<std::streamsize>(body.size()));
      if (!out) throw IoError("cannot write " + tmp.string());
    }
    std::filesystem::rename(tmp, target);
    return target;
  }

  std::size_t requests() const { return requests_; }

 private:
  HttpResponse throttled_get(const std::string& url) {
    {
      std::unique_lock lock(mu_);
      if (last_) {
        const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(opt_.now() - *last_);
        if (elapsed < opt_.min_interval) opt_.sleep(opt_.min_interval - elapsed);
      }
      last_ = opt_.now();
      ++requests_;
    }
    return transport_.get(url);
  }

  Transport& transport_;
  FetchOptions opt_;
  std::mutex mu_;
  std::optional<std::chrono::steady_clock::time_point> last_;
  std::size_t requests_ = 0;
};

}  // namespace ipascribe
