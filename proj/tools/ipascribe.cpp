// ipascribe: corpus filtering, audio fetching, featurization, training,
// evaluation, inference and suspect listing.
//
// Exit codes: 0 ok, 1 operational failure, 2 usage or input parse error.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "ipascribe/analysis.hpp"
#include "ipascribe/corpus.hpp"
#include "ipascribe/pipeline.hpp"
#include "ipascribe/synth.hpp"
// Last: httplib pulls in <resolv.h>, whose _res macro breaks Eigen headers.
#include "ipascribe/http_transport.hpp"

namespace fs = std::filesystem;
using namespace ipascribe;
using json = nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kUsage = 2;

// Thrown for bad inputs that should exit with kUsage.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError(path.string() + ": " + e.what());
  }
}

std::vector<SampleRecord> load_samples(const fs::path& path) {
  try {
    return read_samples(path);
  } catch (const MalformedRow& e) {
    throw UsageError(path.string() + ": " + e.what());
  } catch (const UnknownSymbol& e) {
    throw UsageError(path.string() + ": " + e.what());
  }
}

std::string feature_name(const SampleRecord& s) { return s.audio_filename + ".phfm"; }

/// Samples listed in a featurize output directory, with their features.
std::vector<FeatureSample> load_feature_dir(const fs::path& dir) {
  std::vector<FeatureSample> out;
  for (const auto& s : load_samples(dir / "samples.csv"))
    out.push_back({s.audio_filename, read_features(dir / feature_name(s)), s.ipa});
  return out;
}

// ---------------------------------------------------------------------------

struct FilterArgs {
  std::string manifest, out, stats;
  std::string language = "fra";
  std::size_t max_phonemes = 19;
};

int run_filter(const FilterArgs& a) {
  std::vector<PageRecord> pages;
  try {
    pages = parse_manifest(a.manifest);
  } catch (const MalformedRow& e) {
    throw UsageError(a.manifest + ": " + e.what());
  }
  const auto [kept, stats] = filter_samples(pages, {a.language, a.max_phonemes});
  write_text(a.out, format_samples(kept));
  if (!a.stats.empty()) {
    json j{{"input", stats.input_count}, {"kept", stats.kept_count}, {"rejected", stats.rejected_total()}};
    j["rejected_by_rule"] = stats.rejected_by_rule;
    write_text(a.stats, j.dump(2) + "\n");
  }
  std::cerr << "kept " << stats.kept_count << " of " << stats.input_count << " candidates\n";
  return kOk;
}

struct FetchArgs {
  std::string samples, cache;
  double rate_limit = 1.0;  // seconds between requests
  int attempts = 3;
  std::string base_url;
  std::string failures;
};

int run_fetch(const FetchArgs& a) {
  const auto samples = load_samples(a.samples);
  HttpTransport transport;
  FetchOptions opt;
  opt.min_interval = std::chrono::milliseconds(static_cast<long long>(a.rate_limit * 1000.0));
  opt.attempts = a.attempts;
  AudioFetcher fetcher(transport, opt);

  json failures = json::array();
  std::size_t downloaded = 0, cached = 0;
  for (const auto& s : samples) {
    if (fs::exists(fs::path(a.cache) / s.audio_filename)) {
      std::cout << s.audio_filename << "\tcached\n";
      ++cached;
      continue;
    }
    std::string url = resolve_media_url(s.audio_filename);
    if (!a.base_url.empty()) url = a.base_url + url.substr(url.find('/', url.find("://") + 3));
    try {
      fetcher.fetch(url, a.cache, s.audio_filename);
      std::cout << s.audio_filename << "\tdownloaded\n";
      ++downloaded;
    } catch (const Error& e) {
      std::cout << s.audio_filename << "\tfailed\n";
      std::cerr << s.audio_filename << ": " << e.what() << "\n";
      failures.push_back({{"audio_filename", s.audio_filename}, {"url", url}, {"error", e.what()}});
    }
  }
  const fs::path failures_path = a.failures.empty() ? fs::path(a.cache) / "failures.json" : fs::path(a.failures);
  write_text(failures_path, failures.dump(2) + "\n");
  std::cerr << downloaded << " downloaded, " << cached << " cached, " << failures.size() << " failed\n";
  return failures.empty() ? kOk : kFailure;
}

struct FeaturizeArgs {
  std::string samples, cache, out;
  std::string norm = "compute";
  double mean = FeatureNorm::reference().mean;
  double std = FeatureNorm::reference().std;
};

int run_featurize(const FeaturizeArgs& a) {
  const auto samples = load_samples(a.samples);
  fs::create_directories(a.out);
  std::vector<FeatureMatrix> feats;
  std::vector<SampleRecord> written;
  bool failed = false;
  for (const auto& s : samples) {
    try {
      auto f = detail::run_stage("decode_wav", [&] { return read_wav(fs::path(a.cache) / s.audio_filename); });
      auto m = detail::run_stage("mfcc", [&] { return featurize(f); });
      write_features(fs::path(a.out) / feature_name(s), m);
      feats.push_back(std::move(m));
      written.push_back(s);
    } catch (const Error& e) {
      std::cerr << s.audio_filename << ": " << e.what() << "\n";
      failed = true;
    }
  }
  FeatureNorm norm{a.mean, a.std};
  if (a.norm == "compute") norm = compute_norm(feats);
  write_text(fs::path(a.out) / "norm.json", json(norm).dump(2) + "\n");
  write_text(fs::path(a.out) / "samples.csv", format_samples(written));
  std::cerr << written.size() << " feature files, norm mean " << norm.mean << " std " << norm.std << "\n";
  return failed ? kFailure : kOk;
}

struct TrainArgs {
  std::string features, config, run_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs, batch_size, eval_batches;
  std::optional<double> lr, stop_at;
  std::string resume;
};

int run_train(const TrainArgs& a) {
  TrainConfig cfg;
  bool norm_in_config = false;
  if (!a.config.empty()) {
    const auto j = read_json(a.config);
    try {
      cfg = j.get<TrainConfig>();
    } catch (const json::exception& e) {
      throw UsageError(a.config + ": " + e.what());
    }
    norm_in_config = j.contains("norm");
  }
  if (!norm_in_config && fs::exists(fs::path(a.features) / "norm.json"))
    cfg.norm = read_json(fs::path(a.features) / "norm.json").get<FeatureNorm>();
  if (a.seed) cfg.seed = *a.seed;
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.batch_size) cfg.batch_size = *a.batch_size;
  if (a.eval_batches) cfg.eval_batches = *a.eval_batches;
  if (a.lr) cfg.lr = *a.lr;
  if (a.stop_at) cfg.stop_at_accuracy = *a.stop_at;
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }

  const auto samples = load_feature_dir(a.features);
  TrainOptions opt;
  opt.run_dir = fs::path(a.run_dir);
  std::optional<Checkpoint> resume;
  if (!a.resume.empty()) {
    resume = read_checkpoint(a.resume);
    opt.resume = &*resume;
  }
  opt.on_epoch = [](const EpochMetrics& m) { std::cout << json(m).dump() << std::endl; };
  const auto r = train_run(samples, cfg, opt);
  write_checkpoint(fs::path(a.run_dir) / "final.phck", r.checkpoint);
  std::cerr << "finished at epoch " << r.checkpoint.epoch << " in " << r.metrics.wall_seconds << " s\n";
  return kOk;
}

struct EvalArgs {
  std::string checkpoint, samples, cache, features, report_dir;
  std::string unit = "codepoint";
};

int run_eval(const EvalArgs& a) {
  const auto ck = read_checkpoint(a.checkpoint);
  auto net = model_from(ck);
  const auto unit = a.unit == "phoneme" ? DistanceUnit::Phoneme : DistanceUnit::Codepoint;

  std::vector<SampleRecord> records;
  std::vector<FeatureSample> samples;
  if (!a.features.empty()) {
    records = load_samples(fs::path(a.features) / "samples.csv");
    samples = load_feature_dir(a.features);
  } else {
    records = load_samples(a.samples);
    const fs::path cache = a.cache.empty() ? fs::path(a.samples).parent_path() : fs::path(a.cache);
    for (const auto& s : records) samples.push_back({s.audio_filename, featurize(read_wav(cache / s.audio_filename)), s.ipa});
  }
  const auto preds = predict(net, samples, ck.config.norm, ck.config.batch_size);
  std::vector<PredictionPair> pairs;
  for (std::size_t i = 0; i < records.size(); ++i)
    pairs.push_back(make_prediction_pair(records[i].word, records[i].audio_filename, records[i].ipa, preds[i], unit));
  write_report(a.report_dir, pairs, unit, {{"checkpoint", a.checkpoint}, {"epoch", ck.epoch}});
  const auto j = report_json(pairs, unit);
  std::cout << json{{"samples", j["samples"]}, {"accuracy", j["accuracy"]}}.dump() << "\n";
  return kOk;
}

struct InferArgs {
  std::string checkpoint;
  std::vector<std::string> files;
};

int run_infer(const InferArgs& a) {
  const auto ck = read_checkpoint(a.checkpoint);
  auto net = model_from(ck);
  bool failed = false;
  for (const auto& f : a.files) {
    try {
      std::cout << f << "\t" << infer(net, ck.config.norm, f).ipa << "\n";
    } catch (const Error& e) {
      std::cerr << f << ": " << e.what() << "\n";
      failed = true;
    }
  }
  return failed ? kFailure : kOk;
}

struct SuspectsArgs {
  std::string report_dir, out;
  std::optional<std::size_t> min_distance, top;
  std::string format = "csv";
};

int run_suspects(const SuspectsArgs& a) {
  const auto pairs = read_report_pairs(a.report_dir);
  const auto r = suspects(pairs, {.top_k = a.top, .min_distance = a.min_distance});
  std::string text;
  if (a.format == "json")
    text = suspects_json(r).dump(2) + "\n";
  else if (!r.rows.empty())
    text = suspects_csv(r);
  if (a.out.empty())
    std::cout << text;
  else
    write_text(a.out, text);
  return kOk;
}

struct SynthArgs {
  std::string out;
  SynthConfig cfg;
};

int run_synth(const SynthArgs& a) {
  fs::create_directories(a.out);
  std::vector<SampleRecord> records;
  for (const auto& c : synth_corpus(a.cfg)) {
    detail::write_file(fs::path(a.out) / synth_filename(c), encode_wav_pcm16(c.audio));
    records.push_back(synth_sample(c));
  }
  write_text(fs::path(a.out) / "samples.csv", format_samples(records));
  std::cerr << records.size() << " clips written to " << a.out << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"French IPA transcription: corpus, training and error analysis"};
  app.require_subcommand(1);

  FilterArgs fa;
  auto* filter = app.add_subcommand("filter", "Apply the corpus rules to a page manifest");
  filter->add_option("--manifest", fa.manifest, "Manifest CSV")->required();
  filter->add_option("--out", fa.out, "Kept samples CSV")->required();
  filter->add_option("--stats", fa.stats, "Rejection statistics JSON");
  filter->add_option("--language", fa.language, "Language code to keep")->capture_default_str();
  filter->add_option("--max-phonemes", fa.max_phonemes, "Longest kept pronunciation")->capture_default_str();

  FetchArgs fe;
  auto* fetch = app.add_subcommand("fetch", "Download missing audio files");
  fetch->add_option("--samples", fe.samples, "Samples CSV")->required();
  fetch->add_option("--cache", fe.cache, "Audio directory")->required();
  fetch->add_option("--rate-limit", fe.rate_limit, "Seconds between requests")->capture_default_str();
  fetch->add_option("--attempts", fe.attempts, "Tries per file")->capture_default_str();
  fetch->add_option("--base-url", fe.base_url, "Replace the media host (mirrors, testing)");
  fetch->add_option("--failures", fe.failures, "Failure list (default <cache>/failures.json)");

  FeaturizeArgs fz;
  auto* feat = app.add_subcommand("featurize", "Compute MFCC feature files");
  feat->add_option("--samples", fz.samples, "Samples CSV")->required();
  feat->add_option("--cache", fz.cache, "Audio directory")->required();
  feat->add_option("--out", fz.out, "Feature directory")->required();
  feat->add_option("--norm", fz.norm, "compute from the data or use the given constants")
      ->check(CLI::IsMember({"compute", "use"}))
      ->capture_default_str();
  feat->add_option("--norm-mean", fz.mean, "Mean for --norm use")->capture_default_str();
  feat->add_option("--norm-std", fz.std, "Std for --norm use")->capture_default_str();

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a model on a feature directory");
  train->add_option("--features", ta.features, "Feature directory from featurize")->required();
  train->add_option("--config", ta.config, "Training config JSON");
  train->add_option("--run-dir", ta.run_dir, "Output directory")->required();
  train->add_option("--seed", ta.seed, "Overrides config seed");
  train->add_option("--epochs", ta.epochs, "Overrides config epochs");
  train->add_option("--batch-size", ta.batch_size, "Overrides config batch_size");
  train->add_option("--eval-batches", ta.eval_batches, "Overrides config eval_batches");
  train->add_option("--lr", ta.lr, "Overrides config lr");
  train->add_option("--stop-at-accuracy", ta.stop_at, "Stop once eval accuracy reaches this");
  train->add_option("--resume", ta.resume, "Continue from a checkpoint");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint and write a report bundle");
  eval->add_option("--checkpoint", ea.checkpoint, "Checkpoint file")->required();
  auto* eval_samples = eval->add_option("--samples", ea.samples, "Samples CSV (audio read from --cache)");
  eval->add_option("--cache", ea.cache, "Audio directory (default: next to the samples CSV)");
  auto* eval_features = eval->add_option("--features", ea.features, "Feature directory instead of audio");
  eval_samples->excludes(eval_features);
  eval->add_option("--report-dir", ea.report_dir, "Report output directory")->required();
  eval->add_option("--distance-unit", ea.unit, "Levenshtein unit")
      ->check(CLI::IsMember({"codepoint", "phoneme"}))
      ->capture_default_str();

  InferArgs ia;
  auto* inf = app.add_subcommand("infer", "Transcribe WAV files");
  inf->add_option("--checkpoint", ia.checkpoint, "Checkpoint file")->required();
  inf->add_option("files", ia.files, "WAV files")->required();

  SuspectsArgs sa;
  auto* sus = app.add_subcommand("suspects", "List the highest-distance samples of a report");
  sus->add_option("--report-dir", sa.report_dir, "Report directory from eval")->required();
  auto* min_d = sus->add_option("--min-distance", sa.min_distance, "Keep samples at or above this distance");
  auto* top = sus->add_option("--top", sa.top, "Keep the K highest");
  min_d->excludes(top);
  sus->add_option("--format", sa.format, "Output format")->check(CLI::IsMember({"csv", "json"}))->capture_default_str();
  sus->add_option("--out", sa.out, "Write to a file instead of stdout");

  SynthArgs sy;
  auto* syn = app.add_subcommand("synth", "Write the synthetic tone corpus as WAV files");
  syn->add_option("--out", sy.out, "Output directory")->required();
  syn->add_option("--clips", sy.cfg.clips, "Number of clips")->capture_default_str();
  syn->add_option("--words", sy.cfg.words, "Distinct words")->capture_default_str();
  syn->add_option("--seed", sy.cfg.seed, "Corpus seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*filter) return run_filter(fa);
    if (*fetch) return run_fetch(fe);
    if (*feat) {
      if (fz.norm == "use" && !(fz.std > 0.0)) throw UsageError("--norm-std must be positive");
      return run_featurize(fz);
    }
    if (*train) return run_train(ta);
    if (*eval) {
      if (ea.samples.empty() && ea.features.empty()) throw UsageError("eval needs --samples or --features");
      return run_eval(ea);
    }
    if (*inf) return run_infer(ia);
    if (*sus) return run_suspects(sa);
    if (*syn) return run_synth(sy);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}
