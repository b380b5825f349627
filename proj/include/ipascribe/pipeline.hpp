#pragma once

// Batching, training loop, evaluation, checkpoints, and single-file inference.

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ipascribe/adamw.hpp"
#include "ipascribe/ctc.hpp"
#include "ipascribe/dsp.hpp"
#include "ipascribe/errors.hpp"
#include "ipascribe/model.hpp"
#include "ipascribe/rng.hpp"

namespace ipascribe {

struct TrainConfig {
  std::size_t batch_size = 20;
  std::size_t epochs = 10;
  std::size_t eval_batches = 39;
  std::uint64_t seed = 0;
  double lr = 1e-4;
  double weight_decay = 0.01;
  bool drop_last = true;  // drop the short final train batch of each epoch
  std::optional<double> stop_at_accuracy;
  ModelConfig model;
  FeatureNorm norm = FeatureNorm::reference();

  void validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (eval_batches < 1) throw ConfigError("eval_batches must be >= 1");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
    if (!(norm.std > 0.0)) throw ConfigError("norm std must be positive");
    model.validate();
  }

  AdamWOptions adamw() const {
    AdamWOptions o;
    o.lr = lr;
    o.weight_decay = weight_decay;
    return o;
  }
};

inline void to_json(nlohmann::json& j, const FeatureNorm& n) { j = {{"mean", n.mean}, {"std", n.std}}; }
inline void from_json(const nlohmann::json& j, FeatureNorm& n) {
  n.mean = j.at("mean").get<double>();
  n.std = j.at("std").get<double>();
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"batch_size", c.batch_size},
                     {"epochs", c.epochs},
                     {"eval_batches", c.eval_batches},
                     {"seed", c.seed},
                     {"lr", c.lr},
                     {"weight_decay", c.weight_decay},
                     {"drop_last", c.drop_last},
                     {"stop_at_accuracy", c.stop_at_accuracy ? nlohmann::json(*c.stop_at_accuracy) : nlohmann::json()},
                     {"model", c.model},
                     {"norm", c.norm}};
}

/// Missing keys keep their defaults, so partial config files are valid.
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  const TrainConfig d;
  c.batch_size = j.value("batch_size", d.batch_size);
  c.epochs = j.value("epochs", d.epochs);
  c.eval_batches = j.value("eval_batches", d.eval_batches);
  c.seed = j.value("seed", d.seed);
  c.lr = j.value("lr", d.lr);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.drop_last = j.value("drop_last", d.drop_last);
  c.stop_at_accuracy.reset();
  if (j.contains("stop_at_accuracy") && !j.at("stop_at_accuracy").is_null())
    c.stop_at_accuracy = j.at("stop_at_accuracy").get<double>();
  c.model = j.contains("model") ? j.at("model").get<ModelConfig>() : d.model;
  c.norm = j.contains("norm") ? j.at("norm").get<FeatureNorm>() : d.norm;
}

/// One training/evaluation example: raw (unstandardized) MFCCs and target.
struct FeatureSample {
  std::string id;
  FeatureMatrix features;
  PhonemeSeq target;
};

// ---------------------------------------------------------------------------
// Split and batches

using Batch = std::vector<std::size_t>;  // indices into the sample list

struct SplitPlan {
  std::vector<std::size_t> train;  // train sample indices, in shuffled order
  std::vector<Batch> train_batches;
  std::vector<Batch> eval_batches;
};

namespace detail {

inline void shuffle(std::vector<std::size_t>& v, CounterRng rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

inline std::vector<Batch> chunk(const std::vector<std::size_t>& ids, std::size_t batch, bool drop_last) {
  std::vector<Batch> out;
  for (std::size_t i = 0; i < ids.size(); i += batch) {
    const std::size_t end = std::min(ids.size(), i + batch);
    if (drop_last && end - i < batch && !out.empty()) break;
    out.emplace_back(ids.begin() + static_cast<std::ptrdiff_t>(i), ids.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

}  // namespace detail

/// Seeded shuffle of all samples; the last eval_batches * batch_size form the
/// eval split, the rest are cut into train batches.
inline SplitPlan split_and_batch(std::size_t sample_count, const TrainConfig& cfg) {
  cfg.validate();
  const std::size_t eval_n = cfg.eval_batches * cfg.batch_size;
  if (sample_count <= eval_n)
    throw InsufficientSamples("need more than " + std::to_string(eval_n) + " samples, have " +
                              std::to_string(sample_count));
  std::vector<std::size_t> ids(sample_count);
  for (std::size_t i = 0; i < sample_count; ++i) ids[i] = i;
  detail::shuffle(ids, CounterRng(cfg.seed, CounterRng::stream_id("split")));
  SplitPlan plan;
  plan.train.assign(ids.begin(), ids.end() - static_cast<std::ptrdiff_t>(eval_n));
  const std::vector<std::size_t> eval(ids.end() - static_cast<std::ptrdiff_t>(eval_n), ids.end());
  plan.train_batches = detail::chunk(plan.train, cfg.batch_size, cfg.drop_last);
  plan.eval_batches = detail::chunk(eval, cfg.batch_size, false);
  return plan;
}

/// Train batches for a 1-based epoch: the train split reshuffled with a key
/// derived from (seed, epoch) only, so any epoch can be replayed in isolation.
inline std::vector<Batch> epoch_batches(const SplitPlan& plan, const TrainConfig& cfg, std::uint64_t epoch) {
  auto ids = plan.train;
  detail::shuffle(ids, CounterRng(cfg.seed, CounterRng::hash(CounterRng::stream_id("epoch"), epoch, 0)));
  return detail::chunk(ids, cfg.batch_size, cfg.drop_last);
}

/// Stacks standardized features into [B, T, C]. All samples in a batch must
/// share the frame count.
inline Tensor<float> stack_features(const std::vector<FeatureSample>& samples, const Batch& batch,
                                    const FeatureNorm& norm) {
  if (batch.empty()) throw ShapeMismatch("empty batch");
  const auto& first = samples.at(batch[0]).features;
  const std::size_t T = first.frames, C = first.coeffs;
  Tensor<float> x({batch.size(), T, C});
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& f = samples.at(batch[b]).features;
    if (f.frames != T || f.coeffs != C) throw ShapeMismatch("feature shapes differ within a batch: " + samples[batch[b]].id);
    for (std::size_t i = 0; i < T * C; ++i)
      x.data[b * T * C + i] = static_cast<float>((f.values[i] - norm.mean) / norm.std);
  }
  return x;
}

inline Tensor<float> slice_batch(const Tensor<float>& logits, std::size_t b) {
  const std::size_t T = logits.dim(1), C = logits.dim(2);
  return Tensor<float>({T, C}, std::vector<float>(logits.data.begin() + static_cast<std::ptrdiff_t>(b * T * C),
                                                  logits.data.begin() + static_cast<std::ptrdiff_t>((b + 1) * T * C)));
}

// ---------------------------------------------------------------------------
// Checkpoints

struct Checkpoint {
  TrainConfig config;
  std::uint64_t epoch = 0;
  ParamStore<float> params;
  OptimizerState<float> optimizer;

  bool operator==(const Checkpoint& o) const {
    return nlohmann::json(config) == nlohmann::json(o.config) && epoch == o.epoch && params == o.params &&
           optimizer.step == o.optimizer.step && optimizer.m == o.optimizer.m && optimizer.v == o.optimizer.v;
  }
};

inline constexpr std::uint16_t kCheckpointVersion = 1;

// Layout, little-endian:
//   "PHCK" u16 version, u32 header length, header JSON (config, epoch, step)
//   u32 record count, then per record:
//     u16 name length, name, u32 rank, u32 dims[rank], float32 values
// Records are every parameter in canonical order, then "adamw.m/<name>" and
// "adamw.v/<name>" for each trainable parameter.
inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  using detail::put_u16;
  using detail::put_u32;
  std::vector<std::uint8_t> out{'P', 'H', 'C', 'K'};
  put_u16(out, kCheckpointVersion);
  const std::string header =
      nlohmann::json{{"config", ck.config}, {"epoch", ck.epoch}, {"optimizer_step", ck.optimizer.step}}.dump();
  put_u32(out, static_cast<std::uint32_t>(header.size()));
  out.insert(out.end(), header.begin(), header.end());

  struct Record {
    std::string name;
    const Shape* shape;
    const std::vector<float>* values;
  };
  std::vector<Record> records;
  const auto& entries = ck.params.entries();
  for (const auto& e : entries) records.push_back({e.name, &e.value.shape, &e.value.data});
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (entries[i].trainable) {
      records.push_back({"adamw.m/" + entries[i].name, &entries[i].value.shape, &ck.optimizer.m.at(i)});
      records.push_back({"adamw.v/" + entries[i].name, &entries[i].value.shape, &ck.optimizer.v.at(i)});
    }
  put_u32(out, static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    if (r.values->size() != shape_size(*r.shape)) throw ShapeMismatch("checkpoint record size for " + r.name);
    put_u16(out, static_cast<std::uint16_t>(r.name.size()));
    out.insert(out.end(), r.name.begin(), r.name.end());
    put_u32(out, static_cast<std::uint32_t>(r.shape->size()));
    for (auto d : *r.shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : *r.values) detail::put_f32(out, v);
  }
  return out;
}

inline Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    if (bytes.size() - pos < n) throw CorruptHeader("checkpoint truncated");
  };
  auto u16 = [&] {
    need(2);
    auto v = detail::read_u16(bytes.data() + pos);
    pos += 2;
    return v;
  };
  auto u32 = [&] {
    need(4);
    auto v = detail::read_u32(bytes.data() + pos);
    pos += 4;
    return v;
  };
  auto str = [&](std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
    pos += n;
    return s;
  };
  if (str(4) != "PHCK") throw CorruptHeader("not a checkpoint file");
  if (const auto v = u16(); v != kCheckpointVersion)
    throw UnsupportedFormat("checkpoint version " + std::to_string(v));

  Checkpoint ck;
  try {
    const auto header = nlohmann::json::parse(str(u32()));
    ck.config = header.at("config").get<TrainConfig>();
    ck.epoch = header.at("epoch").get<std::uint64_t>();
    ck.optimizer.step = header.at("optimizer_step").get<std::uint64_t>();
    ck.config.validate();
  } catch (const nlohmann::json::exception& e) {
    throw CorruptHeader(std::string("checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw CorruptHeader(std::string("checkpoint config: ") + e.what());
  }
  ck.optimizer.options = ck.config.adamw();
  ck.params = ParamStore<float>(param_specs(ck.config.model));
  auto& entries = ck.params.entries();
  ck.optimizer.m.assign(entries.size(), {});
  ck.optimizer.v.assign(entries.size(), {});

  auto read_record = [&](const std::string& want, const Shape& shape, std::vector<float>& dst) {
    const std::string name = str(u16());
    if (name != want) throw CorruptHeader("checkpoint record " + name + ", expected " + want);
    Shape got(u32());
    for (auto& d : got) d = u32();
    if (got != shape) throw CorruptHeader("checkpoint shape mismatch for " + name);
    const std::size_t n = shape_size(shape);
    need(4 * n);
    dst.resize(n);
    for (std::size_t i = 0; i < n; ++i) dst[i] = detail::read_f32(bytes.data() + pos + 4 * i);
    pos += 4 * n;
  };
  std::size_t expected = entries.size();
  for (const auto& e : entries) expected += e.trainable ? 2 : 0;
  if (u32() != expected) throw CorruptHeader("checkpoint record count does not match the model config");
  for (auto& e : entries) read_record(e.name, e.value.shape, e.value.data);
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (entries[i].trainable) {
      read_record("adamw.m/" + entries[i].name, entries[i].value.shape, ck.optimizer.m[i]);
      read_record("adamw.v/" + entries[i].name, entries[i].value.shape, ck.optimizer.v[i]);
    }
  if (pos != bytes.size()) throw CorruptHeader("trailing bytes after checkpoint");
  return ck;
}

inline void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  const auto bytes = encode_checkpoint(ck);
  detail::write_file(path, bytes);
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  return decode_checkpoint(bytes);
}

inline Model<float> model_from(const Checkpoint& ck) {
  Model<float> net(ck.config.model);
  net.params() = ck.params;
  return net;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalResult {
  double loss = 0.0;  // mean per-batch CTC loss
  double accuracy = 0.0;
  std::vector<PhonemeSeq> predictions;  // aligned with the flattened batches
};

inline EvalResult evaluate(Model<float>& net, const std::vector<FeatureSample>& samples,
                           const std::vector<Batch>& batches, const FeatureNorm& norm) {
  EvalResult r;
  std::size_t correct = 0, total = 0;
  for (const auto& batch : batches) {
    const auto logits = net.forward(stack_features(samples, batch, norm), Mode::Eval);
    std::vector<PhonemeSeq> targets;
    for (auto i : batch) targets.push_back(samples[i].target);
    r.loss += ctc_batch_loss(logits, targets).loss / static_cast<double>(batches.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
      auto pred = greedy_decode(log_softmax(slice_batch(logits, b)));
      correct += pred == targets[b] ? 1 : 0;
      ++total;
      r.predictions.push_back(std::move(pred));
    }
  }
  r.accuracy = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  return r;
}

/// Greedy transcriptions for every sample, in input order.
inline std::vector<PhonemeSeq> predict(Model<float>& net, const std::vector<FeatureSample>& samples,
                                       const FeatureNorm& norm, std::size_t batch_size = 20) {
  std::vector<PhonemeSeq> out;
  for (std::size_t i = 0; i < samples.size(); i += batch_size) {
    Batch batch;
    for (std::size_t j = i; j < std::min(samples.size(), i + batch_size); ++j) batch.push_back(j);
    const auto logits = net.forward(stack_features(samples, batch, norm), Mode::Eval);
    for (std::size_t b = 0; b < batch.size(); ++b) out.push_back(greedy_decode(log_softmax(slice_batch(logits, b))));
  }
  return out;
}

/// Fraction of samples whose whole greedy transcription equals the target.
inline double evaluate_exact(const Checkpoint& ck, const std::vector<FeatureSample>& samples) {
  if (samples.empty()) return 0.0;
  auto net = model_from(ck);
  const auto preds = predict(net, samples, ck.config.norm, ck.config.batch_size);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) correct += preds[i] == samples[i].target ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

// ---------------------------------------------------------------------------
// Training

struct EpochMetrics {
  std::uint64_t epoch = 0;
  std::uint64_t steps = 0;  // optimizer steps so far
  double train_loss = 0.0;
  double eval_loss = 0.0;
  double eval_accuracy = 0.0;
};

inline void to_json(nlohmann::json& j, const EpochMetrics& m) {
  j = {{"epoch", m.epoch},
       {"steps", m.steps},
       {"train_loss", m.train_loss},
       {"eval_loss", m.eval_loss},
       {"eval_accuracy", m.eval_accuracy}};
}

struct RunMetrics {
  std::vector<EpochMetrics> epochs;
  double wall_seconds = 0.0;  // kept out of metrics.jsonl so runs compare byte-for-byte
};

struct TrainOptions {
  std::optional<std::filesystem::path> run_dir;
  const Checkpoint* resume = nullptr;
  std::function<void(const EpochMetrics&)> on_epoch;
};

struct TrainResult {
  Checkpoint checkpoint;
  RunMetrics metrics;
};

inline std::string checkpoint_filename(std::uint64_t epoch) { return "epoch_" + std::to_string(epoch) + ".phck"; }

/// Reference-mode training: single-threaded and bit-reproducible for a given
/// (samples, config). Resuming from a checkpoint written by the same run
/// continues exactly where it stopped.
inline TrainResult train_run(const std::vector<FeatureSample>& samples, const TrainConfig& cfg,
                             const TrainOptions& opt = {}) {
  const auto started = std::chrono::steady_clock::now();
  cfg.validate();
  for (const auto& s : samples)
    if (s.features.coeffs != cfg.model.mfcc_coefficients)
      throw ShapeMismatch("sample " + s.id + " has " + std::to_string(s.features.coeffs) + " coefficients, model expects " +
                          std::to_string(cfg.model.mfcc_coefficients));
  const SplitPlan plan = split_and_batch(samples.size(), cfg);

  Model<float> net(cfg.model);
  OptimizerState<float> state;
  std::uint64_t first_epoch = 1;
  if (opt.resume) {
    if (nlohmann::json(opt.resume->config.model) != nlohmann::json(cfg.model))
      throw ConfigError("resume checkpoint was trained with a different model config");
    net.params() = opt.resume->params;
    state = opt.resume->optimizer;
    state.options = cfg.adamw();
    first_epoch = opt.resume->epoch + 1;
  } else {
    net.init(cfg.seed);
    state = make_optimizer_state(net.params(), cfg.adamw());
  }

  auto snapshot = [&](std::uint64_t epoch) { return Checkpoint{cfg, epoch, net.params(), state}; };
  if (opt.run_dir) {
    std::filesystem::create_directories(*opt.run_dir);
    std::ofstream(*opt.run_dir / "config.json") << nlohmann::json(cfg).dump(2) << "\n";
    if (!opt.resume) {
      std::ofstream(*opt.run_dir / "metrics.jsonl", std::ios::trunc);
      write_checkpoint(*opt.run_dir / checkpoint_filename(0), snapshot(0));
    }
  }

  TrainResult result;
  std::uint64_t last_epoch = first_epoch - 1;
  for (std::uint64_t epoch = first_epoch; epoch <= cfg.epochs; ++epoch) {
    const auto batches = epoch_batches(plan, cfg, epoch);
    double train_loss = 0.0;
    for (std::size_t k = 0; k < batches.size(); ++k) {
      const auto& batch = batches[k];
      std::vector<PhonemeSeq> targets;
      for (auto i : batch) targets.push_back(samples[i].target);
      net.params().zero_grad();
      ForwardTrace<float> trace;
      const auto logits = net.forward(stack_features(samples, batch, cfg.norm), Mode::Train, cfg.seed, state.step, &trace);
      auto loss = ctc_batch_loss(logits, targets);
      if (!std::isfinite(loss.loss))
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(k) +
                           " (first sample " + samples[batch[0]].id + ")");
      net.backward(trace, loss.dlogits);
      for (const auto& e : net.params().entries())
        if (e.trainable && !e.value.all_finite())
          throw NumericError("non-finite gradient for " + e.name + " at epoch " + std::to_string(epoch) +
                             ", batch " + std::to_string(k));
      adamw_step(net.params(), state);
      train_loss += loss.loss / static_cast<double>(batches.size());
    }
    const auto ev = evaluate(net, samples, plan.eval_batches, cfg.norm);
    const EpochMetrics m{epoch, state.step, train_loss, ev.loss, ev.accuracy};
    result.metrics.epochs.push_back(m);
    last_epoch = epoch;
    if (opt.run_dir) {
      std::ofstream(*opt.run_dir / "metrics.jsonl", std::ios::app) << nlohmann::json(m).dump() << "\n";
      write_checkpoint(*opt.run_dir / checkpoint_filename(epoch), snapshot(epoch));
    }
    if (opt.on_epoch) opt.on_epoch(m);
    if (cfg.stop_at_accuracy && ev.accuracy >= *cfg.stop_at_accuracy) break;
  }
  result.checkpoint = snapshot(last_epoch);
  result.metrics.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

// ---------------------------------------------------------------------------
// Featurization and inference

/// resample -> 2 s window -> MFCC. Output is unstandardized.
inline FeatureMatrix featurize(const AudioClip& clip, const MfccConfig& mfcc_cfg = {}) {
  return mfcc(fix_length(resample(clip, mfcc_cfg.sample_rate), 2.0), mfcc_cfg);
}

namespace detail {

/// Runs `fn`, re-raising any library error tagged with `stage`.
template <typename F>
auto run_stage(const std::string& stage, F&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const CorruptHeader& e) {
    throw AtStage<CorruptHeader>(e, stage);
  } catch (const UnsupportedFormat& e) {
    throw AtStage<UnsupportedFormat>(e, stage);
  } catch (const IoError& e) {
    throw AtStage<IoError>(e, stage);
  } catch (const ConfigError& e) {
    throw AtStage<ConfigError>(e, stage);
  } catch (const ShapeMismatch& e) {
    throw AtStage<ShapeMismatch>(e, stage);
  } catch (const NumericError& e) {
    throw AtStage<NumericError>(e, stage);
  } catch (const Error& e) {
    if (dynamic_cast<const StageTag*>(&e)) throw;
    throw AtStage<Error>(e, stage);
  }
}

}  // namespace detail

struct InferResult {
  PhonemeSeq phonemes;
  std::string ipa;
};

inline InferResult infer(Model<float>& net, const FeatureNorm& norm, const std::filesystem::path& wav) {
  MfccConfig mc;
  mc.coefficients = net.config().mfcc_coefficients;
  auto clip = detail::run_stage("decode_wav", [&] { return read_wav(wav); });
  clip = detail::run_stage("resample", [&] { return resample(clip, mc.sample_rate); });
  clip = detail::run_stage("fix_length", [&] { return fix_length(std::move(clip), 2.0); });
  auto feats = detail::run_stage("mfcc", [&] { return mfcc(clip, mc); });
  const std::vector<FeatureSample> one{{wav.string(), std::move(feats), {}}};
  const auto logits =
      detail::run_stage("model_forward", [&] { return net.forward(stack_features(one, {0}, norm), Mode::Eval); });
  auto seq = detail::run_stage("greedy_decode", [&] { return greedy_decode(log_softmax(slice_batch(logits, 0))); });
  return {seq, render_ipa(seq)};
}

inline InferResult infer(const Checkpoint& ck, const std::filesystem::path& wav) {
  auto net = model_from(ck);
  return infer(net, ck.config.norm, wav);
}

}  // namespace ipascribe
