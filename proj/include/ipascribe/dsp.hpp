#pragma once

// Audio decoding, length fixing, resampling, MFCC extraction and global
// feature standardization.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "ipascribe/errors.hpp"

namespace ipascribe {

struct AudioClip {
  int sample_rate = 16000;
  std::vector<double> samples;  // mono, nominally in [-1, 1]

  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

/// T frames by C coefficients, row-major.
struct FeatureMatrix {
  std::size_t frames = 0;
  std::size_t coeffs = 0;
  std::vector<double> values;

  FeatureMatrix() = default;
  FeatureMatrix(std::size_t t, std::size_t c) : frames(t), coeffs(c), values(t * c, 0.0) {}

  double& at(std::size_t t, std::size_t c) { return values[t * coeffs + c]; }
  double at(std::size_t t, std::size_t c) const { return values[t * coeffs + c]; }
  std::span<const double> row(std::size_t t) const { return {values.data() + t * coeffs, coeffs}; }

  bool operator==(const FeatureMatrix&) const = default;
};

/// Global scalar standardization constants.
struct FeatureNorm {
  double mean = -11.48;
  double std = 80.30;

  /// Constants observed on the full French Wiktionary corpus.
  static constexpr FeatureNorm reference() { return {-11.48, 80.30}; }
};

// ---------------------------------------------------------------------------
// little-endian helpers

namespace detail {

inline std::uint16_t read_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline std::uint32_t read_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}
inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}
inline void put_f32(std::vector<std::uint8_t>& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }
inline float read_f32(const std::uint8_t* p) { return std::bit_cast<float>(read_u32(p)); }

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// WAV

/// Decodes a RIFF/WAVE container holding PCM16 or float32 audio with one or
/// two channels. Channels are averaged; PCM16 is scaled by 1/32768.
inline AudioClip decode_wav(std::span<const std::uint8_t> bytes) {
  using detail::read_u16;
  using detail::read_u32;
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw CorruptHeader("missing RIFF/WAVE signature");

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const std::uint8_t* data = nullptr;
  std::size_t data_len = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t* chunk = bytes.data() + pos;
    const std::uint32_t len = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + len > bytes.size()) {
      // Some writers leave a bogus length on the final data chunk.
      if (std::memcmp(chunk, "data", 4) == 0) {
        data = bytes.data() + body;
        data_len = bytes.size() - body;
        break;
      }
      throw CorruptHeader("chunk overruns file");
    }
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (len < 16) throw CorruptHeader("fmt chunk too short");
      format = read_u16(chunk + 8);
      channels = read_u16(chunk + 10);
      rate = read_u32(chunk + 12);
      bits = read_u16(chunk + 22);
      if (format == 0xFFFE) {
        if (len < 40) throw CorruptHeader("extensible fmt chunk too short");
        format = read_u16(chunk + 32);  // first two bytes of the subformat GUID
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_len = len;
    }
    pos = body + len + (len & 1u);
  }
  if (!have_fmt) throw CorruptHeader("no fmt chunk");
  if (data == nullptr) throw CorruptHeader("no data chunk");
  if (rate == 0) throw CorruptHeader("zero sample rate");
  if (channels < 1 || channels > 2)
    throw UnsupportedFormat(std::to_string(channels) + " channels");

  const bool pcm16 = format == 1 && bits == 16;
  const bool f32 = format == 3 && bits == 32;
  if (!pcm16 && !f32) {
    std::string codec = format == 1   ? "pcm" + std::to_string(bits)
                        : format == 3 ? "float" + std::to_string(bits)
                        : format == 6 ? "a-law"
                        : format == 7 ? "mu-law"
                                      : "format tag " + std::to_string(format);
    throw UnsupportedFormat(codec);
  }

  const std::size_t width = bits / 8u;
  const std::size_t frame_bytes = width * channels;
  const std::size_t frames = data_len / frame_bytes;
  AudioClip clip;
  clip.sample_rate = static_cast<int>(rate);
  clip.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (std::size_t ch = 0; ch < channels; ++ch) {
      const std::uint8_t* p = data + i * frame_bytes + ch * width;
      double v = pcm16 ? static_cast<std::int16_t>(read_u16(p)) / 32768.0
                       : static_cast<double>(detail::read_f32(p));
      if (!std::isfinite(v)) throw CorruptHeader("non-finite sample");
      acc += v;
    }
    clip.samples[i] = acc / channels;
  }
  return clip;
}

inline AudioClip read_wav(const std::filesystem::path& path) {
  auto bytes = detail::read_file(path);
  return decode_wav(bytes);
}

/// Mono PCM16 WAV bytes; samples are clipped to [-1, 1].
inline std::vector<std::uint8_t> encode_wav_pcm16(const AudioClip& clip) {
  using namespace detail;
  std::vector<std::uint8_t> out;
  const auto data_len = static_cast<std::uint32_t>(clip.samples.size() * 2);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_u32(out, 36 + data_len);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate * 2));
  put_u16(out, 2);
  put_u16(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_u32(out, data_len);
  for (double s : clip.samples) {
    const double c = std::clamp(s, -1.0, 1.0);
    const auto q = static_cast<std::int16_t>(std::lround(std::clamp(c * 32768.0, -32768.0, 32767.0)));
    put_u16(out, static_cast<std::uint16_t>(q));
  }
  return out;
}

// ---------------------------------------------------------------------------
// length and rate

/// Truncates or zero-pads at the end to exactly round(seconds * rate) samples.
inline AudioClip fix_length(AudioClip clip, double seconds = 2.0) {
  const auto n = static_cast<std::size_t>(std::llround(seconds * clip.sample_rate));
  clip.samples.resize(n, 0.0);
  return clip;
}

/// Windowed-sinc resampling. The kernel spans 16 periods of the lower of the
/// two rates (8 on each side), Hann-tapered, with the cutoff at the lower
/// Nyquist frequency. Weights are renormalized over the in-range taps so DC
/// passes unchanged up to the clip edges.
inline AudioClip resample(const AudioClip& clip, int target_rate) {
  if (target_rate <= 0) throw ConfigError("target sample rate must be positive");
  if (clip.sample_rate == target_rate) return clip;

  const double ratio = static_cast<double>(target_rate) / clip.sample_rate;
  const double cutoff = std::min(1.0, ratio);  // relative to the source Nyquist
  const double half_width = 8.0 / cutoff;      // in source samples
  const auto in_len = static_cast<std::ptrdiff_t>(clip.samples.size());
  const auto out_len = static_cast<std::size_t>(std::llround(clip.samples.size() * ratio));

  AudioClip out;
  out.sample_rate = target_rate;
  out.samples.resize(out_len);
  for (std::size_t n = 0; n < out_len; ++n) {
    const double center = n / ratio;
    const auto lo = static_cast<std::ptrdiff_t>(std::ceil(center - half_width));
    const auto hi = static_cast<std::ptrdiff_t>(std::floor(center + half_width));
    double acc = 0.0, wsum = 0.0;
    for (std::ptrdiff_t k = std::max<std::ptrdiff_t>(lo, 0); k <= std::min(hi, in_len - 1); ++k) {
      const double d = static_cast<double>(k) - center;
      const double x = cutoff * d;
      const double sinc = x == 0.0 ? 1.0 : std::sin(std::numbers::pi * x) / (std::numbers::pi * x);
      const double window = 0.5 * (1.0 + std::cos(std::numbers::pi * d / half_width));
      const double w = sinc * window;
      acc += w * clip.samples[static_cast<std::size_t>(k)];
      wsum += w;
    }
    out.samples[n] = wsum != 0.0 ? acc / wsum : 0.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// spectrum

/// In-place iterative radix-2 FFT. Size must be a power of two.
inline void fft(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0) throw ConfigError("FFT size must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> w(std::cos(ang * k), std::sin(ang * k));
        const auto u = a[i + k];
        const auto v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
      }
    }
  }
}

struct MfccConfig {
  int sample_rate = 16000;
  double window_ms = 25.0;
  double hop_ms = 10.0;
  std::size_t fft_size = 512;
  std::size_t mel_filters = 64;
  std::size_t coefficients = 40;
  double log_floor = 1e-10;

  std::size_t window_length() const {
    return static_cast<std::size_t>(std::llround(window_ms * sample_rate / 1000.0));
  }
  std::size_t hop_length() const {
    return static_cast<std::size_t>(std::llround(hop_ms * sample_rate / 1000.0));
  }
  std::size_t frame_count(std::size_t samples) const {
    const std::size_t win = window_length();
    return samples < win ? 0 : 1 + (samples - win) / hop_length();
  }
};

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Triangular mel filters on the HTK scale from 0 Hz to Nyquist, evaluated at
/// the FFT bin frequencies. Row-major, mel_filters x (fft_size/2 + 1).
inline std::vector<double> mel_filterbank(const MfccConfig& cfg) {
  const std::size_t bins = cfg.fft_size / 2 + 1;
  const double nyquist = cfg.sample_rate / 2.0;
  const double mel_max = hz_to_mel(nyquist);
  std::vector<double> edges(cfg.mel_filters + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(mel_max * static_cast<double>(i) / static_cast<double>(cfg.mel_filters + 1));

  std::vector<double> bank(cfg.mel_filters * bins, 0.0);
  for (std::size_t m = 0; m < cfg.mel_filters; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / static_cast<double>(cfg.fft_size);
      const double up = (f - left) / (center - left);
      const double down = (right - f) / (right - center);
      bank[m * bins + k] = std::max(0.0, std::min(up, down));
    }
  }
  return bank;
}

/// MFCC features: periodic Hann frames zero-padded to fft_size, magnitude
/// spectrum, mel filterbank, natural log with a floor, orthonormal DCT-II,
/// first `coefficients` kept. No centering pad, so
/// T = 1 + floor((samples - window) / hop).
inline FeatureMatrix mfcc(const AudioClip& clip, const MfccConfig& cfg = {}) {
  if (clip.sample_rate != cfg.sample_rate)
    throw ConfigError("clip rate " + std::to_string(clip.sample_rate) + " != feature rate " +
                      std::to_string(cfg.sample_rate));
  const std::size_t win = cfg.window_length();
  const std::size_t hop = cfg.hop_length();
  if (win == 0 || hop == 0) throw ConfigError("window and hop must be positive");
  if (win > cfg.fft_size) throw ConfigError("window longer than FFT size");
  if (cfg.coefficients > cfg.mel_filters) throw ConfigError("more coefficients than mel filters");
  if (win > clip.samples.size()) throw ConfigError("window longer than clip");

  const std::size_t frames = cfg.frame_count(clip.samples.size());
  const std::size_t bins = cfg.fft_size / 2 + 1;
  const auto bank = mel_filterbank(cfg);

  std::vector<double> hann(win);
  for (std::size_t n = 0; n < win; ++n)
    hann[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / static_cast<double>(win));

  const std::size_t mels = cfg.mel_filters;
  std::vector<double> dct(cfg.coefficients * mels);
  for (std::size_t k = 0; k < cfg.coefficients; ++k) {
    const double scale = std::sqrt((k == 0 ? 1.0 : 2.0) / static_cast<double>(mels));
    for (std::size_t m = 0; m < mels; ++m)
      dct[k * mels + m] = scale * std::cos(std::numbers::pi * static_cast<double>(k) *
                                           (2.0 * static_cast<double>(m) + 1.0) / (2.0 * static_cast<double>(mels)));
  }

  FeatureMatrix out(frames, cfg.coefficients);
  std::vector<std::complex<double>> buf(cfg.fft_size);
  std::vector<double> mag(bins), logmel(mels);
  for (std::size_t t = 0; t < frames; ++t) {
    std::fill(buf.begin(), buf.end(), std::complex<double>{});
    for (std::size_t n = 0; n < win; ++n) buf[n] = clip.samples[t * hop + n] * hann[n];
    fft(buf);
    for (std::size_t k = 0; k < bins; ++k) mag[k] = std::abs(buf[k]);
    for (std::size_t m = 0; m < mels; ++m) {
      double e = 0.0;
      for (std::size_t k = 0; k < bins; ++k) e += bank[m * bins + k] * mag[k];
      logmel[m] = std::log(std::max(e, cfg.log_floor));
    }
    for (std::size_t k = 0; k < cfg.coefficients; ++k) {
      double acc = 0.0;
      for (std::size_t m = 0; m < mels; ++m) acc += dct[k * mels + m] * logmel[m];
      out.at(t, k) = acc;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// standardization

/// Mean and population standard deviation over every coefficient of every
/// frame of every matrix.
inline FeatureNorm compute_norm(std::span<const FeatureMatrix> features) {
  std::size_t count = 0;
  double sum = 0.0;
  for (const auto& f : features) {
    for (double v : f.values) sum += v;
    count += f.values.size();
  }
  if (count == 0) throw EmptyInput("no feature values to normalize");
  const double mean = sum / static_cast<double>(count);
  double sq = 0.0;
  for (const auto& f : features)
    for (double v : f.values) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / static_cast<double>(count));
  if (!(sd > 0.0)) throw DegenerateStd("feature standard deviation is zero");
  return {mean, sd};
}

inline FeatureMatrix standardize(FeatureMatrix f, const FeatureNorm& norm) {
  if (!(norm.std > 0.0)) throw DegenerateStd("norm std must be positive");
  for (double& v : f.values) v = (v - norm.mean) / norm.std;
  return f;
}

inline FeatureMatrix unstandardize(FeatureMatrix f, const FeatureNorm& norm) {
  for (double& v : f.values) v = v * norm.std + norm.mean;
  return f;
}

// ---------------------------------------------------------------------------
// feature cache: "PHFM", u16 version, u32 T, u32 C, T*C float32 LE row-major

inline constexpr std::uint16_t kFeatureFileVersion = 1;

inline std::vector<std::uint8_t> encode_features(const FeatureMatrix& f) {
  std::vector<std::uint8_t> out;
  out.reserve(14 + f.values.size() * 4);
  out.insert(out.end(), {'P', 'H', 'F', 'M'});
  detail::put_u16(out, kFeatureFileVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(f.frames));
  detail::put_u32(out, static_cast<std::uint32_t>(f.coeffs));
  for (double v : f.values) detail::put_f32(out, static_cast<float>(v));
  return out;
}

inline FeatureMatrix decode_features(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 14 || std::memcmp(bytes.data(), "PHFM", 4) != 0)
    throw CorruptHeader("not a PHFM feature file");
  const auto version = detail::read_u16(bytes.data() + 4);
  if (version != kFeatureFileVersion)
    throw UnsupportedFormat("PHFM version " + std::to_string(version));
  const std::size_t t = detail::read_u32(bytes.data() + 6);
  const std::size_t c = detail::read_u32(bytes.data() + 10);
  if (bytes.size() != 14 + t * c * 4) throw CorruptHeader("PHFM payload size mismatch");
  FeatureMatrix f(t, c);
  for (std::size_t i = 0; i < t * c; ++i) f.values[i] = detail::read_f32(bytes.data() + 14 + 4 * i);
  return f;
}

inline void write_features(const std::filesystem::path& path, const FeatureMatrix& f) {
  detail::write_file(path, encode_features(f));
}

inline FeatureMatrix read_features(const std::filesystem::path& path) {
  return decode_features(detail::read_file(path));
}

}  // namespace ipascribe
