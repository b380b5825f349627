#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace ipascribe {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnknownSymbol : public Error {
 public:
  UnknownSymbol(std::size_t position, char32_t codepoint)
      : Error("unknown IPA symbol U+" + hex(codepoint) + " at position " +
              std::to_string(position)),
        position_(position),
        codepoint_(codepoint) {}

  std::size_t position() const noexcept { return position_; }
  char32_t codepoint() const noexcept { return codepoint_; }

 private:
  static std::string hex(char32_t cp) {
    static const char* digits = "0123456789ABCDEF";
    std::string out;
    for (int shift = 20; shift >= 0; shift -= 4) {
      unsigned nibble = (static_cast<std::uint32_t>(cp) >> shift) & 0xF;
      if (nibble != 0 || !out.empty() || shift < 16) out.push_back(digits[nibble]);
    }
    return out;
  }

  std::size_t position_;
  char32_t codepoint_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class MalformedRow : public Error {
 public:
  MalformedRow(std::size_t line, const std::string& reason)
      : Error("line " + std::to_string(line) + ": " + reason), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class PatternMismatch : public Error {
 public:
  using Error::Error;
};

class HttpError : public Error {
 public:
  explicit HttpError(int status)
      : Error("HTTP status " + std::to_string(status)), status_(status) {}
  int status() const noexcept { return status_; }

 private:
  int status_;
};

class Timeout : public Error {
 public:
  using Error::Error;
};

class ChecksumMismatch : public Error {
 public:
  using Error::Error;
};

class UnsupportedFormat : public Error {
 public:
  using Error::Error;
};

class CorruptHeader : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class EmptyInput : public Error {
 public:
  using Error::Error;
};

class DegenerateStd : public Error {
 public:
  using Error::Error;
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

class DegenerateBatch : public Error {
 public:
  using Error::Error;
};

class InfeasibleLength : public Error {
 public:
  InfeasibleLength(std::size_t frames, std::size_t required)
      : Error("CTC needs at least " + std::to_string(required) + " frames, got " +
              std::to_string(frames)),
        frames_(frames),
        required_(required) {}
  std::size_t frames() const { return frames_; }
  std::size_t required() const { return required_; }

 private:
  std::size_t frames_;
  std::size_t required_;
};

class InsufficientSamples : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

/// Mixin carried by errors that escaped a named pipeline stage. Catch the
/// concrete error type as usual; dynamic_cast to StageTag to recover the stage.
class StageTag {
 public:
  explicit StageTag(std::string stage) : stage_(std::move(stage)) {}
  virtual ~StageTag() = default;
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

template <typename E>
class AtStage : public E, public StageTag {
 public:
  AtStage(const E& original, std::string stage)
      : E(original), StageTag(std::move(stage)), message_(this->stage() + ": " + original.what()) {}
  const char* what() const noexcept override { return message_.c_str(); }

 private:
  std::string message_;
};

/// Stage name attached to `e`, or empty if it carries none.
inline std::string stage_of(const std::exception& e) {
  if (const auto* tag = dynamic_cast<const StageTag*>(&e)) return tag->stage();
  return {};
}

}  // namespace ipascribe
