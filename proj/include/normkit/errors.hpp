#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace normkit {

enum class ErrorKind {
  invalid_shape,
  shape_mismatch,
  invalid_argument,
  invalid_padding,
  missing_forward,
  degenerate_input,
  not_calibrated,
  format_error,
  input_error,
  diverged,
};

// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define NORMKIT_DEFINE_ERROR(Name, Kind)                               \
  class Name : public Error {                                         \
   public:                                                            \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

NORMKIT_DEFINE_ERROR(InvalidShape, invalid_shape)
NORMKIT_DEFINE_ERROR(ShapeMismatch, shape_mismatch)
NORMKIT_DEFINE_ERROR(InvalidArgument, invalid_argument)
NORMKIT_DEFINE_ERROR(InvalidPadding, invalid_padding)
NORMKIT_DEFINE_ERROR(MissingForward, missing_forward)
NORMKIT_DEFINE_ERROR(DegenerateInput, degenerate_input)
NORMKIT_DEFINE_ERROR(NotCalibrated, not_calibrated)

#undef NORMKIT_DEFINE_ERROR

/// Malformed file contents; `offset` is the byte position where parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(ErrorKind::format_error,
              what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class InputError : public Error {
 public:
  InputError(const std::string& path, const std::string& what)
      : Error(ErrorKind::input_error, path + ": " + what), path_(path) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

class Diverged : public Error {
 public:
  explicit Diverged(std::int64_t step)
      : Error(ErrorKind::diverged,
              "non-finite loss at step " + std::to_string(step)),
        step_(step) {}
  std::int64_t step() const noexcept { return step_; }

 private:
  std::int64_t step_;
};

}  // namespace normkit
