#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ssd {

/// Machine-readable category carried by every ssd::Error.
enum class Errc {
  shape_mismatch,
  label_out_of_range,
  not_scalar,
  invalid_argument,
  empty_input,
  io_failure,
  malformed_file,
  length_mismatch,
  source_mismatch,
  schema,
  parse,
  divergence,
  degenerate,
  config,
};

inline std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::shape_mismatch: return "shape_mismatch";
    case Errc::label_out_of_range: return "label_out_of_range";
    case Errc::not_scalar: return "not_scalar";
    case Errc::invalid_argument: return "invalid_argument";
    case Errc::empty_input: return "empty_input";
    case Errc::io_failure: return "io_failure";
    case Errc::malformed_file: return "malformed_file";
    case Errc::length_mismatch: return "length_mismatch";
    case Errc::source_mismatch: return "source_mismatch";
    case Errc::schema: return "schema";
    case Errc::parse: return "parse";
    case Errc::divergence: return "divergence";
    case Errc::degenerate: return "degenerate";
    case Errc::config: return "config";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code), message_(message) {}

  Errc code() const noexcept { return code_; }
  /// The message without the category prefix.
  const std::string& message() const noexcept { return message_; }

 private:
  Errc code_;
  std::string message_;
};

}  // namespace ssd
