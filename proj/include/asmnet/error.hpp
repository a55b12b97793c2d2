/**
 * @file error.hpp
 * @brief Error type shared by every asmnet module.
 */
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace asmnet {

enum class Errc {
  parameter,
  format,
  unsupported,
  io,
  degenerate_input,
  configuration,
  coverage,
  numeric,
  usage,
  transfer,
  pipeline,
  spec,
};

inline std::string_view to_string(Errc code) {
  switch (code) {
  case Errc::parameter: return "parameter error";
  case Errc::format: return "format error";
  case Errc::unsupported: return "unsupported";
  case Errc::io: return "I/O error";
  case Errc::degenerate_input: return "degenerate input";
  case Errc::configuration: return "configuration error";
  case Errc::coverage: return "coverage error";
  case Errc::numeric: return "numeric error";
  case Errc::usage: return "usage error";
  case Errc::transfer: return "transfer error";
  case Errc::pipeline: return "pipeline error";
  case Errc::spec: return "spec error";
  }
  return "error";
}

class Error : public std::runtime_error {
public:
  Error(Errc code, const std::string &what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), message_(what) {}

  Errc code() const noexcept { return code_; }
  /// The message without the category prefix.
  const std::string &message() const noexcept { return message_; }

private:
  Errc code_;
  std::string message_;
};

[[noreturn]] inline void fail(Errc code, const std::string &what) { throw Error(code, what); }

inline void require(bool cond, Errc code, const std::string &what) {
  if (!cond)
    fail(code, what);
}

} // namespace asmnet
