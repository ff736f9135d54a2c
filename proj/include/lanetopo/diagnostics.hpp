#pragma once

#include <functional>
#include <iostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

namespace lanetopo {

/// Base error for every precondition failure reported by the library.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Tensor or matrix dimensions that do not line up.
class ShapeError : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

/// Non-fatal diagnostics ("clamped a probability", "AP of an empty set").
///
/// The handler is thread-local so that concurrent evaluations can capture
/// their own diagnostics. The default handler writes one structured line to
/// standard error.
using DiagnosticHandler =
    std::function<void(std::string_view code, std::string_view message)>;

namespace detail {

inline void default_diagnostic(std::string_view code, std::string_view message) {
  std::cerr << "{\"level\":\"warning\",\"code\":\"" << code
            << "\",\"message\":\"" << message << "\"}\n";
}

inline DiagnosticHandler& diagnostic_slot() {
  thread_local DiagnosticHandler handler = default_diagnostic;
  return handler;
}

}  // namespace detail

inline void diagnose(std::string_view code, std::string_view message) {
  auto& handler = detail::diagnostic_slot();
  if (handler) handler(code, message);
}

/// Installs `handler` for the current thread until destroyed.
class ScopedDiagnosticHandler {
 public:
  explicit ScopedDiagnosticHandler(DiagnosticHandler handler)
      : previous_(std::exchange(detail::diagnostic_slot(), std::move(handler))) {}
  ~ScopedDiagnosticHandler() { detail::diagnostic_slot() = std::move(previous_); }

  ScopedDiagnosticHandler(const ScopedDiagnosticHandler&) = delete;
  ScopedDiagnosticHandler& operator=(const ScopedDiagnosticHandler&) = delete;

 private:
  DiagnosticHandler previous_;
};

}  // namespace lanetopo
