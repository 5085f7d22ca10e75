#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace koa {

enum class ErrorCategory {
  Usage,
  Io,
  Schema,
  Parse,
  Integrity,
  Spec,
  Task,
  Dimension,
  Numeric,
  DegenerateLabel,
  Singular,
  Stratification,
  FoldDegeneracy,
  Input,
  Transport,
  Validation,
  Range,
  Uniqueness,
  UnknownPacket,
  Blinding,
  Sealed,
};

std::string_view category_name(ErrorCategory category);

// Process exit status used by the CLI for each category. Usage is 2; all
// other categories map to distinct values >= 3.
int exit_code(ErrorCategory category);

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& message)
      : std::runtime_error(message), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

  // Transport failures may succeed on retry; nothing else does.
  bool retriable() const noexcept { return category_ == ErrorCategory::Transport; }

 private:
  ErrorCategory category_;
};

[[noreturn]] inline void fail(ErrorCategory category, const std::string& message) {
  throw Error(category, message);
}

}  // namespace koa
