#include "koa/error.hpp"

namespace koa {

std::string_view category_name(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::Usage: return "usage";
    case ErrorCategory::Io: return "io";
    case ErrorCategory::Schema: return "schema";
    case ErrorCategory::Parse: return "parse";
    case ErrorCategory::Integrity: return "integrity";
    case ErrorCategory::Spec: return "spec";
    case ErrorCategory::Task: return "task";
    case ErrorCategory::Dimension: return "dimension";
    case ErrorCategory::Numeric: return "numeric";
    case ErrorCategory::DegenerateLabel: return "degenerate-label";
    case ErrorCategory::Singular: return "singular";
    case ErrorCategory::Stratification: return "stratification";
    case ErrorCategory::FoldDegeneracy: return "fold-degeneracy";
    case ErrorCategory::Input: return "input";
    case ErrorCategory::Transport: return "transport";
    case ErrorCategory::Validation: return "validation";
    case ErrorCategory::Range: return "range";
    case ErrorCategory::Uniqueness: return "uniqueness";
    case ErrorCategory::UnknownPacket: return "unknown-packet";
    case ErrorCategory::Blinding: return "blinding";
    case ErrorCategory::Sealed: return "sealed";
  }
  return "unknown";
}

int exit_code(ErrorCategory category) {
  if (category == ErrorCategory::Usage) return 2;
  return 3 + static_cast<int>(category) - 1;
}

}  // namespace koa
