#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace gdprtm {

/// 1-based position and extent of a construct in an input document.
struct SourceSpan {
  int line = 1;
  int column = 1;
  int length = 0;

  friend bool operator==(const SourceSpan&, const SourceSpan&) = default;
  friend auto operator<=>(const SourceSpan&, const SourceSpan&) = default;
};

enum class Severity { Note, Warning, Error };

namespace codes {
inline constexpr std::string_view kSyntax = "E_SYNTAX";
}  // namespace codes

std::string_view to_string(Severity severity);

/// One parse or validation message. `code` values are stable identifiers
/// (E_* errors, W_* warnings) that callers and tests match on; `span` is
/// absent for values constructed programmatically rather than parsed.
struct Diagnostic {
  Severity severity = Severity::Error;
  std::string code;
  std::string message;
  std::optional<SourceSpan> span;

  friend bool operator==(const Diagnostic&, const Diagnostic&) = default;
};

bool has_errors(const std::vector<Diagnostic>& diagnostics);

/// Orders by (location, code); span-less diagnostics sort first.
void sort_diagnostics(std::vector<Diagnostic>& diagnostics);

/// "12:5: error: [E_UNKNOWN_REF] flow target 'B' is not a declared entity"
std::string format_diagnostic(const Diagnostic& d);

}  // namespace gdprtm
