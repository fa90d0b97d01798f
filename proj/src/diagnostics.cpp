#include "gdprtm/diagnostics.hpp"

#include <algorithm>
#include <sstream>
#include <tuple>

namespace gdprtm {

std::string_view to_string(Severity severity) {
  switch (severity) {
    case Severity::Note:
      return "note";
    case Severity::Warning:
      return "warning";
    case Severity::Error:
      return "error";
  }
  return "error";
}

bool has_errors(const std::vector<Diagnostic>& diagnostics) {
  return std::any_of(diagnostics.begin(), diagnostics.end(),
                     [](const Diagnostic& d) { return d.severity == Severity::Error; });
}

void sort_diagnostics(std::vector<Diagnostic>& diagnostics) {
  std::stable_sort(diagnostics.begin(), diagnostics.end(),
                   [](const Diagnostic& a, const Diagnostic& b) {
                     const SourceSpan sa = a.span.value_or(SourceSpan{0, 0, 0});
                     const SourceSpan sb = b.span.value_or(SourceSpan{0, 0, 0});
                     return std::tie(sa.line, sa.column, a.code, a.message) <
                            std::tie(sb.line, sb.column, b.code, b.message);
                   });
}

std::string format_diagnostic(const Diagnostic& d) {
  std::ostringstream out;
  if (d.span) out << d.span->line << ':' << d.span->column << ": ";
  out << to_string(d.severity) << ": [" << d.code << "] " << d.message;
  return out.str();
}

}  // namespace gdprtm
