#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gdprtm/diagram.hpp"

namespace gdprtm {

namespace codes {
inline constexpr std::string_view kUnknownKeyword = "E_UNKNOWN_KEYWORD";
inline constexpr std::string_view kBadRole = "E_BAD_ROLE";
inline constexpr std::string_view kUnknownAnnotation = "W_UNKNOWN_ANNOTATION";
inline constexpr std::string_view kDupAnnotationParse = "W_DUP_ANNOTATION";
}  // namespace codes

struct DiagramParseResult {
  /// Present iff no error-severity diagnostic was produced; warnings may
  /// accompany a successful parse.
  std::optional<Diagram> diagram;
  std::vector<Diagnostic> diagnostics;

  bool ok() const { return diagram.has_value(); }
};

/// Parses the line-oriented .dfd format:
///
///   entity <id> kind=<external|process|datastore> [roles=R[,R]*]
///          [label="..."] [: ann[, ann]*]
///   store <id> [label="..."] [: ann[, ann]*]
///   boundary <id> kind=<generic|compliance> { <id> <id> ... }
///   flow [<id>] <src> -> <dst> [: ann[, ann]*]
///   # comment
///
/// Flows without an explicit id receive f1, f2, ... in document order,
/// skipping ids taken elsewhere. CP and CRFP annotation aliases expand at
/// parse time. Total over arbitrary byte input: every failure is reported
/// as a diagnostic with a span, never an exception.
DiagramParseResult parse_diagram(std::string_view text);

/// Canonical form: entities sorted by id, then boundaries by id, then flows
/// by (source, target, id); LF line endings; explicit flow ids. The result
/// re-parses to a Diagram equal to the input (spans aside).
std::string serialize_diagram(const Diagram& d);

}  // namespace gdprtm
