#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gdprtm/diagram.hpp"
#include "gdprtm/diagnostics.hpp"
#include "gdprtm/rules.hpp"

namespace gdprtm {

namespace codes {
inline constexpr std::string_view kAnnotationRoleMismatch = "E_ANNOTATION_ROLE_MISMATCH";
}  // namespace codes

// A ground fact: an entity, under one of its roles (or as a data store),
// performed an action on a property, optionally owned by another entity.
struct Fact {
  std::string subject;
  RoleToken subject_token = RoleToken::DS;
  Action action = Action::Provide;
  std::string object;  // empty when the fact has no object owner
  std::optional<RoleToken> object_token;
  std::string property;
};

// e.g. "P(DS).Request{TSS(DC).EraseData}"
std::string to_string(const Fact& fact);

// Identity ignores property case. Ordering is the canonical dump order.
bool fact_equal(const Fact& a, const Fact& b);
bool fact_less(const Fact& a, const Fact& b);

enum class FactOrigin { FlowAnnotation, EntityAnnotation, Derived };

struct FactEntry {
  Fact fact;
  FactOrigin origin = FactOrigin::FlowAnnotation;
  std::string origin_id;  // flow id, entity id, or rule id
};

struct BoundaryCrossing {
  std::string flow;
  std::string source;
  std::string target;

  friend bool operator==(const BoundaryCrossing&, const BoundaryCrossing&) = default;
};

std::string to_string(const BoundaryCrossing& crossing);

class FactBase {
 public:
  // Returns false when an equal fact is already present; the first origin wins.
  bool add(Fact fact, FactOrigin origin, std::string origin_id);
  void add_crossing(BoundaryCrossing crossing);

  // Finds a fact matching the given shape. When object_entity is empty the
  // fact's object is not inspected, so an ownerless atom matches any object.
  const Fact* find(std::string_view subject, RoleToken subject_token, Action action,
                   const std::optional<std::string>& object_entity,
                   std::optional<RoleToken> object_token, std::string_view property) const;
  bool holds(const Fact& fact) const;

  const BoundaryCrossing* find_crossing(std::string_view source, std::string_view target) const;

  const std::vector<FactEntry>& entries() const { return entries_; }
  const std::vector<BoundaryCrossing>& crossings() const { return crossings_; }
  std::size_t size() const { return entries_.size(); }

  // One line per fact, then one per crossing, in canonical order.
  std::string dump() const;

 private:
  std::vector<FactEntry> entries_;      // sorted by fact_less
  std::vector<BoundaryCrossing> crossings_;  // sorted by flow id
};

struct FactExtractionResult {
  FactBase facts;
  std::vector<Diagnostic> diagnostics;
};

// Walks the diagram's annotations and trust boundaries. The diagram should
// already have passed validate_diagram; dangling references are skipped.
FactExtractionResult extract_facts(const Diagram& diagram);

}  // namespace gdprtm
