#include "gdprtm/diagram.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

namespace gdprtm {

std::string_view to_token(GdprRole role) {
  switch (role) {
    case GdprRole::DS:
      return "DS";
    case GdprRole::DC:
      return "DC";
    case GdprRole::DP:
      return "DP";
    case GdprRole::SA:
      return "SA";
    case GdprRole::RM:
      return "RM";
  }
  return "DS";
}

std::optional<GdprRole> gdpr_role_from_token(std::string_view token) {
  for (GdprRole r : kAllRoles)
    if (token == to_token(r)) return r;
  return std::nullopt;
}

std::string_view to_token(EntityKind kind) {
  switch (kind) {
    case EntityKind::ExternalEntity:
      return "external";
    case EntityKind::Process:
      return "process";
    case EntityKind::DataStore:
      return "datastore";
  }
  return "process";
}

std::optional<EntityKind> entity_kind_from_token(std::string_view token) {
  if (token == "external") return EntityKind::ExternalEntity;
  if (token == "process") return EntityKind::Process;
  if (token == "datastore") return EntityKind::DataStore;
  return std::nullopt;
}

std::string_view to_token(BoundaryKind kind) {
  return kind == BoundaryKind::Generic ? "generic" : "compliance";
}

std::optional<BoundaryKind> boundary_kind_from_token(std::string_view token) {
  if (token == "generic") return BoundaryKind::Generic;
  if (token == "compliance") return BoundaryKind::Compliance;
  return std::nullopt;
}

std::size_t RoleSet::size() const {
  std::size_t n = 0;
  for (GdprRole r : kAllRoles)
    if (contains(r)) ++n;
  return n;
}

std::vector<GdprRole> RoleSet::to_vector() const {
  std::vector<GdprRole> out;
  for (GdprRole r : kAllRoles)
    if (contains(r)) out.push_back(r);
  return out;
}

const Entity* Diagram::find_entity(std::string_view id) const {
  for (const Entity& e : entities)
    if (e.id == id) return &e;
  return nullptr;
}

Diagram Diagram::canonicalized() const {
  Diagram out = *this;
  std::sort(out.entities.begin(), out.entities.end(),
            [](const Entity& a, const Entity& b) { return a.id < b.id; });
  std::sort(out.boundaries.begin(), out.boundaries.end(),
            [](const TrustBoundary& a, const TrustBoundary& b) { return a.id < b.id; });
  for (TrustBoundary& tb : out.boundaries) {
    std::sort(tb.members.begin(), tb.members.end());
    tb.members.erase(std::unique(tb.members.begin(), tb.members.end()), tb.members.end());
  }
  std::sort(out.flows.begin(), out.flows.end(), [](const Flow& a, const Flow& b) {
    return std::tie(a.source, a.target, a.id) < std::tie(b.source, b.target, b.id);
  });
  return out;
}

bool operator==(const Diagram& a, const Diagram& b) {
  const Diagram ca = a.canonicalized();
  const Diagram cb = b.canonicalized();
  return ca.entities == cb.entities && ca.flows == cb.flows && ca.boundaries == cb.boundaries;
}

bool is_valid_identifier(std::string_view id) {
  if (id.empty()) return false;
  if (!std::isalpha(static_cast<unsigned char>(id.front()))) return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
  });
}

namespace {

void add(std::vector<Diagnostic>& out, Severity sev, std::string_view code, std::string message,
         const SourceSpan& span) {
  std::optional<SourceSpan> where;
  if (span != SourceSpan{}) where = span;
  out.push_back(Diagnostic{sev, std::string(code), std::move(message), where});
}

void check_unique_annotations(std::vector<Diagnostic>& out, const std::vector<std::string>& anns,
                              std::string_view owner_kind, std::string_view owner_id,
                              const SourceSpan& span) {
  std::set<std::string_view> seen;
  for (const std::string& a : anns) {
    if (!seen.insert(a).second) {
      std::ostringstream msg;
      msg << "annotation '" << a << "' appears more than once on " << owner_kind << " '"
          << owner_id << "'";
      add(out, Severity::Error, codes::kDupAnnotation, msg.str(), span);
    }
  }
}

}  // namespace

std::vector<Diagnostic> validate_diagram(const Diagram& d) {
  std::vector<Diagnostic> out;
  std::set<std::string_view> entity_ids;
  std::map<GdprRole, int> role_counts;

  for (const Entity& e : d.entities) {
    if (!is_valid_identifier(e.id)) {
      add(out, Severity::Error, codes::kBadId,
          "entity id '" + e.id + "' is not a valid identifier", e.span);
    }
    if (!entity_ids.insert(e.id).second) {
      add(out, Severity::Error, codes::kDupId, "duplicate entity id '" + e.id + "'", e.span);
    }
    if (e.kind == EntityKind::DataStore && !e.roles.empty()) {
      add(out, Severity::Error, codes::kStoreRole,
          "data store '" + e.id + "' must not carry a GDPR role", e.span);
    }
    for (GdprRole r : e.roles.to_vector()) ++role_counts[r];
    check_unique_annotations(out, e.annotations, "entity", e.id, e.span);
  }

  for (GdprRole r : {GdprRole::RM, GdprRole::SA}) {
    if (role_counts[r] > 1) {
      std::ostringstream msg;
      msg << role_counts[r] << " entities carry role " << to_token(r)
          << "; at most one is expected";
      add(out, Severity::Warning, codes::kDupRoleEntity, msg.str(), SourceSpan{});
    }
  }

  std::set<std::string_view> flow_ids;
  for (const Flow& f : d.flows) {
    if (!is_valid_identifier(f.id)) {
      add(out, Severity::Error, codes::kBadId, "flow id '" + f.id + "' is not a valid identifier",
          f.span);
    }
    if (!flow_ids.insert(f.id).second) {
      add(out, Severity::Error, codes::kDupId, "duplicate flow id '" + f.id + "'", f.span);
    }
    if (f.source == f.target) {
      add(out, Severity::Error, codes::kSelfFlow,
          "flow '" + f.id + "' connects '" + f.source + "' to itself", f.span);
    }
    for (const std::string* endpoint : {&f.source, &f.target}) {
      if (!entity_ids.contains(*endpoint)) {
        add(out, Severity::Error, codes::kUnknownRef,
            "flow '" + f.id + "' references undeclared entity '" + *endpoint + "'", f.span);
      }
    }
    check_unique_annotations(out, f.annotations, "flow", f.id, f.span);
  }

  std::set<std::string_view> boundary_ids;
  for (const TrustBoundary& tb : d.boundaries) {
    if (!is_valid_identifier(tb.id)) {
      add(out, Severity::Error, codes::kBadId,
          "boundary id '" + tb.id + "' is not a valid identifier", tb.span);
    }
    if (!boundary_ids.insert(tb.id).second) {
      add(out, Severity::Error, codes::kDupId, "duplicate boundary id '" + tb.id + "'", tb.span);
    }
    if (tb.members.empty()) {
      add(out, Severity::Error, codes::kEmptyBoundary, "boundary '" + tb.id + "' has no members",
          tb.span);
    }
    for (const std::string& m : tb.members) {
      if (!entity_ids.contains(m)) {
        add(out, Severity::Error, codes::kUnknownRef,
            "boundary '" + tb.id + "' references undeclared entity '" + m + "'", tb.span);
      }
    }
  }

  sort_diagnostics(out);
  return out;
}

}  // namespace gdprtm
