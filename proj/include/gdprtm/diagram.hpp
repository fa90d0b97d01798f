#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gdprtm/diagnostics.hpp"

namespace gdprtm {

/// The five GDPR roles an entity may take in the extended DFD.
enum class GdprRole : std::uint8_t { DS, DC, DP, SA, RM };

inline constexpr std::array<GdprRole, 5> kAllRoles = {
    GdprRole::DS, GdprRole::DC, GdprRole::DP, GdprRole::SA, GdprRole::RM};

std::string_view to_token(GdprRole role);
std::optional<GdprRole> gdpr_role_from_token(std::string_view token);

enum class EntityKind : std::uint8_t { ExternalEntity, Process, DataStore };

std::string_view to_token(EntityKind kind);
std::optional<EntityKind> entity_kind_from_token(std::string_view token);

/// Reserved rule-language subject that binds over all data stores; data
/// stores themselves never carry a GdprRole.
inline constexpr std::string_view kStoreSubjectToken = "GDS";

/// Small value-semantic role set, iterated in declaration order.
class RoleSet {
 public:
  constexpr RoleSet() = default;
  RoleSet(std::initializer_list<GdprRole> roles) {
    for (GdprRole r : roles) insert(r);
  }

  void insert(GdprRole role) { bits_ |= bit(role); }
  bool contains(GdprRole role) const { return (bits_ & bit(role)) != 0; }
  bool empty() const { return bits_ == 0; }
  std::size_t size() const;

  /// Roles in canonical DS, DC, DP, SA, RM order.
  std::vector<GdprRole> to_vector() const;

  friend bool operator==(const RoleSet&, const RoleSet&) = default;
  friend auto operator<=>(const RoleSet&, const RoleSet&) = default;

 private:
  static constexpr std::uint8_t bit(GdprRole role) {
    return static_cast<std::uint8_t>(1u << static_cast<std::uint8_t>(role));
  }
  std::uint8_t bits_ = 0;
};

/// DFD node: external entity, process, or data store. `span` records where
/// the entity was declared and does not take part in value identity.
struct Entity {
  std::string id;
  EntityKind kind = EntityKind::Process;
  RoleSet roles;
  std::string label;
  std::vector<std::string> annotations;  // self-annotations, each at most once
  SourceSpan span{};

  friend bool operator==(const Entity& a, const Entity& b) {
    return a.id == b.id && a.kind == b.kind && a.roles == b.roles && a.label == b.label &&
           a.annotations == b.annotations;
  }
};

struct Flow {
  std::string id;
  std::string source;
  std::string target;
  std::vector<std::string> annotations;  // ordered, each token at most once
  SourceSpan span{};

  friend bool operator==(const Flow& a, const Flow& b) {
    return a.id == b.id && a.source == b.source && a.target == b.target &&
           a.annotations == b.annotations;
  }
};

enum class BoundaryKind : std::uint8_t { Generic, Compliance };

std::string_view to_token(BoundaryKind kind);
std::optional<BoundaryKind> boundary_kind_from_token(std::string_view token);

struct TrustBoundary {
  std::string id;
  BoundaryKind kind = BoundaryKind::Generic;
  std::vector<std::string> members;  // entity ids, kept sorted and unique
  SourceSpan span{};

  friend bool operator==(const TrustBoundary& a, const TrustBoundary& b) {
    return a.id == b.id && a.kind == b.kind && a.members == b.members;
  }
};

/// The GDPR-extended data-flow diagram. Immutable by convention once built;
/// all analyses take it by const reference.
struct Diagram {
  std::vector<Entity> entities;
  std::vector<Flow> flows;
  std::vector<TrustBoundary> boundaries;

  const Entity* find_entity(std::string_view id) const;

  /// Copy with entities/boundaries sorted by id and flows by
  /// (source, target, id) — the serializer's order.
  Diagram canonicalized() const;

  /// Declaration order is not significant: equality compares the
  /// canonicalized forms.
  friend bool operator==(const Diagram& a, const Diagram& b);
};

/// Identifier rule shared by entity, flow, and boundary ids.
bool is_valid_identifier(std::string_view id);

namespace codes {
inline constexpr std::string_view kBadId = "E_BAD_ID";
inline constexpr std::string_view kDupId = "E_DUP_ID";
inline constexpr std::string_view kStoreRole = "E_STORE_ROLE";
inline constexpr std::string_view kSelfFlow = "E_SELF_FLOW";
inline constexpr std::string_view kUnknownRef = "E_UNKNOWN_REF";
inline constexpr std::string_view kDupAnnotation = "E_DUP_ANNOTATION";
inline constexpr std::string_view kEmptyBoundary = "E_EMPTY_BOUNDARY";
inline constexpr std::string_view kDupRoleEntity = "W_DUP_ROLE_ENTITY";
}  // namespace codes

/// Pure invariant check; returns diagnostics ordered by (location, code).
/// Empty result means every diagram invariant holds. Duplicate RM or SA
/// assignments are reported as warnings, everything else as errors.
std::vector<Diagnostic> validate_diagram(const Diagram& d);

}  // namespace gdprtm
