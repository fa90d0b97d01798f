#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "gdprtm/diagnostics.hpp"
#include "gdprtm/diagram.hpp"

namespace gdprtm {

/// Closed action vocabulary of the rule language. The parser normalizes the
/// spelling "Accom Request" to Accomplish.
enum class Action : std::uint8_t {
  Provide,
  Request,
  Notify,
  Response,
  Accomplish,
  Complain,
  Report
};

inline constexpr std::array<Action, 7> kAllActions = {
    Action::Provide, Action::Request,  Action::Notify, Action::Response,
    Action::Accomplish, Action::Complain, Action::Report};

std::string_view to_token(Action action);
std::optional<Action> action_from_token(std::string_view token);  // case-insensitive

/// Subject/owner vocabulary of rule conditions: the five GDPR roles plus
/// the reserved GDS token that binds over data stores.
enum class RoleToken : std::uint8_t { DS, DC, DP, SA, RM, GDS };

inline constexpr std::array<RoleToken, 6> kAllRoleTokens = {
    RoleToken::DS, RoleToken::DC, RoleToken::DP, RoleToken::SA, RoleToken::RM, RoleToken::GDS};

std::string_view to_token(RoleToken token);
std::optional<RoleToken> role_token_from(std::string_view text);
std::optional<GdprRole> to_gdpr_role(RoleToken token);  // nullopt for GDS
RoleToken role_token_of(GdprRole role);

enum class Polarity : std::uint8_t { Positive, Negated };

/// Ground condition leaf `SUBJ.Action{[OWNER.]Property}[=NOT]`. Properties
/// keep their written spelling; fact matching compares them
/// case-insensitively.
struct Atom {
  RoleToken subject = RoleToken::DS;
  Action action = Action::Provide;
  std::optional<RoleToken> object_owner;
  std::string property;
  Polarity polarity = Polarity::Positive;
  std::string label;  // optional, for severity expressions
  SourceSpan span{};

  friend bool operator==(const Atom& a, const Atom& b) {
    return a.subject == b.subject && a.action == b.action && a.object_owner == b.object_owner &&
           a.property == b.property && a.polarity == b.polarity && a.label == b.label;
  }
};

/// True when the two atoms name the same ground pattern, ignoring polarity,
/// labels, and property case. Used by stratification checks.
bool same_ground_atom(const Atom& a, const Atom& b);

/// Topology leaf `CROSSES(SRC, DST)[=NOT]`: true when a flow from the
/// SRC-bound entity to the DST-bound entity crosses a trust boundary.
/// Restricted to derivation-stratum rules.
struct BoundaryTest {
  RoleToken source = RoleToken::DS;
  RoleToken target = RoleToken::DC;
  Polarity polarity = Polarity::Positive;
  SourceSpan span{};

  friend bool operator==(const BoundaryTest& a, const BoundaryTest& b) {
    return a.source == b.source && a.target == b.target && a.polarity == b.polarity;
  }
};

struct Condition;

struct AndGroup {
  std::vector<Condition> children;  // >= 2
  friend bool operator==(const AndGroup&, const AndGroup&);
};

struct OrGroup {
  std::vector<Condition> children;  // >= 2
  friend bool operator==(const OrGroup&, const OrGroup&);
};

/// AND binds tighter than OR; both are left-associative and parsed into
/// n-ary groups, so `a AND b OR c AND d` is Or(And(a,b), And(c,d)).
struct Condition {
  std::variant<Atom, BoundaryTest, AndGroup, OrGroup> node;

  friend bool operator==(const Condition& a, const Condition& b) { return a.node == b.node; }
};

/// Flat linear severity expression: a sum of products of numeric constants
/// and atom labels (each label weighs 1 when its atom held, 0 otherwise).
struct SeverityFactor {
  std::optional<double> number;  // exactly one of number/label is set
  std::string label;

  friend bool operator==(const SeverityFactor&, const SeverityFactor&) = default;
};

struct SeverityTerm {
  std::vector<SeverityFactor> factors;  // product

  friend bool operator==(const SeverityTerm&, const SeverityTerm&) = default;
};

struct SeverityExpr {
  std::vector<SeverityTerm> terms;  // sum

  friend bool operator==(const SeverityExpr&, const SeverityExpr&) = default;
};

enum class Stratum : std::uint8_t { Derivation, Threat };

std::string_view to_token(Stratum stratum);

/// Rule conclusion: a threat type name (threat stratum) or a positive atom
/// added to the fact base (derivation stratum).
using Conclusion = std::variant<std::string, Atom>;

struct Rule {
  std::string id;
  Stratum stratum = Stratum::Threat;
  Condition include;
  std::optional<Condition> exclude;
  Conclusion conclusion;
  std::optional<SeverityExpr> severity;
  std::string pack;
  /// Set when the include mixes AND and OR without parentheses; surfaced by
  /// the rule listing so authors can double-check the grouping.
  bool mixed_precedence = false;
  SourceSpan span{};

  const std::string* threat_type() const { return std::get_if<std::string>(&conclusion); }
  const Atom* derived_atom() const { return std::get_if<Atom>(&conclusion); }

  friend bool operator==(const Rule& a, const Rule& b) {
    return a.id == b.id && a.stratum == b.stratum && a.include == b.include &&
           a.exclude == b.exclude && a.conclusion == b.conclusion && a.severity == b.severity &&
           a.pack == b.pack;
  }
};

struct RulePack {
  std::string name;
  std::vector<Rule> rules;

  friend bool operator==(const RulePack& a, const RulePack& b) {
    return a.name == b.name && a.rules == b.rules;
  }
};

namespace codes {
inline constexpr std::string_view kDupRule = "E_DUP_RULE";
inline constexpr std::string_view kStratification = "E_STRATIFICATION";
inline constexpr std::string_view kExcludeRole = "E_EXCLUDE_ROLE";
inline constexpr std::string_view kSeverityLabel = "E_SEVERITY_LABEL";
inline constexpr std::string_view kTopologyStratum = "E_TOPOLOGY_STRATUM";
inline constexpr std::string_view kUnreachableRule = "W_UNREACHABLE_RULE";
inline constexpr std::string_view kDupPack = "E_DUP_PACK";
}  // namespace codes

struct RulesParseResult {
  std::optional<RulePack> pack;
  std::vector<Diagnostic> diagnostics;

  bool ok() const { return pack.has_value(); }
};

/// Parses a .rules document. Block form:
///
///   [rule <id> [stratum <derivation|threat>]]
///   Threat type: <name>            (or, for derivation rules, Derives: <atom>)
///   IF <condition>
///   [EXCLUDE IF <condition>]
///   THEN {<name or atom>} [severity = <expr>]
///
/// Conditions may span lines and may contain blank lines; `Include:` before
/// IF and `Exclude: IF` are accepted. A block without a rule header gets an
/// id slugged from its conclusion. The THEN line must restate the
/// conclusion (threat names match case-insensitively; the THEN spelling
/// wins).
RulesParseResult parse_rules(std::string_view text, std::string_view pack_name);

std::string to_string(const Atom& atom);
std::string to_string(const BoundaryTest& test);
std::string to_string(const Condition& condition);
std::string to_string(const SeverityExpr& expr);
std::string serialize_rule(const Rule& rule);

/// Canonical pack text; serialize(parse(text)) is a fixpoint under re-parse.
std::string serialize_rulepack(const RulePack& pack);

/// Role tokens appearing anywhere in the rule (include, exclude,
/// conclusion), sorted by token text.
std::vector<RoleToken> role_tokens_of(const Rule& rule);

/// Calls fn for every atom leaf, left to right. Boundary tests are skipped.
void visit_atoms(const Condition& condition, const std::function<void(const Atom&)>& fn);

/// Flags duplicate ids, stratification violations (a derivation conclusion
/// consumed negatively by a derivation rule), excludes quantifying over
/// roles absent from the include, topology tests outside the derivation
/// stratum, unresolved severity labels, and rules shadowed by an identical
/// earlier rule.
std::vector<Diagnostic> validate_rulepack(const RulePack& pack);

/// Load-set validation: per-pack checks plus pack-name uniqueness and
/// cross-pack stratification.
std::vector<Diagnostic> validate_packs(std::span<const RulePack> packs);

}  // namespace gdprtm
