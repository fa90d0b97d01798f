#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gdprtm/diagram.hpp"
#include "gdprtm/facts.hpp"
#include "gdprtm/rules.hpp"

namespace gdprtm {

namespace codes {
inline constexpr std::string_view kGoalUnknown = "E_GOAL_UNKNOWN";
}  // namespace codes

struct RoleTokenTextLess {
  bool operator()(RoleToken a, RoleToken b) const { return to_token(a) < to_token(b); }
};

// role token -> bound entity id, iterated in token text order
using Binding = std::map<RoleToken, std::string, RoleTokenTextLess>;

std::string to_string(const Binding& binding);  // "DC=TSS, DS=P"

struct TraceEntry {
  std::string atom;  // the rule's atom as written, canonical form
  bool value = false;
  std::optional<std::string> fact;  // the matching fact, when one exists

  friend bool operator==(const TraceEntry&, const TraceEntry&) = default;
};

struct EvalResult {
  bool value = false;
  std::vector<TraceEntry> trace;                     // every leaf, left to right
  std::map<std::string, bool, std::less<>> labels;   // atom label -> truth
};

struct RuleOutcome {
  const Rule* rule = nullptr;
  Binding binding;
  EvalResult include;
  std::optional<EvalResult> exclude;
  bool fired = false;
  double severity = 1.0;
  std::vector<std::string> sources;  // attributed entities, only when fired
};

struct ThreatFinding {
  std::string threat_type;
  std::string rule_id;
  std::string pack;
  double severity = 1.0;
  Binding binding;
  std::vector<std::string> sources;
  std::vector<TraceEntry> trace;  // include leaves, then exclude leaves

  friend bool operator==(const ThreatFinding&, const ThreatFinding&) = default;
};

struct InferenceStats {
  std::size_t derivation_iterations = 0;
  std::size_t derivation_iteration_bound = 0;
  std::size_t derived_facts = 0;
  std::size_t bindings_evaluated = 0;
};

struct EngineRun {
  FactBase facts;  // extracted plus derived
  InferenceStats stats;
  std::vector<Diagnostic> diagnostics;
  std::vector<RuleOutcome> outcomes;  // every threat rule x binding, evaluation order

  bool ok() const { return !has_errors(diagnostics); }
};

struct InferenceResult {
  std::vector<ThreatFinding> findings;
  FactBase facts;
  InferenceStats stats;
  std::vector<Diagnostic> diagnostics;

  bool ok() const { return !has_errors(diagnostics); }
};

// Candidate entities per role token, in entity id order. GDS binds data
// stores; the five role tokens bind entities holding that role.
std::map<RoleToken, std::vector<std::string>, RoleTokenTextLess> role_candidates(
    const Diagram& diagram);

// Cartesian product over the given tokens; empty when any token has no
// candidate. Bindings come out in lexicographic (token, entity id) order.
std::vector<Binding> enumerate_bindings(
    const std::vector<RoleToken>& tokens,
    const std::map<RoleToken, std::vector<std::string>, RoleTokenTextLess>& candidates);

// Closed-world evaluation. Every leaf is evaluated, none short-circuited,
// so traces always cover the whole condition.
EvalResult eval_condition(const Condition& condition, const Binding& binding,
                          const FactBase& facts);

// Source attribution over a fired include: the entities bound as subjects of
// negated atoms that evaluated true (their expected fact is missing). A rule
// whose include has no negated atoms falls back to the subjects of its
// positive atoms.
std::vector<std::string> attribute_sources(const Condition& include, const Binding& binding,
                                           const FactBase& facts);

// Every threat type declared across the packs, sorted, deduplicated.
std::vector<std::string> declared_threat_types(std::span<const RulePack> packs);

// Validates the pack set, extracts facts, runs the derivation stratum to a
// fixpoint, then evaluates each threat rule over each binding.
EngineRun run_engine(const Diagram& diagram, std::span<const RulePack> packs);

// run_engine plus conversion of fired outcomes into sorted findings. A goal
// restricts findings to one threat type (matched case-insensitively) and is
// an error when no loaded rule declares it.
InferenceResult run_inference(const Diagram& diagram, std::span<const RulePack> packs,
                              const std::optional<std::string>& goal = std::nullopt);

}  // namespace gdprtm
