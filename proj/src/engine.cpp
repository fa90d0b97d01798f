#include "gdprtm/engine.hpp"

#include <algorithm>
#include <cctype>
#include <set>

namespace gdprtm {

namespace {

bool ci_equal(std::string_view a, std::string_view b) {
  return a.size() == b.size() &&
         std::equal(a.begin(), a.end(), b.begin(), [](unsigned char x, unsigned char y) {
           return std::tolower(x) == std::tolower(y);
         });
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

}  // namespace

std::string to_string(const Binding& binding) {
  std::string out;
  for (const auto& [token, entity] : binding) {
    if (!out.empty()) out += ", ";
    out += to_token(token);
    out += '=';
    out += entity;
  }
  return out;
}

std::map<RoleToken, std::vector<std::string>, RoleTokenTextLess> role_candidates(
    const Diagram& diagram) {
  std::map<RoleToken, std::vector<std::string>, RoleTokenTextLess> out;
  const Diagram canon = diagram.canonicalized();
  for (const Entity& entity : canon.entities) {
    for (GdprRole role : entity.roles.to_vector()) out[role_token_of(role)].push_back(entity.id);
    if (entity.kind == EntityKind::DataStore) out[RoleToken::GDS].push_back(entity.id);
  }
  return out;
}

std::vector<Binding> enumerate_bindings(
    const std::vector<RoleToken>& tokens,
    const std::map<RoleToken, std::vector<std::string>, RoleTokenTextLess>& candidates) {
  std::vector<const std::vector<std::string>*> slots;
  for (RoleToken token : tokens) {
    auto it = candidates.find(token);
    if (it == candidates.end() || it->second.empty()) return {};
    slots.push_back(&it->second);
  }

  std::vector<Binding> out;
  std::vector<std::size_t> index(tokens.size(), 0);
  while (true) {
    Binding binding;
    for (std::size_t i = 0; i < tokens.size(); ++i) binding[tokens[i]] = (*slots[i])[index[i]];
    out.push_back(std::move(binding));
    std::size_t slot = tokens.size();
    while (slot > 0) {
      --slot;
      if (++index[slot] < slots[slot]->size()) break;
      index[slot] = 0;
      if (slot == 0) return out;
    }
    if (tokens.empty()) return out;
  }
}

namespace {

class Evaluator {
 public:
  Evaluator(const Binding& binding, const FactBase& facts) : binding_(binding), facts_(facts) {}

  EvalResult run(const Condition& condition) {
    result_.value = eval(condition);
    return std::move(result_);
  }

 private:
  bool eval(const Condition& c) {
    if (const Atom* atom = std::get_if<Atom>(&c.node)) return eval_atom(*atom);
    if (const BoundaryTest* test = std::get_if<BoundaryTest>(&c.node)) return eval_test(*test);
    if (const AndGroup* g = std::get_if<AndGroup>(&c.node)) {
      bool value = true;
      for (const Condition& child : g->children) value = eval(child) && value;
      return value;
    }
    bool value = false;
    for (const Condition& child : std::get<OrGroup>(c.node).children)
      value = eval(child) || value;
    return value;
  }

  bool eval_atom(const Atom& atom) {
    const std::string& subject = binding_.at(atom.subject);
    std::optional<std::string> object;
    if (atom.object_owner) object = binding_.at(*atom.object_owner);
    const Fact* fact =
        facts_.find(subject, atom.subject, atom.action, object, atom.object_owner, atom.property);
    const bool value = atom.polarity == Polarity::Positive ? fact != nullptr : fact == nullptr;
    TraceEntry entry{to_string(atom), value, std::nullopt};
    if (fact) entry.fact = to_string(*fact);
    result_.trace.push_back(std::move(entry));
    if (!atom.label.empty()) {
      auto [it, inserted] = result_.labels.emplace(atom.label, value);
      if (!inserted) it->second = it->second || value;
    }
    return value;
  }

  bool eval_test(const BoundaryTest& test) {
    const BoundaryCrossing* crossing =
        facts_.find_crossing(binding_.at(test.source), binding_.at(test.target));
    const bool value =
        test.polarity == Polarity::Positive ? crossing != nullptr : crossing == nullptr;
    TraceEntry entry{to_string(test), value, std::nullopt};
    if (crossing) entry.fact = to_string(*crossing);
    result_.trace.push_back(std::move(entry));
    return value;
  }

  const Binding& binding_;
  const FactBase& facts_;
  EvalResult result_;
};

double eval_severity(const Rule& rule, const EvalResult& include,
                     const std::optional<EvalResult>& exclude) {
  if (!rule.severity) return 1.0;
  auto label_value = [&](const std::string& label) {
    auto it = include.labels.find(label);
    if (it != include.labels.end() && it->second) return 1.0;
    if (exclude) {
      auto jt = exclude->labels.find(label);
      if (jt != exclude->labels.end() && jt->second) return 1.0;
    }
    return 0.0;
  };
  double sum = 0.0;
  for (const SeverityTerm& term : rule.severity->terms) {
    double product = 1.0;
    for (const SeverityFactor& factor : term.factors)
      product *= factor.number ? *factor.number : label_value(factor.label);
    sum += product;
  }
  return sum;
}

void derive_conclusion(const Rule& rule, const Binding& binding, FactBase& facts, bool& changed,
                       std::size_t& derived) {
  const Atom& atom = *rule.derived_atom();
  Fact fact;
  fact.subject = binding.at(atom.subject);
  fact.subject_token = atom.subject;
  fact.action = atom.action;
  fact.property = atom.property;
  if (atom.object_owner) {
    fact.object = binding.at(*atom.object_owner);
    fact.object_token = atom.object_owner;
  }
  if (facts.add(std::move(fact), FactOrigin::Derived, rule.id)) {
    changed = true;
    ++derived;
  }
}

std::size_t property_universe(std::span<const RulePack> packs, const FactBase& facts) {
  std::set<std::string> props;
  for (const FactEntry& entry : facts.entries()) props.insert(lower(entry.fact.property));
  for (const RulePack& pack : packs) {
    for (const Rule& rule : pack.rules) {
      auto collect = [&](const Atom& a) { props.insert(lower(a.property)); };
      visit_atoms(rule.include, collect);
      if (rule.exclude) visit_atoms(*rule.exclude, collect);
      if (const Atom* atom = rule.derived_atom()) props.insert(lower(atom->property));
    }
  }
  return props.size();
}

}  // namespace

EvalResult eval_condition(const Condition& condition, const Binding& binding,
                          const FactBase& facts) {
  return Evaluator(binding, facts).run(condition);
}

std::vector<std::string> attribute_sources(const Condition& include, const Binding& binding,
                                           const FactBase& facts) {
  std::set<std::string> sources;
  bool any_negated = false;
  visit_atoms(include, [&](const Atom& atom) {
    if (atom.polarity != Polarity::Negated) return;
    any_negated = true;
    const std::string& subject = binding.at(atom.subject);
    std::optional<std::string> object;
    if (atom.object_owner) object = binding.at(*atom.object_owner);
    if (!facts.find(subject, atom.subject, atom.action, object, atom.object_owner, atom.property))
      sources.insert(subject);
  });
  if (!any_negated) {
    visit_atoms(include, [&](const Atom& atom) {
      if (atom.polarity == Polarity::Positive) sources.insert(binding.at(atom.subject));
    });
  }
  return {sources.begin(), sources.end()};
}

std::vector<std::string> declared_threat_types(std::span<const RulePack> packs) {
  std::set<std::string> types;
  for (const RulePack& pack : packs)
    for (const Rule& rule : pack.rules)
      if (const std::string* name = rule.threat_type()) types.insert(*name);
  return {types.begin(), types.end()};
}

EngineRun run_engine(const Diagram& diagram, std::span<const RulePack> packs) {
  EngineRun run;
  run.diagnostics = validate_packs(packs);
  if (has_errors(run.diagnostics)) return run;

  FactExtractionResult extraction = extract_facts(diagram);
  run.facts = std::move(extraction.facts);
  run.diagnostics.insert(run.diagnostics.end(), extraction.diagnostics.begin(),
                         extraction.diagnostics.end());
  if (has_errors(run.diagnostics)) return run;

  const auto candidates = role_candidates(diagram);
  const std::size_t entity_count = diagram.entities.size();
  run.stats.derivation_iteration_bound = kAllRoleTokens.size() * kAllActions.size() *
                                         property_universe(packs, run.facts) * entity_count *
                                         entity_count;

  struct Grounded {
    const Rule* rule;
    std::vector<Binding> bindings;
  };
  std::vector<Grounded> derivation;
  std::vector<Grounded> threat;
  for (const RulePack& pack : packs) {
    for (const Rule& rule : pack.rules) {
      Grounded g{&rule, enumerate_bindings(role_tokens_of(rule), candidates)};
      if (g.bindings.empty()) continue;
      (rule.stratum == Stratum::Derivation ? derivation : threat).push_back(std::move(g));
    }
  }

  if (!derivation.empty()) {
    bool changed = true;
    while (changed) {
      changed = false;
      ++run.stats.derivation_iterations;
      for (const Grounded& g : derivation) {
        for (const Binding& binding : g.bindings) {
          ++run.stats.bindings_evaluated;
          EvalResult include = eval_condition(g.rule->include, binding, run.facts);
          if (!include.value) continue;
          if (g.rule->exclude &&
              eval_condition(*g.rule->exclude, binding, run.facts).value)
            continue;
          derive_conclusion(*g.rule, binding, run.facts, changed, run.stats.derived_facts);
        }
      }
    }
  }

  for (const Grounded& g : threat) {
    for (const Binding& binding : g.bindings) {
      ++run.stats.bindings_evaluated;
      RuleOutcome outcome;
      outcome.rule = g.rule;
      outcome.binding = binding;
      outcome.include = eval_condition(g.rule->include, binding, run.facts);
      if (g.rule->exclude)
        outcome.exclude = eval_condition(*g.rule->exclude, binding, run.facts);
      outcome.fired =
          outcome.include.value && !(outcome.exclude && outcome.exclude->value);
      if (outcome.fired) {
        outcome.severity = eval_severity(*g.rule, outcome.include, outcome.exclude);
        outcome.sources = attribute_sources(g.rule->include, binding, run.facts);
      }
      run.outcomes.push_back(std::move(outcome));
    }
  }
  return run;
}

InferenceResult run_inference(const Diagram& diagram, std::span<const RulePack> packs,
                              const std::optional<std::string>& goal) {
  EngineRun run = run_engine(diagram, packs);
  InferenceResult result;
  result.facts = std::move(run.facts);
  result.stats = run.stats;
  result.diagnostics = std::move(run.diagnostics);
  if (!result.ok()) return result;

  if (goal) {
    const auto types = declared_threat_types(packs);
    const bool known = std::any_of(types.begin(), types.end(),
                                   [&](const std::string& t) { return ci_equal(t, *goal); });
    if (!known) {
      result.diagnostics.push_back(Diagnostic{Severity::Error, std::string(codes::kGoalUnknown),
                                              "no loaded rule declares threat type '" + *goal +
                                                  "'",
                                              std::nullopt});
      return result;
    }
  }

  for (const RuleOutcome& outcome : run.outcomes) {
    if (!outcome.fired) continue;
    const std::string& type = *outcome.rule->threat_type();
    if (goal && !ci_equal(type, *goal)) continue;
    ThreatFinding finding;
    finding.threat_type = type;
    finding.rule_id = outcome.rule->id;
    finding.pack = outcome.rule->pack;
    finding.severity = outcome.severity;
    finding.binding = outcome.binding;
    finding.sources = outcome.sources;
    finding.trace = outcome.include.trace;
    if (outcome.exclude)
      finding.trace.insert(finding.trace.end(), outcome.exclude->trace.begin(),
                           outcome.exclude->trace.end());
    result.findings.push_back(std::move(finding));
  }

  std::stable_sort(result.findings.begin(), result.findings.end(),
                   [](const ThreatFinding& a, const ThreatFinding& b) {
                     if (a.threat_type != b.threat_type) return a.threat_type < b.threat_type;
                     if (a.rule_id != b.rule_id) return a.rule_id < b.rule_id;
                     if (a.pack != b.pack) return a.pack < b.pack;
                     return to_string(a.binding) < to_string(b.binding);
                   });
  return result;
}

}  // namespace gdprtm
