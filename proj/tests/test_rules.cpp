#include <algorithm>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "gdprtm/rules.hpp"
#include "support/generators.hpp"

using namespace gdprtm;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE_MESSAGE(in.good(), path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

RulePack parse_pack(std::string_view name) {
  auto r = parse_rules(slurp(std::string(GDPRTM_RULES_DIR) + "/" + std::string(name) + ".rules"),
                       name);
  REQUIRE_MESSAGE(r.ok(), std::string(name));
  return *r.pack;
}

RulePack must_parse(std::string_view text, std::string_view name = "t") {
  auto r = parse_rules(text, name);
  std::string messages;
  for (const Diagnostic& d : r.diagnostics) messages += d.message + "\n";
  REQUIRE_MESSAGE(r.ok(), messages);
  return *r.pack;
}

const Atom& atom_at(const Condition& c, std::size_t i) {
  if (const AndGroup* g = std::get_if<AndGroup>(&c.node)) return std::get<Atom>(g->children[i].node);
  const OrGroup& g = std::get<OrGroup>(c.node);
  return std::get<Atom>(g.children[i].node);
}

bool has_code(const std::vector<Diagnostic>& diags, std::string_view code) {
  return std::any_of(diags.begin(), diags.end(),
                     [&](const Diagnostic& d) { return d.code == code; });
}

Atom mk_atom(RoleToken subj, Action act, std::optional<RoleToken> owner, std::string prop,
             Polarity pol = Polarity::Positive) {
  Atom a;
  a.subject = subj;
  a.action = act;
  a.object_owner = owner;
  a.property = std::move(prop);
  a.polarity = pol;
  return a;
}

}  // namespace

TEST_SUITE("rule-language") {

TEST_CASE("bundled gdpr pack parses verbatim") {
  auto r = parse_rules(slurp(std::string(GDPRTM_RULES_DIR) + "/gdpr.rules"), "gdpr");
  REQUIRE(r.ok());
  CHECK(r.diagnostics.empty());
  REQUIRE(r.pack->rules.size() == 3);

  const Rule& consent = r.pack->rules[0];
  const Rule& erasure = r.pack->rules[1];
  const Rule& account = r.pack->rules[2];

  CHECK(consent.id == "non-consent");
  CHECK(erasure.id == "non-provided-right-to-erasure");
  CHECK(account.id == "non-accountability");
  for (const Rule& rule : r.pack->rules) {
    CHECK(rule.stratum == Stratum::Threat);
    CHECK(!rule.exclude.has_value());
    CHECK(!rule.severity.has_value());
    CHECK(rule.pack == "gdpr");
  }

  // the THEN spelling wins over the lowercase header spelling
  REQUIRE(consent.threat_type() != nullptr);
  CHECK(*consent.threat_type() == "non-Consent");
  CHECK(*erasure.threat_type() == "non-provided right to erasure");
  CHECK(*account.threat_type() == "non-accountability");

  const AndGroup* consent_and = std::get_if<AndGroup>(&consent.include.node);
  REQUIRE(consent_and != nullptr);
  REQUIRE(consent_and->children.size() == 2);
  CHECK(atom_at(consent.include, 0) ==
        mk_atom(RoleToken::DS, Action::Provide, std::nullopt, "Consent", Polarity::Negated));
  CHECK(atom_at(consent.include, 1) == mk_atom(RoleToken::DC, Action::Provide, RoleToken::DS,
                                               "ConsentRequestForm", Polarity::Negated));
  CHECK(!consent.mixed_precedence);

  // AND binds tighter than OR: one top-level OR with two AND branches
  const OrGroup* erasure_or = std::get_if<OrGroup>(&erasure.include.node);
  REQUIRE(erasure_or != nullptr);
  REQUIRE(erasure_or->children.size() == 2);
  const AndGroup* first = std::get_if<AndGroup>(&erasure_or->children[0].node);
  const AndGroup* second = std::get_if<AndGroup>(&erasure_or->children[1].node);
  REQUIRE(first != nullptr);
  REQUIRE(second != nullptr);
  CHECK(first->children.size() == 4);
  CHECK(second->children.size() == 5);
  CHECK(erasure.mixed_precedence);

  CHECK(std::get<Atom>(first->children[0].node) ==
        mk_atom(RoleToken::DS, Action::Request, RoleToken::DC, "EraseData"));
  CHECK(std::get<Atom>(first->children[1].node) ==
        mk_atom(RoleToken::DC, Action::Request, RoleToken::GDS, "CleanData", Polarity::Negated));

  // `GDS.Response.{cleanData}=Not`: stray dot and lowercase Not are tolerated
  CHECK(std::get<Atom>(second->children[0].node) ==
        mk_atom(RoleToken::GDS, Action::Response, std::nullopt, "cleanData", Polarity::Negated));
  // `DC.Accom Request{...}` normalizes to Accomplish
  CHECK(std::get<Atom>(second->children[3].node).action == Action::Accomplish);
  CHECK(std::get<Atom>(second->children[4].node) ==
        mk_atom(RoleToken::DP, Action::Accomplish, std::nullopt, "EraseDataWithin28Days",
                Polarity::Negated));

  const AndGroup* account_and = std::get_if<AndGroup>(&account.include.node);
  REQUIRE(account_and != nullptr);
  CHECK(account_and->children.size() == 3);
  CHECK(atom_at(account.include, 0) ==
        mk_atom(RoleToken::DS, Action::Complain, RoleToken::RM, "DataBreach"));
  // `DC.Report {...}`: space before the brace is tolerated
  CHECK(atom_at(account.include, 1) ==
        mk_atom(RoleToken::DC, Action::Report, RoleToken::RM, "DataBreach", Polarity::Negated));
  CHECK(!account.mixed_precedence);

  CHECK(validate_rulepack(*r.pack).empty());
}

TEST_CASE("all bundled packs validate together") {
  std::vector<RulePack> packs = {parse_pack("gdpr"), parse_pack("stride"), parse_pack("linddun")};
  CHECK(validate_packs(packs).empty());

  const RulePack& stride = packs[1];
  REQUIRE(stride.rules.size() == 2);
  CHECK(stride.rules[0].stratum == Stratum::Derivation);
  REQUIRE(stride.rules[0].derived_atom() != nullptr);
  CHECK(*stride.rules[0].derived_atom() ==
        mk_atom(RoleToken::GDS, Action::Response, std::nullopt, "DirectSubjectAccess"));
  const BoundaryTest* crosses = std::get_if<BoundaryTest>(&stride.rules[0].include.node);
  REQUIRE(crosses != nullptr);
  CHECK(crosses->source == RoleToken::DS);
  CHECK(crosses->target == RoleToken::GDS);

  REQUIRE(stride.rules[1].severity.has_value());
  CHECK(to_string(*stride.rules[1].severity) == "0.5 + 0.5 * silent");
  CHECK(!stride.rules[1].mixed_precedence);  // parenthesized OR

  const RulePack& linddun = packs[2];
  REQUIRE(linddun.rules.size() == 2);
  CHECK(linddun.rules[1].exclude.has_value());
}

TEST_CASE("header forms: explicit id, stratum, Include prefix") {
  RulePack p = must_parse(
      "rule custom-id\n"
      "Threat type: Alpha\n"
      "Include: IF DS.Provide{Consent}\n"
      "THEN {Alpha}\n");
  REQUIRE(p.rules.size() == 1);
  CHECK(p.rules[0].id == "custom-id");
  CHECK(*p.rules[0].threat_type() == "Alpha");
  CHECK(std::get<Atom>(p.rules[0].include.node) ==
        mk_atom(RoleToken::DS, Action::Provide, std::nullopt, "Consent"));

  RulePack d = must_parse(
      "rule d1 stratum derivation\n"
      "Derives: DC.Provide{Consent}\n"
      "IF CROSSES(DS, DC)\n"
      "THEN {DC.Provide{Consent}}\n");
  CHECK(d.rules[0].stratum == Stratum::Derivation);
  REQUIRE(d.rules[0].derived_atom() != nullptr);
  CHECK(*d.rules[0].derived_atom() ==
        mk_atom(RoleToken::DC, Action::Provide, std::nullopt, "Consent"));

  // declared stratum must agree with the conclusion declaration
  CHECK(!parse_rules("rule x stratum derivation\nThreat type: T\nIF DS.Provide{C}\nTHEN {T}\n",
                     "t")
             .ok());
  CHECK(!parse_rules("rule x stratum threat\nDerives: DS.Provide{C}\nIF DS.Provide{C}\n"
                     "THEN {DS.Provide{C}}\n",
                     "t")
             .ok());
}

TEST_CASE("missing header slugs the id from the conclusion") {
  RulePack p = must_parse(
      "Threat type: Data Breach!! Alert\n"
      "IF DS.Provide{Consent}\n"
      "THEN {Data Breach!! Alert}\n");
  CHECK(p.rules[0].id == "data-breach-alert");
}

TEST_CASE("Exclude: IF is accepted and parsed") {
  RulePack p = must_parse(
      "Threat type: T\n"
      "IF DS.Provide{Consent} AND DC.Provide{Consent}\n"
      "Exclude: IF DC.Provide{Consent}=NOT\n"
      "THEN {T}\n");
  REQUIRE(p.rules[0].exclude.has_value());
  CHECK(std::get<Atom>(p.rules[0].exclude->node).polarity == Polarity::Negated);
}

TEST_CASE("comments and blank lines between and inside blocks") {
  RulePack p = must_parse(
      "# pack comment\n"
      "\n"
      "Threat type: T\n"
      "IF DS.Provide{Consent} AND\n"
      "\n"
      "  # interior comment\n"
      "DC.Provide{Consent}\n"
      "\n"
      "THEN {T}\n"
      "\n"
      "# trailing comment\n");
  REQUIRE(p.rules.size() == 1);
  CHECK(std::get<AndGroup>(p.rules[0].include.node).children.size() == 2);
}

TEST_CASE("THEN must restate the conclusion") {
  auto r = parse_rules("Threat type: Alpha\nIF DS.Provide{Consent}\nTHEN {Beta}\n", "t");
  CHECK(!r.ok());
  REQUIRE(!r.diagnostics.empty());
  CHECK(r.diagnostics[0].code == codes::kSyntax);
  CHECK(r.diagnostics[0].span->line == 3);
  CHECK(r.diagnostics[0].message.find("does not match") != std::string::npos);

  // case differences are fine; the THEN spelling is kept
  RulePack ok = must_parse("Threat type: ALPHA\nIF DS.Provide{Consent}\nTHEN {Alpha}\n");
  CHECK(*ok.rules[0].threat_type() == "Alpha");
}

TEST_CASE("a block without THEN is an error") {
  auto eof = parse_rules("Threat type: A\nIF DS.Provide{Consent}\n", "t");
  CHECK(!eof.ok());
  CHECK(has_code(eof.diagnostics, codes::kSyntax));

  auto next_block = parse_rules(
      "Threat type: A\nIF DS.Provide{Consent}\n"
      "Threat type: B\nIF DS.Provide{Consent}\nTHEN {B}\n",
      "t");
  CHECK(!next_block.ok());
  bool found = false;
  for (const Diagnostic& d : next_block.diagnostics)
    if (d.message == "expected THEN" && d.span && d.span->line == 3) found = true;
  CHECK(found);
}

TEST_CASE("parser recovers and reports several broken blocks") {
  auto r = parse_rules(
      "Threat type: A\nIF DS.Provide{Consent\nTHEN {A}\n\n"
      "Threat type: B\nIF DS.Nope{X}\nTHEN {B}\n",
      "t");
  CHECK(!r.ok());
  CHECK(r.diagnostics.size() >= 2);
}

TEST_CASE("derived conclusions reject negation and labels") {
  CHECK(!parse_rules("Derives: DS.Provide{Consent}=NOT\nIF CROSSES(DS, DC)\n"
                     "THEN {DS.Provide{Consent}}\n",
                     "t")
             .ok());
  CHECK(!parse_rules("Derives: DS.Provide{Consent} as w\nIF CROSSES(DS, DC)\n"
                     "THEN {DS.Provide{Consent}}\n",
                     "t")
             .ok());
  CHECK(!parse_rules("Derives: DS.Provide{Consent}\nIF CROSSES(DS, DC)\n"
                     "THEN {DS.Provide{Consent}=NOT}\n",
                     "t")
             .ok());
  // THEN must restate the same ground atom
  CHECK(!parse_rules("Derives: DS.Provide{Consent}\nIF CROSSES(DS, DC)\n"
                     "THEN {DS.Provide{Other}}\n",
                     "t")
             .ok());
  // property case may differ; the THEN spelling is kept
  RulePack ok = must_parse(
      "Derives: DS.Provide{CONSENT}\nIF CROSSES(DS, DC)\nTHEN {DS.Provide{Consent}}\n");
  CHECK(ok.rules[0].derived_atom()->property == "Consent");
}

TEST_CASE("parentheses override precedence and clear the mixed flag") {
  RulePack p = must_parse(
      "Threat type: T\n"
      "IF (DS.Provide{Consent} OR DC.Provide{Consent}) AND DP.Provide{Consent}\n"
      "THEN {T}\n");
  const AndGroup* top = std::get_if<AndGroup>(&p.rules[0].include.node);
  REQUIRE(top != nullptr);
  REQUIRE(top->children.size() == 2);
  CHECK(std::holds_alternative<OrGroup>(top->children[0].node));
  CHECK(!p.rules[0].mixed_precedence);

  RulePack q = must_parse(
      "Threat type: T\n"
      "IF DS.Provide{Consent} AND DC.Provide{Consent} OR DP.Provide{Consent}\n"
      "THEN {T}\n");
  const OrGroup* qtop = std::get_if<OrGroup>(&q.rules[0].include.node);
  REQUIRE(qtop != nullptr);
  REQUIRE(qtop->children.size() == 2);
  CHECK(std::holds_alternative<AndGroup>(qtop->children[0].node));
  CHECK(std::holds_alternative<Atom>(qtop->children[1].node));
  CHECK(q.rules[0].mixed_precedence);
}

TEST_CASE("atom labels and severity expressions") {
  RulePack p = must_parse(
      "Threat type: T\n"
      "IF DS.Provide{Consent}=NOT as w1 AND DC.Provide{Consent}=NOT as w2\n"
      "THEN {T} severity = 0.5 + 2 * w1 * w2\n");
  CHECK(atom_at(p.rules[0].include, 0).label == "w1");
  REQUIRE(p.rules[0].severity.has_value());
  const SeverityExpr& expr = *p.rules[0].severity;
  REQUIRE(expr.terms.size() == 2);
  CHECK(expr.terms[0].factors.size() == 1);
  CHECK(expr.terms[0].factors[0].number == 0.5);
  REQUIRE(expr.terms[1].factors.size() == 3);
  CHECK(expr.terms[1].factors[0].number == 2.0);
  CHECK(expr.terms[1].factors[1].label == "w1");
  CHECK(to_string(expr) == "0.5 + 2 * w1 * w2");
  CHECK(validate_rulepack(p).empty());
}

TEST_CASE("stray characters are syntax errors with spans") {
  auto r = parse_rules("Threat type: T\nIF DS.Provide{Consent} % DC.Provide{X}\nTHEN {T}\n", "t");
  CHECK(!r.ok());
  bool found = false;
  for (const Diagnostic& d : r.diagnostics)
    if (d.code == codes::kSyntax && d.span && d.span->line == 2 &&
        d.message.find("unexpected character") != std::string::npos)
      found = true;
  CHECK(found);
}

TEST_CASE("unknown role or action in an atom is rejected") {
  CHECK(!parse_rules("Threat type: T\nIF XX.Provide{C}\nTHEN {T}\n", "t").ok());
  CHECK(!parse_rules("Threat type: T\nIF DS.Shout{C}\nTHEN {T}\n", "t").ok());
  // role tokens are case-sensitive in the source text
  CHECK(!parse_rules("Threat type: T\nIF ds.Provide{C}\nTHEN {T}\n", "t").ok());
  // actions are not
  CHECK(must_parse("Threat type: T\nIF DS.provide{C}\nTHEN {T}\n")
            .rules[0]
            .include.node.index() == 0);
}

TEST_CASE("validator: duplicate rule ids within a pack") {
  RulePack p = must_parse(
      "rule a\nThreat type: T\nIF DS.Provide{C}\nTHEN {T}\n\n"
      "rule a\nThreat type: U\nIF DS.Provide{C}=NOT\nTHEN {U}\n");
  CHECK(has_code(validate_rulepack(p), codes::kDupRule));
}

TEST_CASE("validator: exclude must stay within the include's roles") {
  RulePack bad = must_parse(
      "rule a\nThreat type: T\nIF DS.Provide{C}\nEXCLUDE IF DC.Provide{C}\nTHEN {T}\n");
  auto diags = validate_rulepack(bad);
  REQUIRE(has_code(diags, codes::kExcludeRole));
  CHECK(diags[0].message.find("DC") != std::string::npos);

  RulePack good = must_parse(
      "rule a\nThreat type: T\nIF DS.Provide{DC.C}\nEXCLUDE IF DC.Provide{C}\nTHEN {T}\n");
  CHECK(validate_rulepack(good).empty());
}

TEST_CASE("validator: CROSSES is derivation-only") {
  RulePack bad = must_parse(
      "rule a\nThreat type: T\nIF CROSSES(DS, DC) AND DS.Provide{C}\nTHEN {T}\n");
  CHECK(has_code(validate_rulepack(bad), codes::kTopologyStratum));

  RulePack good = must_parse(
      "rule a stratum derivation\nDerives: DS.Provide{C}\nIF CROSSES(DS, DC)\n"
      "THEN {DS.Provide{C}}\n");
  CHECK(validate_rulepack(good).empty());
}

TEST_CASE("validator: severity labels must be bound by atoms") {
  RulePack bad = must_parse(
      "rule a\nThreat type: T\nIF DS.Provide{C} as w1\nTHEN {T} severity = w1 * w9\n");
  CHECK(has_code(validate_rulepack(bad), codes::kSeverityLabel));
}

TEST_CASE("validator: shadowed duplicate rules warn but do not fail") {
  RulePack p = must_parse(
      "rule a\nThreat type: T\nIF DS.Provide{C}\nTHEN {T}\n\n"
      "rule b\nThreat type: T\nIF DS.Provide{C}\nTHEN {T}\n");
  auto diags = validate_rulepack(p);
  REQUIRE(has_code(diags, codes::kUnreachableRule));
  CHECK(!has_errors(diags));
}

TEST_CASE("validator: derivation rules may not consume their own stratum negatively") {
  RulePack bad = must_parse(
      "rule p stratum derivation\nDerives: DC.Provide{Consent}\nIF CROSSES(DS, DC)\n"
      "THEN {DC.Provide{Consent}}\n\n"
      "rule q stratum derivation\nDerives: DS.Provide{X}\nIF DC.Provide{CONSENT}=NOT\n"
      "THEN {DS.Provide{X}}\n");
  CHECK(has_code(validate_rulepack(bad), codes::kStratification));

  // a positive atom in an exclude is also a negative dependency
  RulePack bad2 = must_parse(
      "rule p stratum derivation\nDerives: DC.Provide{Consent}\nIF CROSSES(DS, DC)\n"
      "THEN {DC.Provide{Consent}}\n\n"
      "rule q stratum derivation\nDerives: DS.Provide{X}\nIF CROSSES(DS, DC)\n"
      "EXCLUDE IF DC.Provide{Consent}\nTHEN {DS.Provide{X}}\n");
  CHECK(has_code(validate_rulepack(bad2), codes::kStratification));

  // threat rules run after the fixpoint, so they may
  RulePack ok = must_parse(
      "rule p stratum derivation\nDerives: DC.Provide{Consent}\nIF CROSSES(DS, DC)\n"
      "THEN {DC.Provide{Consent}}\n\n"
      "rule t\nThreat type: T\nIF DC.Provide{Consent}=NOT\nTHEN {T}\n");
  CHECK(validate_rulepack(ok).empty());
}

TEST_CASE("validator: pack-set checks") {
  RulePack a = must_parse("Threat type: T\nIF DS.Provide{C}\nTHEN {T}\n", "same");
  RulePack b = must_parse("Threat type: U\nIF DS.Provide{D}\nTHEN {U}\n", "same");
  std::vector<RulePack> dup = {a, b};
  CHECK(has_code(validate_packs(dup), codes::kDupPack));

  // stratification holds over the union of loaded packs
  RulePack producer = must_parse(
      "rule p stratum derivation\nDerives: DC.Provide{Consent}\nIF CROSSES(DS, DC)\n"
      "THEN {DC.Provide{Consent}}\n",
      "one");
  RulePack consumer = must_parse(
      "rule q stratum derivation\nDerives: DS.Provide{X}\nIF DC.Provide{Consent}=NOT\n"
      "THEN {DS.Provide{X}}\n",
      "two");
  CHECK(validate_rulepack(producer).empty());
  CHECK(validate_rulepack(consumer).empty());
  std::vector<RulePack> both = {producer, consumer};
  CHECK(has_code(validate_packs(both), codes::kStratification));
}

TEST_CASE("role_tokens_of covers include, exclude and conclusion") {
  RulePack p = must_parse(
      "rule r stratum derivation\nDerives: SA.Notify{RM.DataBreach}\n"
      "IF CROSSES(GDS, DS) AND DC.Provide{Consent}=NOT\n"
      "THEN {SA.Notify{RM.DataBreach}}\n");
  const std::vector<RoleToken> expected = {RoleToken::DC, RoleToken::DS, RoleToken::GDS,
                                           RoleToken::RM, RoleToken::SA};
  CHECK(role_tokens_of(p.rules[0]) == expected);
}

TEST_CASE("same_ground_atom ignores polarity, labels and property case") {
  Atom a = mk_atom(RoleToken::DS, Action::Provide, RoleToken::DC, "Consent");
  Atom b = a;
  b.polarity = Polarity::Negated;
  b.label = "w1";
  b.property = "cOnSeNt";
  CHECK(same_ground_atom(a, b));
  b.property = "Consent2";
  CHECK(!same_ground_atom(a, b));
  b = a;
  b.object_owner = std::nullopt;
  CHECK(!same_ground_atom(a, b));
  b = a;
  b.subject = RoleToken::DC;
  CHECK(!same_ground_atom(a, b));
}

TEST_CASE("serialization is canonical and re-parses to the same pack") {
  for (std::string_view name : {"gdpr", "stride", "linddun"}) {
    RulePack pack = parse_pack(name);
    const std::string text = serialize_rulepack(pack);
    auto r = parse_rules(text, name);
    REQUIRE_MESSAGE(r.ok(), text);
    CHECK(*r.pack == pack);
    CHECK(serialize_rulepack(*r.pack) == text);
  }
}

TEST_CASE("property: random packs round-trip through text") {
  for (int i = 0; i < 300; ++i) {
    testgen::Rng rng(42000u + static_cast<unsigned>(i));
    const RulePack pack = testgen::random_rulepack(rng);
    const std::string text = serialize_rulepack(pack);
    auto r = parse_rules(text, pack.name);
    REQUIRE_MESSAGE(r.ok(), "case " << i << "\n" << text);
    CHECK_MESSAGE(*r.pack == pack, "case " << i << "\n" << text);
    CHECK(serialize_rulepack(*r.pack) == text);
  }
}

TEST_CASE("property: rules parser is total over byte soup") {
  const std::string alphabet =
      "rule Threat type Derives IF THEN EXCLUDE AND OR CROSSES severity as DS DC.{}()=,:-+*\n\t #";
  for (int i = 0; i < 200; ++i) {
    testgen::Rng rng(555u + static_cast<unsigned>(i));
    std::string text;
    const int len = testgen::pick(rng, 0, 300);
    for (int k = 0; k < len; ++k)
      text.push_back(alphabet[static_cast<std::size_t>(
          testgen::pick(rng, 0, static_cast<int>(alphabet.size()) - 1))]);
    auto r = parse_rules(text, "fuzz");
    if (r.ok()) CHECK(!has_errors(r.diagnostics));
  }
}

}  // TEST_SUITE
