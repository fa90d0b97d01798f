#include "gdprtm/facts.hpp"

#include <algorithm>
#include <cctype>
#include <tuple>

#include "gdprtm/annotations.hpp"

namespace gdprtm {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string token_text(std::optional<RoleToken> token) {
  return token ? std::string(to_token(*token)) : std::string();
}

auto fact_key(const Fact& f) {
  return std::make_tuple(f.subject, std::string(to_token(f.subject_token)),
                         std::string(to_token(f.action)), f.object, token_text(f.object_token),
                         lower(f.property));
}

}  // namespace

std::string to_string(const Fact& fact) {
  std::string out = fact.subject;
  out += '(';
  out += to_token(fact.subject_token);
  out += ").";
  out += to_token(fact.action);
  out += '{';
  if (!fact.object.empty()) {
    out += fact.object;
    out += '(';
    out += token_text(fact.object_token);
    out += ").";
  }
  out += fact.property;
  out += '}';
  return out;
}

bool fact_equal(const Fact& a, const Fact& b) { return fact_key(a) == fact_key(b); }
bool fact_less(const Fact& a, const Fact& b) { return fact_key(a) < fact_key(b); }

std::string to_string(const BoundaryCrossing& crossing) {
  return "crossesBoundary(" + crossing.flow + ": " + crossing.source + " -> " + crossing.target +
         ")";
}

bool FactBase::add(Fact fact, FactOrigin origin, std::string origin_id) {
  auto it = std::lower_bound(entries_.begin(), entries_.end(), fact,
                             [](const FactEntry& e, const Fact& f) { return fact_less(e.fact, f); });
  if (it != entries_.end() && fact_equal(it->fact, fact)) return false;
  entries_.insert(it, FactEntry{std::move(fact), origin, std::move(origin_id)});
  return true;
}

void FactBase::add_crossing(BoundaryCrossing crossing) {
  auto it = std::lower_bound(crossings_.begin(), crossings_.end(), crossing,
                             [](const BoundaryCrossing& a, const BoundaryCrossing& b) {
                               return a.flow < b.flow;
                             });
  if (it != crossings_.end() && *it == crossing) return;
  crossings_.insert(it, std::move(crossing));
}

const Fact* FactBase::find(std::string_view subject, RoleToken subject_token, Action action,
                           const std::optional<std::string>& object_entity,
                           std::optional<RoleToken> object_token,
                           std::string_view property) const {
  const std::string prop = lower(property);
  for (const FactEntry& entry : entries_) {
    const Fact& f = entry.fact;
    if (f.subject != subject || f.subject_token != subject_token || f.action != action) continue;
    if (lower(f.property) != prop) continue;
    if (object_entity && (f.object != *object_entity || f.object_token != object_token)) continue;
    return &f;
  }
  return nullptr;
}

bool FactBase::holds(const Fact& fact) const {
  auto it = std::lower_bound(entries_.begin(), entries_.end(), fact,
                             [](const FactEntry& e, const Fact& f) { return fact_less(e.fact, f); });
  return it != entries_.end() && fact_equal(it->fact, fact);
}

const BoundaryCrossing* FactBase::find_crossing(std::string_view source,
                                                std::string_view target) const {
  for (const BoundaryCrossing& c : crossings_) {
    if (c.source == source && c.target == target) return &c;
  }
  return nullptr;
}

std::string FactBase::dump() const {
  std::string out;
  for (const FactEntry& entry : entries_) {
    out += to_string(entry.fact);
    out += "  [";
    switch (entry.origin) {
      case FactOrigin::FlowAnnotation:
        out += "flow ";
        break;
      case FactOrigin::EntityAnnotation:
        out += "entity ";
        break;
      case FactOrigin::Derived:
        out += "rule ";
        break;
    }
    out += entry.origin_id;
    out += "]\n";
  }
  for (const BoundaryCrossing& crossing : crossings_) {
    out += to_string(crossing);
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Extraction

namespace {

struct EndpointReq {
  enum class Kind { Roles, Store, Any };
  Kind kind = Kind::Any;
  RoleSet roles;
};

EndpointReq roles_req(std::initializer_list<GdprRole> roles) {
  EndpointReq req;
  req.kind = EndpointReq::Kind::Roles;
  for (GdprRole r : roles) req.roles.insert(r);
  return req;
}

EndpointReq store_req() { return EndpointReq{EndpointReq::Kind::Store, {}}; }
EndpointReq any_req() { return EndpointReq{EndpointReq::Kind::Any, {}}; }

struct AnnotationRow {
  std::string_view name;
  EndpointReq source;
  EndpointReq target;
  Action action = Action::Provide;
  std::string_view property;
  std::optional<RoleToken> object_token;  // object owner = target entity when set
};

const std::vector<AnnotationRow>& annotation_table() {
  static const std::vector<AnnotationRow> rows = {
      {kConsentProvided, roles_req({GdprRole::DS}), roles_req({GdprRole::DC}),
       Action::Provide, "Consent", std::nullopt},
      {kConsentRequestFormProvided, roles_req({GdprRole::DC}),
       roles_req({GdprRole::DS}), Action::Provide, "ConsentRequestForm", RoleToken::DS},
      {kRequestForErasingData, roles_req({GdprRole::DS}), roles_req({GdprRole::DC}),
       Action::Request, "EraseData", RoleToken::DC},
      {kRequestCleanData, roles_req({GdprRole::DC, GdprRole::DP}), store_req(),
       Action::Request, "CleanData", RoleToken::GDS},
      {kRequestEraseData, roles_req({GdprRole::DC}), roles_req({GdprRole::DP}),
       Action::Request, "EraseData", RoleToken::DP},
      {kCleanDataResponse, store_req(), roles_req({GdprRole::DC, GdprRole::DP}),
       Action::Response, "CleanData", std::nullopt},
      {kNotifyRecipientAboutErasingData, roles_req({GdprRole::DC, GdprRole::DP}),
       any_req(), Action::Notify, "RecipientAboutErasingData", std::nullopt},
      {kEraseDataWithin28Days, roles_req({GdprRole::DC, GdprRole::DP}),
       roles_req({GdprRole::DS}), Action::Accomplish, "EraseDataWithin28Days", std::nullopt},
      {kComplainDataBreach, roles_req({GdprRole::DS}), roles_req({GdprRole::RM}),
       Action::Complain, "DataBreach", RoleToken::RM},
      {kReportDataBreach, roles_req({GdprRole::DC, GdprRole::DP}),
       roles_req({GdprRole::RM}), Action::Report, "DataBreach", RoleToken::RM},
  };
  return rows;
}

const AnnotationRow* find_row(std::string_view name) {
  for (const AnnotationRow& row : annotation_table())
    if (row.name == name) return &row;
  return nullptr;
}

std::string describe_req(const EndpointReq& req) {
  switch (req.kind) {
    case EndpointReq::Kind::Store:
      return "a data store";
    case EndpointReq::Kind::Any:
      return "any entity";
    case EndpointReq::Kind::Roles:
      break;
  }
  std::string out = "role ";
  const auto roles = req.roles.to_vector();
  for (std::size_t i = 0; i < roles.size(); ++i) {
    if (i) out += " or ";
    out += to_token(roles[i]);
  }
  return out;
}

bool endpoint_ok(const EndpointReq& req, const Entity& entity) {
  switch (req.kind) {
    case EndpointReq::Kind::Any:
      return true;
    case EndpointReq::Kind::Store:
      return entity.kind == EntityKind::DataStore;
    case EndpointReq::Kind::Roles: {
      for (GdprRole r : req.roles.to_vector())
        if (entity.roles.contains(r)) return true;
      return false;
    }
  }
  return false;
}

// The subject tokens a row grants to its source entity.
std::vector<RoleToken> subject_tokens(const EndpointReq& req, const Entity& entity) {
  std::vector<RoleToken> out;
  if (req.kind == EndpointReq::Kind::Store) {
    out.push_back(RoleToken::GDS);
    return out;
  }
  for (GdprRole r : req.roles.to_vector())
    if (entity.roles.contains(r)) out.push_back(role_token_of(r));
  return out;
}

void emit_flow_facts(const AnnotationRow& row, const Flow& flow, const Entity& source,
                     const Entity& target, FactBase& facts, std::vector<Diagnostic>& diags) {
  bool ok = true;
  if (!endpoint_ok(row.source, source)) {
    diags.push_back(Diagnostic{
        Severity::Error, std::string(codes::kAnnotationRoleMismatch),
        "flow '" + flow.id + "': annotation '" + std::string(row.name) +
            "' requires the source to have " + describe_req(row.source),
        flow.span});
    ok = false;
  }
  if (!endpoint_ok(row.target, target)) {
    diags.push_back(Diagnostic{
        Severity::Error, std::string(codes::kAnnotationRoleMismatch),
        "flow '" + flow.id + "': annotation '" + std::string(row.name) +
            "' requires the target to have " + describe_req(row.target),
        flow.span});
    ok = false;
  }
  if (!ok) return;

  for (RoleToken subject : subject_tokens(row.source, source)) {
    Fact fact;
    fact.subject = source.id;
    fact.subject_token = subject;
    fact.action = row.action;
    fact.property = std::string(row.property);
    if (row.object_token) {
      fact.object = target.id;
      fact.object_token = row.object_token;
    }
    facts.add(std::move(fact), FactOrigin::FlowAnnotation, flow.id);
  }
}

void emit_entity_facts(const std::string& name, const Entity& entity, FactBase& facts,
                       std::vector<Diagnostic>& diags) {
  if (!is_known_annotation(name)) return;
  if (name != kEraseDataWithin28Days) {
    diags.push_back(Diagnostic{Severity::Error, std::string(codes::kAnnotationRoleMismatch),
                               "entity '" + entity.id + "': annotation '" + name +
                                   "' requires a data-flow context",
                               entity.span});
    return;
  }
  std::vector<RoleToken> subjects;
  if (entity.roles.contains(GdprRole::DC)) subjects.push_back(RoleToken::DC);
  if (entity.roles.contains(GdprRole::DP)) subjects.push_back(RoleToken::DP);
  if (subjects.empty()) {
    diags.push_back(Diagnostic{Severity::Error, std::string(codes::kAnnotationRoleMismatch),
                               "entity '" + entity.id + "': annotation '" + name +
                                   "' requires role DC or DP",
                               entity.span});
    return;
  }
  for (RoleToken subject : subjects) {
    Fact fact;
    fact.subject = entity.id;
    fact.subject_token = subject;
    fact.action = Action::Accomplish;
    fact.property = std::string(kEraseDataWithin28Days);
    facts.add(std::move(fact), FactOrigin::EntityAnnotation, entity.id);
  }
}

std::vector<std::string_view> boundary_set(const Diagram& diagram, const std::string& entity) {
  std::vector<std::string_view> out;
  for (const TrustBoundary& boundary : diagram.boundaries) {
    if (std::find(boundary.members.begin(), boundary.members.end(), entity) !=
        boundary.members.end())
      out.push_back(boundary.id);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

FactExtractionResult extract_facts(const Diagram& diagram) {
  FactExtractionResult result;
  const Diagram canon = diagram.canonicalized();

  for (const Entity& entity : canon.entities) {
    for (const std::string& name : entity.annotations)
      emit_entity_facts(name, entity, result.facts, result.diagnostics);
  }

  for (const Flow& flow : canon.flows) {
    const Entity* source = canon.find_entity(flow.source);
    const Entity* target = canon.find_entity(flow.target);
    if (!source || !target) continue;
    for (const std::string& name : flow.annotations) {
      const AnnotationRow* row = find_row(name);
      if (row) emit_flow_facts(*row, flow, *source, *target, result.facts, result.diagnostics);
    }
    if (boundary_set(canon, flow.source) != boundary_set(canon, flow.target))
      result.facts.add_crossing(BoundaryCrossing{flow.id, flow.source, flow.target});
  }

  sort_diagnostics(result.diagnostics);
  return result;
}

}  // namespace gdprtm
