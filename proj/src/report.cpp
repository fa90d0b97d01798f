#include "gdprtm/report.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>

#include "gdprtm/version.hpp"
#include "json.hpp"

namespace gdprtm {

namespace {

bool ci_equal(std::string_view a, std::string_view b) {
  return a.size() == b.size() &&
         std::equal(a.begin(), a.end(), b.begin(), [](unsigned char x, unsigned char y) {
           return std::tolower(x) == std::tolower(y);
         });
}

std::string format_number(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

}  // namespace

Report build_report(std::string_view diagram_name, const Diagram& diagram,
                    std::span<const RulePack> packs, const InferenceResult& result,
                    const std::optional<std::string>& goal) {
  Report report;
  report.diagram = std::string(diagram_name);
  for (const RulePack& pack : packs) report.packs.push_back(pack.name);
  report.tool_version = std::string(kToolVersion);

  for (const std::string& type : declared_threat_types(packs)) {
    if (goal && !ci_equal(type, *goal)) continue;
    report.threat_types.push_back(type);
  }

  const Diagram canon = diagram.canonicalized();
  for (const Entity& entity : canon.entities) report.entities.push_back(entity.id);

  for (const std::string& type : report.threat_types) {
    report.summary[type] = 0;
    report.matrix[type];
  }
  for (const ThreatFinding& finding : result.findings) {
    ++report.summary[finding.threat_type];
    report.matrix[finding.threat_type].insert(finding.sources.begin(), finding.sources.end());
  }
  report.findings = result.findings;
  return report;
}

std::string render_json(const Report& report) {
  nlohmann::ordered_json doc;
  doc["diagram"] = report.diagram;
  doc["packs"] = report.packs;
  doc["tool_version"] = report.tool_version;

  nlohmann::ordered_json summary = nlohmann::ordered_json::object();
  for (const std::string& type : report.threat_types) summary[type] = report.summary.at(type);
  doc["summary"] = std::move(summary);

  nlohmann::ordered_json matrix = nlohmann::ordered_json::object();
  for (const std::string& type : report.threat_types) {
    nlohmann::ordered_json row = nlohmann::ordered_json::object();
    for (const std::string& entity : report.matrix.at(type)) row[entity] = true;
    matrix[type] = std::move(row);
  }
  doc["matrix"] = std::move(matrix);

  nlohmann::ordered_json findings = nlohmann::ordered_json::array();
  for (const ThreatFinding& finding : report.findings) {
    nlohmann::ordered_json f;
    f["type"] = finding.threat_type;
    f["rule_id"] = finding.rule_id;
    f["severity"] = finding.severity;
    nlohmann::ordered_json binding = nlohmann::ordered_json::object();
    for (const auto& [token, entity] : finding.binding)
      binding[std::string(to_token(token))] = entity;
    f["binding"] = std::move(binding);
    f["sources"] = finding.sources;
    nlohmann::ordered_json trace = nlohmann::ordered_json::array();
    for (const TraceEntry& entry : finding.trace) {
      nlohmann::ordered_json t;
      t["atom"] = entry.atom;
      t["value"] = entry.value;
      t["fact"] = entry.fact ? nlohmann::ordered_json(*entry.fact) : nullptr;
      trace.push_back(std::move(t));
    }
    f["trace"] = std::move(trace);
    findings.push_back(std::move(f));
  }
  doc["findings"] = std::move(findings);
  return doc.dump(2) + "\n";
}

std::string render_markdown(const Report& report) {
  std::string out = "# Threat report: " + report.diagram + "\n\n";
  out += "Packs: ";
  for (std::size_t i = 0; i < report.packs.size(); ++i) {
    if (i) out += ", ";
    out += report.packs[i];
  }
  out += "\n";
  out += "Tool version: " + report.tool_version + "\n\n";

  out += "## Summary\n\n";
  out += "| Threat type | Findings |\n| --- | ---: |\n";
  for (const std::string& type : report.threat_types) {
    out += "| " + type + " | " + std::to_string(report.summary.at(type)) + " |\n";
  }
  out += "\n";

  out += "## Threat matrix\n\n";
  out += "| Threat type |";
  for (const std::string& entity : report.entities) out += " " + entity + " |";
  out += "\n| --- |";
  for (std::size_t i = 0; i < report.entities.size(); ++i) out += " :-: |";
  out += "\n";
  for (const std::string& type : report.threat_types) {
    out += "| " + type + " |";
    const std::set<std::string>& row = report.matrix.at(type);
    for (const std::string& entity : report.entities) {
      out += row.contains(entity) ? " \xC3\x97 |" : "  |";
    }
    out += "\n";
  }
  out += "\n";

  out += "## Findings\n\n";
  if (report.findings.empty()) {
    out += "No threats found.\n";
    return out;
  }
  for (const ThreatFinding& finding : report.findings) {
    out += "### " + finding.threat_type + " (rule " + finding.rule_id + ", pack " + finding.pack +
           ")\n\n";
    out += "- Binding: " + to_string(finding.binding) + "\n";
    out += "- Severity: " + format_number(finding.severity) + "\n";
    out += "- Sources: ";
    for (std::size_t i = 0; i < finding.sources.size(); ++i) {
      if (i) out += ", ";
      out += finding.sources[i];
    }
    out += "\n- Trace:\n";
    for (const TraceEntry& entry : finding.trace) {
      out += std::string("  - [") + (entry.value ? "x" : " ") + "] " + entry.atom;
      if (entry.fact) out += " matched " + *entry.fact;
      out += "\n";
    }
    out += "\n";
  }
  return out;
}

}  // namespace gdprtm
