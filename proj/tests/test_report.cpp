#include <fstream>
#include <sstream>

#include "doctest.h"
#include "gdprtm/dfd_parser.hpp"
#include "gdprtm/report.hpp"
#include "gdprtm/version.hpp"

using namespace gdprtm;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE_MESSAGE(in.good(), path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

Diagram corpus_diagram() {
  auto r = parse_diagram(slurp(std::string(GDPRTM_CORPUS_DIR) + "/telehealth.dfd"));
  REQUIRE(r.ok());
  return *r.diagram;
}

RulePack load_pack(std::string_view name) {
  auto r = parse_rules(slurp(std::string(GDPRTM_RULES_DIR) + "/" + std::string(name) + ".rules"),
                       name);
  REQUIRE(r.ok());
  return *r.pack;
}

std::vector<RulePack> default_packs() {
  return {load_pack("gdpr"), load_pack("stride"), load_pack("linddun")};
}

std::size_t count_occurrences(const std::string& text, const std::string& needle) {
  std::size_t count = 0;
  for (std::size_t pos = text.find(needle); pos != std::string::npos;
       pos = text.find(needle, pos + needle.size()))
    ++count;
  return count;
}

}  // namespace

TEST_SUITE("report") {

TEST_CASE("report shape for the corpus under all packs") {
  const Diagram d = corpus_diagram();
  const auto packs = default_packs();
  auto result = run_inference(d, packs);
  REQUIRE(result.ok());
  Report report = build_report("telehealth", d, packs, result);

  CHECK(report.diagram == "telehealth");
  CHECK(report.packs == std::vector<std::string>{"gdpr", "stride", "linddun"});
  CHECK(report.tool_version == kToolVersion);
  CHECK(report.threat_types ==
        std::vector<std::string>{"detectability", "non-Consent", "non-accountability",
                                 "non-provided right to erasure", "tampering", "unawareness"});
  CHECK(report.entities ==
        std::vector<std::string>{"Clean", "GDS", "OTS", "P", "RM", "SA", "TSS"});

  CHECK(report.summary.at("non-accountability") == 1);
  CHECK(report.summary.at("non-provided right to erasure") == 1);
  CHECK(report.summary.at("non-Consent") == 0);
  CHECK(report.summary.at("detectability") == 0);
  CHECK(report.summary.at("tampering") == 0);
  CHECK(report.summary.at("unawareness") == 0);

  CHECK(report.matrix.at("non-provided right to erasure") ==
        std::set<std::string>{"GDS", "OTS", "TSS"});
  CHECK(report.matrix.at("non-accountability") == std::set<std::string>{"OTS", "TSS"});
  CHECK(report.matrix.at("non-Consent").empty());
  std::size_t marks = 0;
  for (const auto& [type, row] : report.matrix) marks += row.size();
  CHECK(marks == 5);

  CHECK(report.findings.size() == 2);
  CHECK(report == build_report("telehealth", d, packs, result));
}

TEST_CASE("json rendering uses a fixed key order") {
  Report report;
  report.diagram = "d";
  report.packs = {"p"};
  report.tool_version = "0.1.0";
  report.threat_types = {"t"};
  report.entities = {"A", "B"};
  report.summary["t"] = 1;
  report.matrix["t"] = {"A"};
  ThreatFinding finding;
  finding.threat_type = "t";
  finding.rule_id = "r";
  finding.pack = "p";
  finding.severity = 0.5;
  finding.binding[RoleToken::DS] = "A";
  finding.sources = {"A"};
  finding.trace.push_back(TraceEntry{"DS.Provide{X}=NOT", true, std::nullopt});
  finding.trace.push_back(TraceEntry{"DS.Provide{Y}", true, std::string("A(DS).Provide{Y}")});
  report.findings.push_back(std::move(finding));

  const std::string expected = R"json({
  "diagram": "d",
  "packs": [
    "p"
  ],
  "tool_version": "0.1.0",
  "summary": {
    "t": 1
  },
  "matrix": {
    "t": {
      "A": true
    }
  },
  "findings": [
    {
      "type": "t",
      "rule_id": "r",
      "severity": 0.5,
      "binding": {
        "DS": "A"
      },
      "sources": [
        "A"
      ],
      "trace": [
        {
          "atom": "DS.Provide{X}=NOT",
          "value": true,
          "fact": null
        },
        {
          "atom": "DS.Provide{Y}",
          "value": true,
          "fact": "A(DS).Provide{Y}"
        }
      ]
    }
  ]
})json";
  CHECK(render_json(report) == expected + "\n");
}

TEST_CASE("threat types without findings keep empty rows") {
  const Diagram d = corpus_diagram();
  const auto packs = default_packs();
  auto result = run_inference(d, packs);
  const std::string json = render_json(build_report("telehealth", d, packs, result));
  CHECK(json.find("\"non-Consent\": {}") != std::string::npos);
  CHECK(json.find("\"unawareness\": {}") != std::string::npos);
  CHECK(json.find("\"detectability\": 0") != std::string::npos);
  CHECK(json.find("\"severity\": 1.0") != std::string::npos);
}

TEST_CASE("a goal narrows the report to one threat type") {
  const Diagram d = corpus_diagram();
  const auto packs = default_packs();
  const std::optional<std::string> goal("TAMPERING");
  auto result = run_inference(d, packs, goal);
  REQUIRE(result.ok());
  Report report = build_report("telehealth", d, packs, result, goal);
  CHECK(report.threat_types == std::vector<std::string>{"tampering"});
  CHECK(report.summary.size() == 1);
  CHECK(report.matrix.size() == 1);
  CHECK(report.findings.empty());
}

TEST_CASE("markdown rendering") {
  const Diagram d = corpus_diagram();
  std::vector<RulePack> packs = {load_pack("gdpr")};
  auto result = run_inference(d, packs);
  const std::string md = render_markdown(build_report("telehealth", d, packs, result));

  CHECK(md.rfind("# Threat report: telehealth\n", 0) == 0);
  CHECK(md.find("Packs: gdpr\n") != std::string::npos);
  CHECK(md.find("Tool version: ") != std::string::npos);
  CHECK(md.find("| non-accountability | 1 |") != std::string::npos);
  CHECK(md.find("| non-Consent | 0 |") != std::string::npos);
  CHECK(md.find("| Threat type | Clean | GDS | OTS | P | RM | SA | TSS |") != std::string::npos);
  CHECK(md.find("| non-provided right to erasure |  | \xC3\x97 | \xC3\x97 |  |  |  | \xC3\x97 |") !=
        std::string::npos);
  CHECK(md.find("| non-accountability |  |  | \xC3\x97 |  |  |  | \xC3\x97 |") !=
        std::string::npos);
  CHECK(count_occurrences(md, "\xC3\x97") == 5);
  CHECK(md.find("### non-accountability (rule non-accountability, pack gdpr)") !=
        std::string::npos);
  CHECK(md.find("- Binding: DC=TSS, DP=OTS, DS=P, RM=RM\n") != std::string::npos);
  CHECK(md.find("- Severity: 1\n") != std::string::npos);
  CHECK(md.find("- Sources: OTS, TSS\n") != std::string::npos);
  CHECK(md.find("  - [x] DS.Complain{RM.DataBreach} matched P(DS).Complain{RM(RM).DataBreach}\n") !=
        std::string::npos);
  CHECK(md.find("  - [x] DC.Report{RM.DataBreach}=NOT\n") != std::string::npos);
}

TEST_CASE("an empty diagram reports no threats") {
  Diagram d;
  const auto packs = default_packs();
  auto result = run_inference(d, packs);
  REQUIRE(result.ok());
  Report report = build_report("empty", d, packs, result);
  CHECK(report.entities.empty());
  CHECK(report.findings.empty());
  for (const auto& [type, n] : report.summary) CHECK(n == 0);
  const std::string md = render_markdown(report);
  CHECK(md.find("No threats found.\n") != std::string::npos);
  CHECK(count_occurrences(md, "\xC3\x97") == 0);
}

TEST_CASE("corpus report matches the frozen golden json") {
  const Diagram d = corpus_diagram();
  const auto packs = default_packs();
  auto result = run_inference(d, packs);
  REQUIRE(result.ok());
  const std::string json = render_json(build_report("telehealth", d, packs, result));
  CHECK(json == slurp(std::string(GDPRTM_CORPUS_DIR) + "/telehealth_report.json"));
}

}  // TEST_SUITE
