#pragma once

// Glue for the engine-vs-oracle comparison: renders engine findings in the
// oracle's signature format and supplies a multi-step derivation pack.

#include <algorithm>
#include <string>
#include <vector>

#include "gdprtm/engine.hpp"
#include "support/oracle.hpp"

namespace testsig {

inline std::vector<std::string> engine_findings(const gdprtm::Diagram& diagram,
                                                const std::vector<gdprtm::RulePack>& packs) {
  auto result = gdprtm::run_inference(diagram, packs);
  std::vector<std::string> out;
  for (const gdprtm::ThreatFinding& f : result.findings) {
    std::string line = f.threat_type + "|" + f.rule_id + "|" + f.pack + "|" +
                       gdprtm::to_string(f.binding) + "|" + oracle::number_text(f.severity) + "|";
    for (std::size_t i = 0; i < f.sources.size(); ++i) {
      if (i) line += ",";
      line += f.sources[i];
    }
    out.push_back(std::move(line));
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Two chained derivation rules with the consumer listed first, so the
// fixpoint needs more than one productive pass, plus a threat sink.
inline constexpr std::string_view kChainPackText =
    "rule c-consume stratum derivation\n"
    "Derives: DC.Notify{ChainB}\n"
    "IF GDS.Response{ChainA} AND DC.Provide{Consent}=NOT\n"
    "THEN {DC.Notify{ChainB}}\n"
    "\n"
    "rule c-produce stratum derivation\n"
    "Derives: GDS.Response{ChainA}\n"
    "IF CROSSES(DS, GDS)\n"
    "THEN {GDS.Response{ChainA}}\n"
    "\n"
    "rule c-threat\n"
    "Threat type: chained exposure\n"
    "IF DC.Notify{ChainB}\n"
    "THEN {chained exposure}\n";

inline gdprtm::RulePack chain_pack() {
  auto r = gdprtm::parse_rules(kChainPackText, "chain");
  return *r.pack;
}

}  // namespace testsig
