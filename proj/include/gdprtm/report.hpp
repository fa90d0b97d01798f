#pragma once

#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gdprtm/diagram.hpp"
#include "gdprtm/engine.hpp"

namespace gdprtm {

struct Report {
  std::string diagram;
  std::vector<std::string> packs;  // load order
  std::string tool_version;
  std::vector<std::string> threat_types;  // sorted; every declared type
  std::vector<std::string> entities;      // entity ids, id order
  std::map<std::string, std::size_t> summary;           // per threat type, zeros kept
  std::map<std::string, std::set<std::string>> matrix;  // threat type -> attributed entities
  std::vector<ThreatFinding> findings;

  friend bool operator==(const Report&, const Report&) = default;
};

// Shapes an inference result for rendering. A goal narrows the threat types
// (and so the summary and matrix) to the matching one.
Report build_report(std::string_view diagram_name, const Diagram& diagram,
                    std::span<const RulePack> packs, const InferenceResult& result,
                    const std::optional<std::string>& goal = std::nullopt);

// Stable-key-order JSON document, two-space indent, trailing newline.
std::string render_json(const Report& report);

std::string render_markdown(const Report& report);

}  // namespace gdprtm
