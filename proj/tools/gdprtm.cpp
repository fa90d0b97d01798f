#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gdprtm/dfd_parser.hpp"
#include "gdprtm/engine.hpp"
#include "gdprtm/packs.hpp"
#include "gdprtm/report.hpp"
#include "gdprtm/version.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitParse = 1;
constexpr int kExitValidation = 2;
constexpr int kExitFindings = 3;

struct Options {
  std::vector<std::string> diagrams;
  std::vector<std::string> rule_refs;
  bool no_default_rules = false;
  std::string goal;
  std::string format;  // "", "json", "markdown"
  std::string output;
  bool fail_on_findings = false;
  std::string pack_filter;
  std::string threat;
};

std::optional<std::string> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void print_diagnostics(const std::string& source, const std::vector<gdprtm::Diagnostic>& diags) {
  for (const gdprtm::Diagnostic& d : diags)
    std::cerr << source << ":" << gdprtm::format_diagnostic(d) << "\n";
}

std::string path_stem(const std::string& path) {
  return std::filesystem::path(path).stem().string();
}

// A pack reference is a file path, a bundled pack name, or a name resolved
// against the directories in GDPRTM_RULES_PATH.
std::optional<std::string> resolve_pack_path(const std::string& ref) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (fs::is_regular_file(ref, ec)) return ref;
  if (const char* env = std::getenv("GDPRTM_RULES_PATH")) {
    std::string paths(env);
    std::size_t begin = 0;
    while (begin <= paths.size()) {
      std::size_t end = paths.find(':', begin);
      std::string dir = paths.substr(begin, end == std::string::npos ? end : end - begin);
      if (!dir.empty()) {
        for (const std::string& candidate : {dir + "/" + ref, dir + "/" + ref + ".rules"}) {
          if (fs::is_regular_file(candidate, ec)) return candidate;
        }
      }
      if (end == std::string::npos) break;
      begin = end + 1;
    }
  }
  return std::nullopt;
}

// exit_code is set on failure
std::vector<gdprtm::RulePack> load_packs(const Options& opt, int& exit_code) {
  std::vector<gdprtm::RulePack> packs;
  auto parse_one = [&](std::string_view text, std::string_view name,
                       const std::string& source) -> bool {
    gdprtm::RulesParseResult parsed = gdprtm::parse_rules(text, name);
    print_diagnostics(source, parsed.diagnostics);
    if (!parsed.ok()) {
      exit_code = kExitParse;
      return false;
    }
    packs.push_back(std::move(*parsed.pack));
    return true;
  };

  if (!opt.no_default_rules) {
    for (const gdprtm::BundledPack& bundled : gdprtm::bundled_packs()) {
      if (!parse_one(bundled.text, bundled.name, "<" + std::string(bundled.name) + ">"))
        return {};
    }
  }
  for (const std::string& ref : opt.rule_refs) {
    if (const gdprtm::BundledPack* bundled = gdprtm::find_bundled_pack(ref)) {
      if (!parse_one(bundled->text, bundled->name, "<" + std::string(bundled->name) + ">"))
        return {};
      continue;
    }
    std::optional<std::string> path = resolve_pack_path(ref);
    if (!path) {
      std::cerr << "error: cannot resolve rule pack '" << ref << "'\n";
      exit_code = kExitParse;
      return {};
    }
    std::optional<std::string> text = read_file(*path);
    if (!text) {
      std::cerr << "error: cannot read rule pack '" << *path << "'\n";
      exit_code = kExitParse;
      return {};
    }
    if (!parse_one(*text, path_stem(*path), *path)) return {};
  }
  return packs;
}

// Parses and validates one diagram, reporting diagnostics on stderr.
std::optional<gdprtm::Diagram> load_diagram(const std::string& path, int& exit_code) {
  std::optional<std::string> text = read_file(path);
  if (!text) {
    std::cerr << "error: cannot read diagram '" << path << "'\n";
    exit_code = kExitParse;
    return std::nullopt;
  }
  gdprtm::DiagramParseResult parsed = gdprtm::parse_diagram(*text);
  print_diagnostics(path, parsed.diagnostics);
  if (!parsed.ok()) {
    exit_code = kExitParse;
    return std::nullopt;
  }
  std::vector<gdprtm::Diagnostic> validation = gdprtm::validate_diagram(*parsed.diagram);
  print_diagnostics(path, validation);
  if (gdprtm::has_errors(validation)) {
    exit_code = kExitValidation;
    return std::nullopt;
  }
  return std::move(parsed.diagram);
}

std::string pick_format(const Options& opt) {
  if (!opt.format.empty()) return opt.format;
  if (!opt.output.empty()) return "json";
  return isatty(fileno(stdout)) ? "markdown" : "json";
}

bool emit(const Options& opt, const std::string& rendered, bool first_output) {
  if (opt.output.empty()) {
    std::cout << rendered;
    return true;
  }
  std::ofstream out(opt.output,
                    first_output ? std::ios::binary : std::ios::binary | std::ios::app);
  if (!out) {
    std::cerr << "error: cannot write '" << opt.output << "'\n";
    return false;
  }
  out << rendered;
  return true;
}

int cmd_analyze(const Options& opt) {
  int exit_code = kExitOk;
  std::vector<gdprtm::RulePack> packs = load_packs(opt, exit_code);
  if (exit_code != kExitOk) return exit_code;

  std::optional<std::string> goal;
  if (!opt.goal.empty()) goal = opt.goal;

  int worst = kExitOk;
  bool first_output = true;
  for (const std::string& path : opt.diagrams) {
    int code = kExitOk;
    std::optional<gdprtm::Diagram> diagram = load_diagram(path, code);
    if (!diagram) {
      worst = std::max(worst, code);
      continue;
    }
    gdprtm::InferenceResult result = gdprtm::run_inference(*diagram, packs, goal);
    print_diagnostics(path, result.diagnostics);
    if (!result.ok()) {
      worst = std::max(worst, kExitValidation);
      continue;
    }
    gdprtm::Report report =
        gdprtm::build_report(path_stem(path), *diagram, packs, result, goal);
    const std::string rendered = pick_format(opt) == "markdown" ? gdprtm::render_markdown(report)
                                                                : gdprtm::render_json(report);
    if (!emit(opt, rendered, first_output)) return kExitParse;
    first_output = false;
    if (opt.fail_on_findings && !result.findings.empty()) worst = std::max(worst, kExitFindings);
  }
  return worst;
}

int cmd_validate(const Options& opt) {
  int worst = kExitOk;
  for (const std::string& path : opt.diagrams) {
    int code = kExitOk;
    std::optional<gdprtm::Diagram> diagram = load_diagram(path, code);
    if (!diagram) {
      worst = std::max(worst, code);
      continue;
    }
    gdprtm::FactExtractionResult extraction = gdprtm::extract_facts(*diagram);
    print_diagnostics(path, extraction.diagnostics);
    if (gdprtm::has_errors(extraction.diagnostics)) worst = std::max(worst, kExitValidation);
  }
  return worst;
}

int cmd_rules(const Options& opt) {
  int exit_code = kExitOk;
  std::vector<gdprtm::RulePack> packs = load_packs(opt, exit_code);
  if (exit_code != kExitOk) return exit_code;
  if (packs.empty()) {
    std::cerr << "error: no rule packs loaded\n";
    return kExitParse;
  }
  std::vector<gdprtm::Diagnostic> validation = gdprtm::validate_packs(packs);
  for (const gdprtm::Diagnostic& d : validation)
    std::cerr << gdprtm::format_diagnostic(d) << "\n";
  if (gdprtm::has_errors(validation)) return kExitValidation;

  bool matched = false;
  for (const gdprtm::RulePack& pack : packs) {
    if (!opt.pack_filter.empty() && pack.name != opt.pack_filter) continue;
    matched = true;
    std::cout << "pack " << pack.name << "\n";
    for (const gdprtm::Rule& rule : pack.rules) {
      std::cout << "  " << rule.id << "  " << gdprtm::to_token(rule.stratum) << "  ";
      if (const std::string* name = rule.threat_type())
        std::cout << *name;
      else
        std::cout << gdprtm::to_string(*rule.derived_atom());
      if (rule.mixed_precedence) std::cout << "  (mixes AND/OR without parentheses)";
      std::cout << "\n";
    }
  }
  if (!matched) {
    std::cerr << "error: no pack named '" << opt.pack_filter << "' loaded\n";
    return kExitParse;
  }
  return kExitOk;
}

int cmd_explain(const Options& opt) {
  int exit_code = kExitOk;
  std::vector<gdprtm::RulePack> packs = load_packs(opt, exit_code);
  if (exit_code != kExitOk) return exit_code;

  const auto types = gdprtm::declared_threat_types(packs);
  const bool known = std::any_of(types.begin(), types.end(), [&](const std::string& t) {
    return t.size() == opt.threat.size() &&
           std::equal(t.begin(), t.end(), opt.threat.begin(), [](unsigned char a, unsigned char b) {
             return std::tolower(a) == std::tolower(b);
           });
  });
  if (!known) {
    std::cerr << "error: [" << gdprtm::codes::kGoalUnknown << "] no loaded rule declares threat type '"
              << opt.threat << "'\n";
    return kExitValidation;
  }

  int worst = kExitOk;
  for (const std::string& path : opt.diagrams) {
    int code = kExitOk;
    std::optional<gdprtm::Diagram> diagram = load_diagram(path, code);
    if (!diagram) {
      worst = std::max(worst, code);
      continue;
    }
    gdprtm::EngineRun run = gdprtm::run_engine(*diagram, packs);
    print_diagnostics(path, run.diagnostics);
    if (!run.ok()) {
      worst = std::max(worst, kExitValidation);
      continue;
    }
    bool any = false;
    for (const gdprtm::RuleOutcome& outcome : run.outcomes) {
      const std::string* type = outcome.rule->threat_type();
      if (!type || type->size() != opt.threat.size() ||
          !std::equal(type->begin(), type->end(), opt.threat.begin(),
                      [](unsigned char a, unsigned char b) {
                        return std::tolower(a) == std::tolower(b);
                      }))
        continue;
      any = true;
      std::cout << "rule " << outcome.rule->id << " (pack " << outcome.rule->pack
                << "), binding " << gdprtm::to_string(outcome.binding) << ": "
                << (outcome.fired ? "FIRED" : "not fired") << "\n";
      if (outcome.fired) {
        for (const gdprtm::TraceEntry& entry : outcome.include.trace) {
          std::cout << "  [" << (entry.value ? "x" : " ") << "] " << entry.atom;
          if (entry.fact) std::cout << "  matched " << *entry.fact;
          std::cout << "\n";
        }
        std::cout << "  sources:";
        for (const std::string& source : outcome.sources) std::cout << " " << source;
        std::cout << "\n";
      } else if (!outcome.include.value) {
        for (const gdprtm::TraceEntry& entry : outcome.include.trace) {
          if (entry.value) continue;
          std::cout << "  first failing atom: " << entry.atom;
          if (entry.fact) std::cout << "  (matched " << *entry.fact << ")";
          std::cout << "\n";
          break;
        }
      } else if (outcome.exclude) {
        for (const gdprtm::TraceEntry& entry : outcome.exclude->trace) {
          if (!entry.value) continue;
          std::cout << "  suppressed by exclude atom: " << entry.atom;
          if (entry.fact) std::cout << "  (matched " << *entry.fact << ")";
          std::cout << "\n";
          break;
        }
      }
    }
    if (!any)
      std::cout << "no rule of threat type '" << opt.threat
                << "' could bind over the diagram\n";
  }
  return worst;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GDPR non-compliance threat modelling for data-flow diagrams"};
  app.set_version_flag("--version", std::string(gdprtm::kToolVersion));
  app.require_subcommand(1);

  Options opt;
  auto add_rules_flags = [&](CLI::App* cmd) {
    cmd->add_option("--rules", opt.rule_refs,
                    "Additional rule pack (path or bundled name); repeatable");
    cmd->add_flag("--no-default-rules", opt.no_default_rules,
                  "Do not load the bundled packs");
  };
  auto add_diagram_option = [&](CLI::App* cmd, bool required) {
    auto* o = cmd->add_option("--diagram", opt.diagrams, "Data-flow diagram file; repeatable");
    if (required) o->required();
  };

  CLI::App* analyze = app.add_subcommand("analyze", "Run the full threat analysis");
  add_diagram_option(analyze, true);
  add_rules_flags(analyze);
  analyze->add_option("--goal", opt.goal, "Restrict the report to one threat type");
  analyze->add_option("--format", opt.format, "Report format")
      ->check(CLI::IsMember({"json", "markdown"}));
  analyze->add_option("--output", opt.output, "Write the report to a file");
  analyze->add_flag("--fail-on-findings", opt.fail_on_findings,
                    "Exit with status 3 when findings exist");

  CLI::App* validate = app.add_subcommand("validate", "Parse and validate a diagram");
  add_diagram_option(validate, true);

  CLI::App* rules = app.add_subcommand("rules", "List the loaded rules");
  add_rules_flags(rules);
  rules->add_option("--pack", opt.pack_filter, "List only the named pack");

  CLI::App* explain = app.add_subcommand("explain", "Explain rule outcomes for a threat type");
  add_diagram_option(explain, true);
  add_rules_flags(explain);
  explain->add_option("--threat", opt.threat, "Threat type to explain")->required();

  CLI11_PARSE(app, argc, argv);

  if (analyze->parsed()) return cmd_analyze(opt);
  if (validate->parsed()) return cmd_validate(opt);
  if (rules->parsed()) return cmd_rules(opt);
  return cmd_explain(opt);
}
