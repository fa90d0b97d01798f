#include "gdprtm/rules.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <map>
#include <set>
#include <sstream>

namespace gdprtm {

namespace {

std::string ascii_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

bool ci_equal(std::string_view a, std::string_view b) {
  return a.size() == b.size() &&
         std::equal(a.begin(), a.end(), b.begin(), [](unsigned char x, unsigned char y) {
           return std::tolower(x) == std::tolower(y);
         });
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

}  // namespace

std::string_view to_token(Action action) {
  switch (action) {
    case Action::Provide:
      return "Provide";
    case Action::Request:
      return "Request";
    case Action::Notify:
      return "Notify";
    case Action::Response:
      return "Response";
    case Action::Accomplish:
      return "Accomplish";
    case Action::Complain:
      return "Complain";
    case Action::Report:
      return "Report";
  }
  return "Provide";
}

std::optional<Action> action_from_token(std::string_view token) {
  for (Action a : kAllActions)
    if (ci_equal(token, to_token(a))) return a;
  return std::nullopt;
}

std::string_view to_token(RoleToken token) {
  switch (token) {
    case RoleToken::DS:
      return "DS";
    case RoleToken::DC:
      return "DC";
    case RoleToken::DP:
      return "DP";
    case RoleToken::SA:
      return "SA";
    case RoleToken::RM:
      return "RM";
    case RoleToken::GDS:
      return "GDS";
  }
  return "DS";
}

std::optional<RoleToken> role_token_from(std::string_view text) {
  for (RoleToken t : kAllRoleTokens)
    if (text == to_token(t)) return t;
  return std::nullopt;
}

std::optional<GdprRole> to_gdpr_role(RoleToken token) {
  switch (token) {
    case RoleToken::DS:
      return GdprRole::DS;
    case RoleToken::DC:
      return GdprRole::DC;
    case RoleToken::DP:
      return GdprRole::DP;
    case RoleToken::SA:
      return GdprRole::SA;
    case RoleToken::RM:
      return GdprRole::RM;
    case RoleToken::GDS:
      return std::nullopt;
  }
  return std::nullopt;
}

RoleToken role_token_of(GdprRole role) {
  switch (role) {
    case GdprRole::DS:
      return RoleToken::DS;
    case GdprRole::DC:
      return RoleToken::DC;
    case GdprRole::DP:
      return RoleToken::DP;
    case GdprRole::SA:
      return RoleToken::SA;
    case GdprRole::RM:
      return RoleToken::RM;
  }
  return RoleToken::DS;
}

std::string_view to_token(Stratum stratum) {
  return stratum == Stratum::Derivation ? "derivation" : "threat";
}

bool same_ground_atom(const Atom& a, const Atom& b) {
  return a.subject == b.subject && a.action == b.action && a.object_owner == b.object_owner &&
         ci_equal(a.property, b.property);
}

bool operator==(const AndGroup& a, const AndGroup& b) { return a.children == b.children; }
bool operator==(const OrGroup& a, const OrGroup& b) { return a.children == b.children; }

// ---------------------------------------------------------------------------
// Parsing

namespace {

struct Token {
  enum class Kind { Word, Symbol, End };
  Kind kind = Kind::End;
  std::string text;
  SourceSpan span;
};

// Words may contain '-' after the first character (rule ids, threat names).
void lex_rule_line(std::string_view line, int line_no, std::vector<Token>& out,
                   std::vector<Diagnostic>& diags) {
  auto is_word_start = [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
  };
  auto is_word_char = [&](char c) { return is_word_start(c) || c == '-'; };
  std::size_t i = 0;
  while (i < line.size()) {
    const char c = line[i];
    if (c == ' ' || c == '\t' || c == '\r') {
      ++i;
      continue;
    }
    if (is_word_start(c)) {
      std::size_t start = i;
      while (i < line.size() && is_word_char(line[i])) ++i;
      out.push_back({Token::Kind::Word, std::string(line.substr(start, i - start)),
                     SourceSpan{line_no, static_cast<int>(start) + 1,
                                static_cast<int>(i - start)}});
      continue;
    }
    if (c == '.' || c == '{' || c == '}' || c == '=' || c == ',' || c == '(' || c == ')' ||
        c == ':') {
      out.push_back({Token::Kind::Symbol, std::string(1, c),
                     SourceSpan{line_no, static_cast<int>(i) + 1, 1}});
      ++i;
      continue;
    }
    diags.push_back(Diagnostic{Severity::Error, std::string(codes::kSyntax),
                               std::string("unexpected character '") + c + "'",
                               SourceSpan{line_no, static_cast<int>(i) + 1, 1}});
    ++i;
  }
}

class TokenCursor {
 public:
  TokenCursor(std::vector<Token> tokens, std::vector<Diagnostic>& diags)
      : tokens_(std::move(tokens)), diags_(diags) {
    end_.span = tokens_.empty() ? SourceSpan{1, 1, 0} : tokens_.back().span;
  }

  const Token& peek(std::size_t ahead = 0) const {
    const std::size_t i = pos_ + ahead;
    return i < tokens_.size() ? tokens_[i] : end_;
  }

  const Token& advance() {
    const Token& t = peek();
    if (pos_ < tokens_.size()) ++pos_;
    return t;
  }

  bool at_end() const { return pos_ >= tokens_.size(); }

  bool accept_symbol(std::string_view s) {
    if (peek().kind == Token::Kind::Symbol && peek().text == s) {
      advance();
      return true;
    }
    return false;
  }

  bool accept_keyword(std::string_view kw) {
    if (peek().kind == Token::Kind::Word && ci_equal(peek().text, kw)) {
      advance();
      return true;
    }
    return false;
  }

  bool peek_keyword(std::string_view kw) const {
    return peek().kind == Token::Kind::Word && ci_equal(peek().text, kw);
  }

  void error(std::string message) { error_at(peek().span, std::move(message)); }

  void error_at(const SourceSpan& span, std::string message) {
    failed_ = true;
    diags_.push_back(
        Diagnostic{Severity::Error, std::string(codes::kSyntax), std::move(message), span});
  }

  std::string describe() const {
    return at_end() ? std::string("end of condition") : "'" + peek().text + "'";
  }

  bool failed() const { return failed_; }

 private:
  std::vector<Token> tokens_;
  std::size_t pos_ = 0;
  Token end_;
  std::vector<Diagnostic>& diags_;
  bool failed_ = false;
};

struct ConditionParse {
  std::optional<Condition> condition;
  bool mixed_precedence = false;
};

class ConditionParser {
 public:
  explicit ConditionParser(TokenCursor& cur) : cur_(cur) {}

  ConditionParse run() {
    auto cond = parse_or();
    ConditionParse out;
    if (cond && !cur_.at_end()) {
      cur_.error("expected AND, OR, or end of condition, found " + cur_.describe());
      return out;
    }
    if (!cond) return out;
    out.condition = std::move(*cond);
    out.mixed_precedence = saw_and_ && saw_or_ && !saw_paren_;
    return out;
  }

  std::optional<Atom> parse_single_atom() {
    auto atom = parse_atom();
    if (atom && !cur_.at_end()) {
      cur_.error("expected end of atom, found " + cur_.describe());
      return std::nullopt;
    }
    return atom;
  }

 private:
  std::optional<Condition> parse_or() {
    auto first = parse_and();
    if (!first) return std::nullopt;
    if (!cur_.peek_keyword("OR")) return first;
    OrGroup group;
    group.children.push_back(std::move(*first));
    while (cur_.accept_keyword("OR")) {
      saw_or_ = true;
      auto next = parse_and();
      if (!next) return std::nullopt;
      group.children.push_back(std::move(*next));
    }
    return Condition{std::move(group)};
  }

  std::optional<Condition> parse_and() {
    auto first = parse_primary();
    if (!first) return std::nullopt;
    if (!cur_.peek_keyword("AND")) return first;
    AndGroup group;
    group.children.push_back(std::move(*first));
    while (cur_.accept_keyword("AND")) {
      saw_and_ = true;
      auto next = parse_primary();
      if (!next) return std::nullopt;
      group.children.push_back(std::move(*next));
    }
    return Condition{std::move(group)};
  }

  std::optional<Condition> parse_primary() {
    if (cur_.accept_symbol("(")) {
      saw_paren_ = true;
      auto inner = parse_or();
      if (!inner) return std::nullopt;
      if (!cur_.accept_symbol(")")) {
        cur_.error("expected ')', found " + cur_.describe());
        return std::nullopt;
      }
      return inner;
    }
    if (cur_.peek_keyword("CROSSES")) return parse_crosses();
    auto atom = parse_atom();
    if (!atom) return std::nullopt;
    return Condition{std::move(*atom)};
  }

  std::optional<Condition> parse_crosses() {
    const SourceSpan span = cur_.peek().span;
    cur_.advance();  // CROSSES
    BoundaryTest test;
    test.span = span;
    if (!cur_.accept_symbol("(")) {
      cur_.error("expected '(' after CROSSES");
      return std::nullopt;
    }
    auto src = parse_role_token("CROSSES source");
    if (!src) return std::nullopt;
    test.source = *src;
    if (!cur_.accept_symbol(",")) {
      cur_.error("expected ',' between CROSSES roles");
      return std::nullopt;
    }
    auto dst = parse_role_token("CROSSES target");
    if (!dst) return std::nullopt;
    test.target = *dst;
    if (!cur_.accept_symbol(")")) {
      cur_.error("expected ')' after CROSSES roles");
      return std::nullopt;
    }
    if (!parse_polarity(test.polarity)) return std::nullopt;
    return Condition{std::move(test)};
  }

  std::optional<RoleToken> parse_role_token(std::string_view what) {
    if (cur_.peek().kind != Token::Kind::Word) {
      cur_.error("expected role token for " + std::string(what) + ", found " + cur_.describe());
      return std::nullopt;
    }
    const Token tok = cur_.advance();
    auto role = role_token_from(tok.text);
    if (!role) {
      cur_.error_at(tok.span, "unknown role token '" + tok.text + "'");
      return std::nullopt;
    }
    return role;
  }

  std::optional<Atom> parse_atom() {
    Atom atom;
    atom.span = cur_.peek().span;
    auto subject = parse_role_token("atom subject");
    if (!subject) return std::nullopt;
    atom.subject = *subject;

    if (!cur_.accept_symbol(".")) {
      cur_.error("expected '.' after atom subject, found " + cur_.describe());
      return std::nullopt;
    }
    if (cur_.peek().kind != Token::Kind::Word) {
      cur_.error("expected action token, found " + cur_.describe());
      return std::nullopt;
    }
    Token action_tok = cur_.advance();
    std::optional<Action> action;
    if (ci_equal(action_tok.text, "Accom")) {
      // the "Accom Request" spelling normalizes to Accomplish
      if (cur_.peek().kind == Token::Kind::Word && ci_equal(cur_.peek().text, "Request")) {
        cur_.advance();
        action = Action::Accomplish;
      } else {
        cur_.error_at(action_tok.span, "unknown action token 'Accom' (did you mean Accomplish?)");
        return std::nullopt;
      }
    } else {
      action = action_from_token(action_tok.text);
      if (!action) {
        cur_.error_at(action_tok.span, "unknown action token '" + action_tok.text + "'");
        return std::nullopt;
      }
    }
    atom.action = *action;

    cur_.accept_symbol(".");  // ".{" tolerance
    if (!cur_.accept_symbol("{")) {
      cur_.error("expected '{' after action, found " + cur_.describe());
      return std::nullopt;
    }
    if (cur_.peek().kind != Token::Kind::Word) {
      cur_.error("expected property, found " + cur_.describe());
      return std::nullopt;
    }
    Token first = cur_.advance();
    if (cur_.accept_symbol(".")) {
      auto owner = role_token_from(first.text);
      if (!owner) {
        cur_.error_at(first.span, "unknown role token '" + first.text + "' as object owner");
        return std::nullopt;
      }
      atom.object_owner = *owner;
      if (cur_.peek().kind != Token::Kind::Word) {
        cur_.error("expected property after object owner, found " + cur_.describe());
        return std::nullopt;
      }
      atom.property = cur_.advance().text;
    } else {
      atom.property = first.text;
    }
    if (!cur_.accept_symbol("}")) {
      cur_.error("expected '}' after property, found " + cur_.describe());
      return std::nullopt;
    }
    if (!parse_polarity(atom.polarity)) return std::nullopt;
    if (cur_.accept_keyword("as")) {
      if (cur_.peek().kind != Token::Kind::Word) {
        cur_.error("expected label after 'as', found " + cur_.describe());
        return std::nullopt;
      }
      atom.label = cur_.advance().text;
    }
    return atom;
  }

  bool parse_polarity(Polarity& polarity) {
    if (!cur_.accept_symbol("=")) {
      polarity = Polarity::Positive;
      return true;
    }
    if (cur_.peek().kind == Token::Kind::Word && ci_equal(cur_.peek().text, "NOT")) {
      cur_.advance();
      polarity = Polarity::Negated;
      return true;
    }
    cur_.error("expected NOT after '=', found " + cur_.describe());
    return false;
  }

  TokenCursor& cur_;
  bool saw_and_ = false;
  bool saw_or_ = false;
  bool saw_paren_ = false;
};

// severity expressions: sum of products of numbers and atom labels
std::optional<SeverityExpr> parse_severity_expr(std::string_view text, int line_no,
                                                int column_base,
                                                std::vector<Diagnostic>& diags) {
  struct ExprTok {
    enum class Kind { Number, Ident, Plus, Star, End } kind;
    std::string text;
    double number = 0.0;
    int column = 1;
  };
  std::vector<ExprTok> toks;
  std::size_t i = 0;
  bool lex_ok = true;
  while (i < text.size()) {
    char c = text[i];
    int col = column_base + static_cast<int>(i);
    if (c == ' ' || c == '\t' || c == '\r') {
      ++i;
      continue;
    }
    if (std::isdigit(static_cast<unsigned char>(c))) {
      std::size_t start = i;
      while (i < text.size() && (std::isdigit(static_cast<unsigned char>(text[i])) ||
                                 text[i] == '.'))
        ++i;
      std::string num(text.substr(start, i - start));
      double value = 0.0;
      auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), value);
      if (ec != std::errc() || ptr != num.data() + num.size()) {
        diags.push_back(Diagnostic{Severity::Error, std::string(codes::kSyntax),
                                   "invalid number '" + num + "' in severity expression",
                                   SourceSpan{line_no, col, static_cast<int>(num.size())}});
        lex_ok = false;
      }
      toks.push_back({ExprTok::Kind::Number, std::move(num), value, col});
      continue;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t start = i;
      while (i < text.size() && (std::isalnum(static_cast<unsigned char>(text[i])) ||
                                 text[i] == '_'))
        ++i;
      toks.push_back(
          {ExprTok::Kind::Ident, std::string(text.substr(start, i - start)), 0.0, col});
      continue;
    }
    if (c == '+') {
      toks.push_back({ExprTok::Kind::Plus, "+", 0.0, col});
      ++i;
      continue;
    }
    if (c == '*') {
      toks.push_back({ExprTok::Kind::Star, "*", 0.0, col});
      ++i;
      continue;
    }
    diags.push_back(Diagnostic{Severity::Error, std::string(codes::kSyntax),
                               std::string("unexpected character '") + c +
                                   "' in severity expression",
                               SourceSpan{line_no, col, 1}});
    lex_ok = false;
    ++i;
  }
  if (!lex_ok) return std::nullopt;
  toks.push_back({ExprTok::Kind::End, "", 0.0, column_base + static_cast<int>(text.size())});

  std::size_t pos = 0;
  auto fail = [&](std::string msg) -> std::optional<SeverityExpr> {
    diags.push_back(Diagnostic{Severity::Error, std::string(codes::kSyntax), std::move(msg),
                               SourceSpan{line_no, toks[pos].column, 1}});
    return std::nullopt;
  };

  SeverityExpr expr;
  while (true) {
    SeverityTerm term;
    while (true) {
      const ExprTok& t = toks[pos];
      if (t.kind == ExprTok::Kind::Number) {
        term.factors.push_back(SeverityFactor{t.number, ""});
        ++pos;
      } else if (t.kind == ExprTok::Kind::Ident) {
        term.factors.push_back(SeverityFactor{std::nullopt, t.text});
        ++pos;
      } else {
        return fail("expected number or atom label in severity expression");
      }
      if (toks[pos].kind == ExprTok::Kind::Star) {
        ++pos;
        continue;
      }
      break;
    }
    expr.terms.push_back(std::move(term));
    if (toks[pos].kind == ExprTok::Kind::Plus) {
      ++pos;
      continue;
    }
    if (toks[pos].kind == ExprTok::Kind::End) break;
    return fail("expected '+', '*', or end of severity expression");
  }
  return expr;
}

std::string slug_from(std::string_view text) {
  std::string out;
  bool pending_dash = false;
  for (char c : text) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      if (pending_dash && !out.empty()) out.push_back('-');
      pending_dash = false;
      out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else {
      pending_dash = true;
    }
  }
  return out.empty() ? "rule" : out;
}

struct Line {
  std::string_view text;
  int number = 0;
};

bool line_starts_with_ci(std::string_view line, std::string_view prefix) {
  std::size_t i = 0;
  while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
  if (line.size() - i < prefix.size()) return false;
  return ci_equal(line.substr(i, prefix.size()), prefix);
}

bool is_blank_or_comment(std::string_view line) {
  for (char c : line) {
    if (c == '#') return true;
    if (c != ' ' && c != '\t' && c != '\r') return false;
  }
  return true;
}

bool is_block_start(std::string_view line) {
  return line_starts_with_ci(line, "rule ") || line_starts_with_ci(line, "rule\t") ||
         line_starts_with_ci(line, "threat type") || line_starts_with_ci(line, "derives");
}

class RulesParser {
 public:
  RulesParser(std::string_view text, std::string_view pack_name) : pack_name_(pack_name) {
    std::size_t pos = 0;
    int line_no = 0;
    while (pos <= text.size()) {
      if (pos == text.size() && line_no > 0) break;
      std::size_t eol = text.find('\n', pos);
      std::string_view line =
          eol == std::string_view::npos ? text.substr(pos) : text.substr(pos, eol - pos);
      ++line_no;
      lines_.push_back(Line{line, line_no});
      if (eol == std::string_view::npos) break;
      pos = eol + 1;
    }
  }

  RulesParseResult run() {
    RulePack pack;
    pack.name = pack_name_;
    while (!at_end()) {
      if (is_blank_or_comment(current().text)) {
        next_line();
        continue;
      }
      if (auto rule = parse_block()) {
        rule->pack = pack_name_;
        pack.rules.push_back(std::move(*rule));
      } else {
        recover_to_block_start();
      }
    }

    RulesParseResult result;
    sort_diagnostics(diags_);
    result.diagnostics = std::move(diags_);
    if (!has_errors(result.diagnostics)) result.pack = std::move(pack);
    return result;
  }

 private:
  bool at_end() const { return index_ >= lines_.size(); }
  const Line& current() const { return lines_[index_]; }
  void next_line() { ++index_; }

  void recover_to_block_start() {
    next_line();
    while (!at_end() && !is_block_start(current().text)) next_line();
  }

  void error(int line_no, int column, int length, std::string message) {
    diags_.push_back(Diagnostic{Severity::Error, std::string(codes::kSyntax), std::move(message),
                                SourceSpan{line_no, column, length}});
  }

  std::vector<Token> lex_current() {
    std::vector<Token> toks;
    lex_rule_line(current().text, current().number, toks, diags_);
    return toks;
  }

  std::optional<Rule> parse_block() {
    Rule rule;
    std::optional<Stratum> declared_stratum;
    rule.span = SourceSpan{current().number, 1, 0};

    if (line_starts_with_ci(current().text, "rule ") ||
        line_starts_with_ci(current().text, "rule\t")) {
      if (!parse_rule_header(rule, declared_stratum)) return std::nullopt;
      while (!at_end() && is_blank_or_comment(current().text)) next_line();
      if (at_end()) {
        error(static_cast<int>(lines_.size()), 1, 0,
              "expected 'Threat type:' or 'Derives:' after rule header");
        return std::nullopt;
      }
    }

    // conclusion declaration
    std::string declared_threat;
    std::optional<Atom> declared_atom;
    if (line_starts_with_ci(current().text, "threat type")) {
      if (!parse_threat_decl(declared_threat)) return std::nullopt;
      if (declared_stratum == Stratum::Derivation) {
        error(current().number, 1, 0, "derivation rule must declare 'Derives:', not a threat type");
        return std::nullopt;
      }
      rule.stratum = Stratum::Threat;
    } else if (line_starts_with_ci(current().text, "derives")) {
      if (!parse_derives_decl(declared_atom)) return std::nullopt;
      if (declared_stratum == Stratum::Threat) {
        error(current().number, 1, 0, "threat rule must declare a threat type, not 'Derives:'");
        return std::nullopt;
      }
      rule.stratum = Stratum::Derivation;
    } else {
      error(current().number, 1, 0, "expected 'rule', 'Threat type:', or 'Derives:'");
      return std::nullopt;
    }
    next_line();

    // include condition up to THEN or EXCLUDE
    std::vector<Token> include_toks;
    if (!collect_condition(include_toks, /*leading_if=*/true)) return std::nullopt;
    bool mixed = false;
    {
      TokenCursor cur(std::move(include_toks), diags_);
      auto parsed = ConditionParser(cur).run();
      if (!parsed.condition) return std::nullopt;
      rule.include = std::move(*parsed.condition);
      mixed = parsed.mixed_precedence;
    }

    if (line_starts_with_ci(current().text, "exclude")) {
      std::vector<Token> exclude_toks;
      if (!collect_exclude(exclude_toks)) return std::nullopt;
      TokenCursor cur(std::move(exclude_toks), diags_);
      auto parsed = ConditionParser(cur).run();
      if (!parsed.condition) return std::nullopt;
      rule.exclude = std::move(*parsed.condition);
      mixed = mixed || parsed.mixed_precedence;
    }
    rule.mixed_precedence = mixed;

    if (!parse_then_line(rule, declared_threat, declared_atom)) return std::nullopt;

    if (rule.id.empty()) {
      const std::string* name = rule.threat_type();
      rule.id = name ? slug_from(*name) : slug_from(to_string(*rule.derived_atom()));
    }
    return rule;
  }

  bool parse_rule_header(Rule& rule, std::optional<Stratum>& declared) {
    std::vector<Token> toks = lex_current();
    TokenCursor cur(std::move(toks), diags_);
    cur.advance();  // 'rule'
    if (cur.peek().kind != Token::Kind::Word) {
      cur.error("expected rule id, found " + cur.describe());
      return false;
    }
    rule.span = cur.peek().span;
    rule.id = cur.advance().text;
    if (cur.accept_keyword("stratum")) {
      if (cur.accept_keyword("derivation"))
        declared = Stratum::Derivation;
      else if (cur.accept_keyword("threat"))
        declared = Stratum::Threat;
      else {
        cur.error("expected stratum derivation or threat, found " + cur.describe());
        return false;
      }
    }
    if (!cur.at_end()) {
      cur.error("expected end of rule header, found " + cur.describe());
      return false;
    }
    next_line();
    return true;
  }

  bool parse_threat_decl(std::string& name) {
    std::string_view line = current().text;
    std::size_t colon = line.find(':');
    if (colon == std::string_view::npos) {
      error(current().number, 1, static_cast<int>(line.size()),
            "expected ':' after 'Threat type'");
      return false;
    }
    name = trim(line.substr(colon + 1));
    if (name.empty()) {
      error(current().number, static_cast<int>(colon) + 1, 1, "empty threat type name");
      return false;
    }
    return true;
  }

  bool parse_derives_decl(std::optional<Atom>& atom) {
    std::string_view line = current().text;
    std::size_t colon = line.find(':');
    if (colon == std::string_view::npos) {
      error(current().number, 1, static_cast<int>(line.size()), "expected ':' after 'Derives'");
      return false;
    }
    std::vector<Token> toks;
    lex_rule_line(line.substr(colon + 1), current().number, toks, diags_);
    for (Token& t : toks) t.span.column += static_cast<int>(colon) + 1;
    TokenCursor cur(std::move(toks), diags_);
    atom = ConditionParser(cur).parse_single_atom();
    if (!atom) return false;
    if (atom->polarity == Polarity::Negated) {
      error(current().number, static_cast<int>(colon) + 2, 1,
            "a derived-fact conclusion must not be negated");
      return false;
    }
    if (!atom->label.empty()) {
      error(current().number, static_cast<int>(colon) + 2, 1,
            "a derived-fact conclusion cannot carry a label");
      return false;
    }
    return true;
  }

  // Accumulates condition tokens starting at the current line (which must
  // begin with IF, optionally prefixed by "Include:"). Consumes lines until
  // one starting with THEN or EXCLUDE; blank lines inside are skipped.
  bool collect_condition(std::vector<Token>& out, bool leading_if) {
    while (!at_end() && is_blank_or_comment(current().text)) next_line();
    if (at_end()) {
      error(static_cast<int>(lines_.size()), 1, 0, "expected IF");
      return false;
    }

    std::vector<Token> toks = lex_current();
    TokenCursor cur(toks, diags_);
    std::size_t skip = 0;
    if (cur.peek_keyword("Include")) {
      skip = 1;
      if (toks.size() > 1 && toks[1].kind == Token::Kind::Symbol && toks[1].text == ":") ++skip;
      cur.advance();
      cur.accept_symbol(":");
    }
    if (leading_if) {
      if (!cur.peek_keyword("IF")) {
        error(current().number, cur.peek().span.column, cur.peek().span.length,
              "expected IF to open the condition");
        return false;
      }
      ++skip;
    }
    out.insert(out.end(), toks.begin() + static_cast<std::ptrdiff_t>(skip), toks.end());
    next_line();

    while (true) {
      if (at_end()) {
        error(static_cast<int>(lines_.size()), 1, 0, "expected THEN");
        return false;
      }
      std::string_view line = current().text;
      if (is_blank_or_comment(line)) {
        next_line();
        continue;
      }
      if (line_starts_with_ci(line, "then") || line_starts_with_ci(line, "exclude")) return true;
      if (is_block_start(line)) {
        error(current().number, 1, 0, "expected THEN");
        return false;
      }
      std::vector<Token> more = lex_current();
      out.insert(out.end(), more.begin(), more.end());
      next_line();
    }
  }

  bool collect_exclude(std::vector<Token>& out) {
    std::vector<Token> toks = lex_current();
    TokenCursor cur(toks, diags_);
    cur.advance();  // EXCLUDE / Exclude
    std::size_t skip = 1;
    if (cur.accept_symbol(":")) ++skip;
    if (!cur.peek_keyword("IF")) {
      error(current().number, cur.peek().span.column, cur.peek().span.length,
            "expected IF after EXCLUDE");
      return false;
    }
    ++skip;
    out.insert(out.end(), toks.begin() + static_cast<std::ptrdiff_t>(skip), toks.end());
    next_line();

    while (true) {
      if (at_end()) {
        error(static_cast<int>(lines_.size()), 1, 0, "expected THEN");
        return false;
      }
      std::string_view line = current().text;
      if (is_blank_or_comment(line)) {
        next_line();
        continue;
      }
      if (line_starts_with_ci(line, "then")) return true;
      if (is_block_start(line)) {
        error(current().number, 1, 0, "expected THEN");
        return false;
      }
      std::vector<Token> more = lex_current();
      out.insert(out.end(), more.begin(), more.end());
      next_line();
    }
  }

  bool parse_then_line(Rule& rule, const std::string& declared_threat,
                       const std::optional<Atom>& declared_atom) {
    std::string_view line = current().text;
    const int line_no = current().number;
    std::size_t i = 0;
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    i += 4;  // "THEN"
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    if (i >= line.size() || line[i] != '{') {
      error(line_no, static_cast<int>(i) + 1, 1, "expected '{' after THEN");
      return false;
    }
    const std::size_t open = i;
    int depth = 0;
    std::size_t close = std::string_view::npos;
    for (std::size_t j = open; j < line.size(); ++j) {
      if (line[j] == '{') ++depth;
      if (line[j] == '}' && --depth == 0) {
        close = j;
        break;
      }
    }
    if (close == std::string_view::npos) {
      error(line_no, static_cast<int>(open) + 1, 1, "missing '}' on THEN line");
      return false;
    }
    std::string body = trim(line.substr(open + 1, close - open - 1));
    if (body.empty()) {
      error(line_no, static_cast<int>(open) + 1, 1, "empty conclusion on THEN line");
      return false;
    }

    if (rule.stratum == Stratum::Threat) {
      if (!declared_threat.empty() && !ci_equal(body, declared_threat)) {
        error(line_no, static_cast<int>(open) + 2, static_cast<int>(body.size()),
              "THEN conclusion '" + body + "' does not match declared threat type '" +
                  declared_threat + "'");
        return false;
      }
      rule.conclusion = body;
    } else {
      std::vector<Token> toks;
      lex_rule_line(body, line_no, toks, diags_);
      for (Token& t : toks) t.span.column += static_cast<int>(open) + 1;
      TokenCursor cur(std::move(toks), diags_);
      auto atom = ConditionParser(cur).parse_single_atom();
      if (!atom) return false;
      if (atom->polarity == Polarity::Negated) {
        error(line_no, static_cast<int>(open) + 2, static_cast<int>(body.size()),
              "a derived-fact conclusion must not be negated");
        return false;
      }
      if (declared_atom && !same_ground_atom(*atom, *declared_atom)) {
        error(line_no, static_cast<int>(open) + 2, static_cast<int>(body.size()),
              "THEN conclusion does not match the declared Derives: atom");
        return false;
      }
      rule.conclusion = std::move(*atom);
    }

    // optional: severity = <expr>
    std::string_view rest = line.substr(close + 1);
    std::size_t r = 0;
    while (r < rest.size() && (rest[r] == ' ' || rest[r] == '\t')) ++r;
    if (r < rest.size()) {
      std::string_view kw = rest.substr(r);
      if (!ci_equal(kw.substr(0, std::min<std::size_t>(8, kw.size())), "severity")) {
        error(line_no, static_cast<int>(close + 1 + r) + 1, 1,
              "expected 'severity = <expr>' or end of line after conclusion");
        return false;
      }
      std::size_t eq = rest.find('=', r);
      if (eq == std::string_view::npos) {
        error(line_no, static_cast<int>(close + 1 + r) + 1, 1, "expected '=' after 'severity'");
        return false;
      }
      auto expr = parse_severity_expr(std::string(rest.substr(eq + 1)), line_no,
                                      static_cast<int>(close + 1 + eq) + 2, diags_);
      if (!expr) return false;
      rule.severity = std::move(*expr);
    }
    next_line();
    return true;
  }

  static std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
    return std::string(s.substr(b, e - b));
  }

  std::string_view pack_name_;
  std::vector<Line> lines_;
  std::size_t index_ = 0;
  std::vector<Diagnostic> diags_;
};

}  // namespace

RulesParseResult parse_rules(std::string_view text, std::string_view pack_name) {
  return RulesParser(text, pack_name).run();
}

// ---------------------------------------------------------------------------
// Serialization

std::string to_string(const Atom& atom) {
  std::string out(to_token(atom.subject));
  out += '.';
  out += to_token(atom.action);
  out += '{';
  if (atom.object_owner) {
    out += to_token(*atom.object_owner);
    out += '.';
  }
  out += atom.property;
  out += '}';
  if (atom.polarity == Polarity::Negated) out += "=NOT";
  if (!atom.label.empty()) out += " as " + atom.label;
  return out;
}

std::string to_string(const BoundaryTest& test) {
  std::string out = "CROSSES(";
  out += to_token(test.source);
  out += ", ";
  out += to_token(test.target);
  out += ')';
  if (test.polarity == Polarity::Negated) out += "=NOT";
  return out;
}

namespace {

void render_condition(const Condition& c, std::string& out, bool parenthesize_or) {
  if (const Atom* atom = std::get_if<Atom>(&c.node)) {
    out += to_string(*atom);
    return;
  }
  if (const BoundaryTest* test = std::get_if<BoundaryTest>(&c.node)) {
    out += to_string(*test);
    return;
  }
  if (const AndGroup* g = std::get_if<AndGroup>(&c.node)) {
    for (std::size_t i = 0; i < g->children.size(); ++i) {
      if (i) out += " AND ";
      render_condition(g->children[i], out, /*parenthesize_or=*/true);
    }
    return;
  }
  const OrGroup& g = std::get<OrGroup>(c.node);
  if (parenthesize_or) out += '(';
  for (std::size_t i = 0; i < g.children.size(); ++i) {
    if (i) out += " OR ";
    render_condition(g.children[i], out, /*parenthesize_or=*/false);
  }
  if (parenthesize_or) out += ')';
}

}  // namespace

std::string to_string(const Condition& condition) {
  std::string out;
  render_condition(condition, out, /*parenthesize_or=*/false);
  return out;
}

std::string to_string(const SeverityExpr& expr) {
  std::string out;
  for (std::size_t t = 0; t < expr.terms.size(); ++t) {
    if (t) out += " + ";
    const SeverityTerm& term = expr.terms[t];
    for (std::size_t f = 0; f < term.factors.size(); ++f) {
      if (f) out += " * ";
      const SeverityFactor& factor = term.factors[f];
      out += factor.number ? format_double(*factor.number) : factor.label;
    }
  }
  return out;
}

std::string serialize_rule(const Rule& rule) {
  std::string out = "rule " + rule.id;
  if (rule.stratum == Stratum::Derivation) out += " stratum derivation";
  out += '\n';
  if (const std::string* name = rule.threat_type()) {
    out += "Threat type: " + *name + '\n';
  } else {
    out += "Derives: " + to_string(*rule.derived_atom()) + '\n';
  }
  out += "IF " + to_string(rule.include) + '\n';
  if (rule.exclude) out += "EXCLUDE IF " + to_string(*rule.exclude) + '\n';
  out += "THEN {";
  if (const std::string* name = rule.threat_type())
    out += *name;
  else
    out += to_string(*rule.derived_atom());
  out += '}';
  if (rule.severity) out += " severity = " + to_string(*rule.severity);
  out += '\n';
  return out;
}

std::string serialize_rulepack(const RulePack& pack) {
  std::string out;
  for (std::size_t i = 0; i < pack.rules.size(); ++i) {
    if (i) out += '\n';
    out += serialize_rule(pack.rules[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Validation

namespace {

template <typename AtomFn, typename TestFn>
void visit_leaves(const Condition& c, AtomFn&& on_atom, TestFn&& on_test) {
  if (const Atom* atom = std::get_if<Atom>(&c.node)) {
    on_atom(*atom);
    return;
  }
  if (const BoundaryTest* test = std::get_if<BoundaryTest>(&c.node)) {
    on_test(*test);
    return;
  }
  if (const AndGroup* g = std::get_if<AndGroup>(&c.node)) {
    for (const Condition& child : g->children) visit_leaves(child, on_atom, on_test);
    return;
  }
  for (const Condition& child : std::get<OrGroup>(c.node).children)
    visit_leaves(child, on_atom, on_test);
}

void collect_role_tokens(const Condition& c, std::set<RoleToken>& out) {
  visit_leaves(
      c,
      [&](const Atom& a) {
        out.insert(a.subject);
        if (a.object_owner) out.insert(*a.object_owner);
      },
      [&](const BoundaryTest& t) {
        out.insert(t.source);
        out.insert(t.target);
      });
}

void add_diag(std::vector<Diagnostic>& out, Severity sev, std::string_view code,
              std::string message, const SourceSpan& span) {
  std::optional<SourceSpan> where;
  if (span != SourceSpan{}) where = span;
  out.push_back(Diagnostic{sev, std::string(code), std::move(message), where});
}

// Negative dependencies of a rule: negated atoms in the include plus
// positive atoms in the exclude (the exclude suppresses on their presence).
template <typename Fn>
void visit_negative_deps(const Rule& rule, Fn&& fn) {
  visit_leaves(
      rule.include,
      [&](const Atom& a) {
        if (a.polarity == Polarity::Negated) fn(a);
      },
      [](const BoundaryTest&) {});
  if (rule.exclude) {
    visit_leaves(
        *rule.exclude,
        [&](const Atom& a) {
          if (a.polarity == Polarity::Positive) fn(a);
        },
        [](const BoundaryTest&) {});
  }
}

void check_rules(std::span<const Rule* const> rules, bool with_stratification,
                 std::vector<Diagnostic>& out) {
  std::map<std::string_view, const Rule*> by_id;
  for (const Rule* rule : rules) {
    auto [it, inserted] = by_id.emplace(rule->id, rule);
    if (!inserted && it->second->pack == rule->pack) {
      add_diag(out, Severity::Error, codes::kDupRule,
               "duplicate rule id '" + rule->id + "' in pack '" + rule->pack + "'", rule->span);
    }

    std::set<RoleToken> include_roles;
    collect_role_tokens(rule->include, include_roles);
    if (rule->exclude) {
      std::set<RoleToken> exclude_roles;
      collect_role_tokens(*rule->exclude, exclude_roles);
      for (RoleToken r : exclude_roles) {
        if (!include_roles.contains(r)) {
          add_diag(out, Severity::Error, codes::kExcludeRole,
                   "rule '" + rule->id + "': exclude references role " +
                       std::string(to_token(r)) + " that the include does not bind",
                   rule->span);
        }
      }
    }

    if (rule->stratum == Stratum::Threat) {
      auto flag_topology = [&](const BoundaryTest&) {
        add_diag(out, Severity::Error, codes::kTopologyStratum,
                 "rule '" + rule->id +
                     "': CROSSES is only available to derivation-stratum rules",
                 rule->span);
      };
      visit_leaves(rule->include, [](const Atom&) {}, flag_topology);
      if (rule->exclude) visit_leaves(*rule->exclude, [](const Atom&) {}, flag_topology);
    }

    if (rule->severity) {
      std::set<std::string_view> labels;
      auto collect_label = [&](const Atom& a) {
        if (!a.label.empty()) labels.insert(a.label);
      };
      visit_leaves(rule->include, collect_label, [](const BoundaryTest&) {});
      if (rule->exclude) visit_leaves(*rule->exclude, collect_label, [](const BoundaryTest&) {});
      for (const SeverityTerm& term : rule->severity->terms) {
        for (const SeverityFactor& factor : term.factors) {
          if (!factor.number && !labels.contains(factor.label)) {
            add_diag(out, Severity::Error, codes::kSeverityLabel,
                     "rule '" + rule->id + "': severity references unknown atom label '" +
                         factor.label + "'",
                     rule->span);
          }
        }
      }
    }
  }

  // shadowing: identical include/exclude/conclusion as an earlier rule
  for (std::size_t i = 0; i < rules.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      const Rule& late = *rules[i];
      const Rule& early = *rules[j];
      if (late.stratum == early.stratum && late.include == early.include &&
          late.exclude == early.exclude && late.conclusion == early.conclusion) {
        add_diag(out, Severity::Warning, codes::kUnreachableRule,
                 "rule '" + late.id + "' duplicates rule '" + early.id +
                     "' and can never add a distinct conclusion",
                 late.span);
        break;
      }
    }
  }

  if (!with_stratification) return;
  for (const Rule* producer : rules) {
    if (producer->stratum != Stratum::Derivation) continue;
    const Atom* derived = producer->derived_atom();
    if (!derived) continue;
    for (const Rule* consumer : rules) {
      if (consumer->stratum != Stratum::Derivation) continue;
      visit_negative_deps(*consumer, [&](const Atom& dep) {
        if (same_ground_atom(dep, *derived)) {
          add_diag(out, Severity::Error, codes::kStratification,
                   "derivation rule '" + consumer->id + "' depends negatively on '" +
                       to_string(*derived) + "', which derivation rule '" + producer->id +
                       "' concludes",
                   consumer->span);
        }
      });
    }
  }
}

}  // namespace

void visit_atoms(const Condition& condition, const std::function<void(const Atom&)>& fn) {
  visit_leaves(condition, fn, [](const BoundaryTest&) {});
}

std::vector<RoleToken> role_tokens_of(const Rule& rule) {
  std::set<RoleToken> set;
  collect_role_tokens(rule.include, set);
  if (rule.exclude) collect_role_tokens(*rule.exclude, set);
  if (const Atom* atom = rule.derived_atom()) {
    set.insert(atom->subject);
    if (atom->object_owner) set.insert(*atom->object_owner);
  }
  std::vector<RoleToken> out(set.begin(), set.end());
  std::sort(out.begin(), out.end(),
            [](RoleToken a, RoleToken b) { return to_token(a) < to_token(b); });
  return out;
}

std::vector<Diagnostic> validate_rulepack(const RulePack& pack) {
  std::vector<const Rule*> rules;
  rules.reserve(pack.rules.size());
  for (const Rule& r : pack.rules) rules.push_back(&r);
  std::vector<Diagnostic> out;
  check_rules(rules, /*with_stratification=*/true, out);
  sort_diagnostics(out);
  return out;
}

std::vector<Diagnostic> validate_packs(std::span<const RulePack> packs) {
  std::vector<Diagnostic> out;
  std::set<std::string_view> names;
  std::vector<const Rule*> all_rules;
  for (const RulePack& pack : packs) {
    if (!names.insert(pack.name).second) {
      add_diag(out, Severity::Error, codes::kDupPack,
               "pack '" + pack.name + "' loaded more than once", SourceSpan{});
    }
    for (const Rule& r : pack.rules) all_rules.push_back(&r);
  }
  check_rules(all_rules, /*with_stratification=*/true, out);
  sort_diagnostics(out);
  return out;
}

}  // namespace gdprtm
