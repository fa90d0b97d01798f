#include "gdprtm/dfd_parser.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

#include "gdprtm/annotations.hpp"

namespace gdprtm {

namespace {

struct Token {
  enum class Kind { Word, Symbol, String, End };
  Kind kind = Kind::End;
  std::string text;    // for String: unescaped content
  int column = 1;      // 1-based
  int length = 0;
};

class LineLexer {
 public:
  LineLexer(std::string_view line, int line_no, std::vector<Diagnostic>& diags)
      : line_(line), line_no_(line_no), diags_(diags) {}

  std::vector<Token> run() {
    std::vector<Token> out;
    std::size_t i = 0;
    while (i < line_.size()) {
      const char c = line_[i];
      if (c == ' ' || c == '\t') {
        ++i;
        continue;
      }
      if (is_word_char(c)) {
        std::size_t start = i;
        while (i < line_.size() && is_word_char(line_[i])) ++i;
        out.push_back({Token::Kind::Word, std::string(line_.substr(start, i - start)),
                       static_cast<int>(start) + 1, static_cast<int>(i - start)});
        continue;
      }
      if (c == '"') {
        lex_string(out, i);
        continue;
      }
      if (c == '-' && i + 1 < line_.size() && line_[i + 1] == '>') {
        out.push_back({Token::Kind::Symbol, "->", static_cast<int>(i) + 1, 2});
        i += 2;
        continue;
      }
      if (c == '=' || c == ',' || c == ':' || c == '{' || c == '}') {
        out.push_back({Token::Kind::Symbol, std::string(1, c), static_cast<int>(i) + 1, 1});
        ++i;
        continue;
      }
      error(static_cast<int>(i) + 1, 1,
            "unexpected character '" + printable(c) + "'");
      ++i;
    }
    out.push_back({Token::Kind::End, "", static_cast<int>(line_.size()) + 1, 0});
    return out;
  }

 private:
  static bool is_word_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
  }

  static std::string printable(char c) {
    if (std::isprint(static_cast<unsigned char>(c))) return std::string(1, c);
    std::ostringstream os;
    os << "\\x" << std::hex << (static_cast<unsigned>(c) & 0xffu);
    return os.str();
  }

  void lex_string(std::vector<Token>& out, std::size_t& i) {
    const std::size_t start = i;
    ++i;  // opening quote
    std::string value;
    while (i < line_.size()) {
      char c = line_[i];
      if (c == '"') {
        ++i;
        out.push_back({Token::Kind::String, std::move(value), static_cast<int>(start) + 1,
                       static_cast<int>(i - start)});
        return;
      }
      if (c == '\\') {
        if (i + 1 >= line_.size()) break;
        char esc = line_[i + 1];
        if (esc == '\\' || esc == '"')
          value.push_back(esc);
        else if (esc == 'n')
          value.push_back('\n');
        else {
          error(static_cast<int>(i) + 1, 2, std::string("invalid escape '\\") + esc + "'");
          value.push_back(esc);
        }
        i += 2;
        continue;
      }
      value.push_back(c);
      ++i;
    }
    error(static_cast<int>(start) + 1, static_cast<int>(line_.size() - start),
          "unterminated string literal");
    out.push_back({Token::Kind::String, std::move(value), static_cast<int>(start) + 1,
                   static_cast<int>(line_.size() - start)});
  }

  void error(int column, int length, std::string message) {
    diags_.push_back(Diagnostic{Severity::Error, std::string(codes::kSyntax), std::move(message),
                                SourceSpan{line_no_, column, length}});
  }

  std::string_view line_;
  int line_no_;
  std::vector<Diagnostic>& diags_;
};

// Cursor over one tokenized line.
class LineParser {
 public:
  LineParser(std::vector<Token> tokens, int line_no, std::vector<Diagnostic>& diags)
      : tokens_(std::move(tokens)), line_no_(line_no), diags_(diags) {}

  const Token& peek(std::size_t ahead = 0) const {
    const std::size_t i = std::min(pos_ + ahead, tokens_.size() - 1);
    return tokens_[i];
  }

  const Token& advance() {
    const Token& t = tokens_[pos_];
    if (pos_ + 1 < tokens_.size()) ++pos_;
    return t;
  }

  bool at_end() const { return peek().kind == Token::Kind::End; }

  bool accept_symbol(std::string_view s) {
    if (peek().kind == Token::Kind::Symbol && peek().text == s) {
      advance();
      return true;
    }
    return false;
  }

  std::optional<Token> expect_word(std::string_view what) {
    if (peek().kind == Token::Kind::Word) return advance();
    error_at(peek(), std::string("expected ") + std::string(what) + ", found " + describe(peek()));
    return std::nullopt;
  }

  bool expect_symbol(std::string_view s) {
    if (accept_symbol(s)) return true;
    error_at(peek(), "expected '" + std::string(s) + "', found " + describe(peek()));
    return false;
  }

  SourceSpan span_of(const Token& t) const { return SourceSpan{line_no_, t.column, t.length}; }

  static std::string describe(const Token& t) {
    return t.kind == Token::Kind::End ? "end of line" : "'" + t.text + "'";
  }

  void error_here(std::string message) { error_at(peek(), std::move(message)); }

  void error_at(const Token& t, std::string message) {
    ok_ = false;
    diags_.push_back(Diagnostic{Severity::Error, std::string(codes::kSyntax), std::move(message),
                                span_of(t)});
  }

  void warn_at(const Token& t, std::string_view code, std::string message) {
    diags_.push_back(
        Diagnostic{Severity::Warning, std::string(code), std::move(message), span_of(t)});
  }

  bool ok() const { return ok_; }

  void require_line_end() {
    if (!at_end()) error_here("expected end of line, found " + describe(peek()));
  }

 private:
  std::vector<Token> tokens_;
  std::size_t pos_ = 0;
  int line_no_;
  std::vector<Diagnostic>& diags_;
  bool ok_ = true;
};

class DiagramParser {
 public:
  explicit DiagramParser(std::string_view text) : text_(text) {}

  DiagramParseResult run() {
    int line_no = 0;
    std::size_t pos = 0;
    while (pos <= text_.size()) {
      if (pos == text_.size() && line_no > 0) break;
      std::size_t eol = text_.find('\n', pos);
      std::string_view line =
          eol == std::string_view::npos ? text_.substr(pos) : text_.substr(pos, eol - pos);
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      ++line_no;
      parse_line(line, line_no);
      if (eol == std::string_view::npos) break;
      pos = eol + 1;
    }
    assign_auto_flow_ids();

    DiagramParseResult result;
    sort_diagnostics(diags_);
    result.diagnostics = std::move(diags_);
    if (!has_errors(result.diagnostics)) result.diagram = std::move(diagram_);
    return result;
  }

 private:
  void parse_line(std::string_view line, int line_no) {
    std::string_view trimmed = line;
    while (!trimmed.empty() && (trimmed.front() == ' ' || trimmed.front() == '\t'))
      trimmed.remove_prefix(1);
    if (trimmed.empty() || trimmed.front() == '#') return;

    std::vector<Token> tokens = LineLexer(line, line_no, diags_).run();
    LineParser p(std::move(tokens), line_no, diags_);
    if (p.peek().kind != Token::Kind::Word) {
      p.error_here("expected a declaration keyword, found " + LineParser::describe(p.peek()));
      return;
    }
    const std::string keyword = p.peek().text;
    if (keyword == "entity")
      parse_entity(p, /*store_sugar=*/false);
    else if (keyword == "store")
      parse_entity(p, /*store_sugar=*/true);
    else if (keyword == "flow")
      parse_flow(p);
    else if (keyword == "boundary")
      parse_boundary(p);
    else {
      p.advance();
      diags_.push_back(Diagnostic{Severity::Error, std::string(codes::kUnknownKeyword),
                                  "unknown keyword '" + keyword +
                                      "', expected entity, store, boundary, or flow",
                                  SourceSpan{line_no, 1, static_cast<int>(keyword.size())}});
    }
  }

  void parse_entity(LineParser& p, bool store_sugar) {
    p.advance();  // keyword
    auto id = p.expect_word("entity id");
    if (!id) return;

    Entity e;
    e.id = id->text;
    e.span = p.span_of(*id);
    e.kind = store_sugar ? EntityKind::DataStore : EntityKind::Process;
    bool kind_seen = false;
    bool roles_seen = false;
    bool label_seen = false;

    while (p.peek().kind == Token::Kind::Word) {
      const Token key = p.advance();
      if (key.text == "kind") {
        if (store_sugar) {
          p.error_at(key, "'store' declares kind=datastore implicitly");
          return;
        }
        if (kind_seen) p.error_at(key, "duplicate kind attribute");
        kind_seen = true;
        if (!p.expect_symbol("=")) return;
        auto v = p.expect_word("entity kind (external, process, or datastore)");
        if (!v) return;
        auto kind = entity_kind_from_token(v->text);
        if (!kind) {
          p.error_at(*v, "expected entity kind external, process, or datastore");
          return;
        }
        e.kind = *kind;
      } else if (key.text == "roles") {
        if (store_sugar) {
          p.error_at(key, "a store cannot carry roles");
          return;
        }
        if (roles_seen) p.error_at(key, "duplicate roles attribute");
        roles_seen = true;
        if (!p.expect_symbol("=")) return;
        if (!parse_roles(p, e.roles)) return;
      } else if (key.text == "label") {
        if (label_seen) p.error_at(key, "duplicate label attribute");
        label_seen = true;
        if (!p.expect_symbol("=")) return;
        if (p.peek().kind != Token::Kind::String) {
          p.error_here("expected quoted label string");
          return;
        }
        e.label = p.advance().text;
      } else {
        p.error_at(key, "unknown attribute '" + key.text + "'");
        return;
      }
    }

    if (!store_sugar && !kind_seen) {
      p.error_at(*id, "entity '" + e.id + "' is missing kind=");
      return;
    }
    if (p.accept_symbol(":")) {
      if (!parse_annotations(p, e.annotations, "entity")) return;
    }
    p.require_line_end();
    if (p.ok()) diagram_.entities.push_back(std::move(e));
  }

  bool parse_roles(LineParser& p, RoleSet& roles) {
    while (true) {
      auto tok = p.expect_word("GDPR role (DS, DC, DP, SA, or RM)");
      if (!tok) return false;
      auto role = gdpr_role_from_token(tok->text);
      if (!role) {
        p.error_at(*tok, "unknown role token '" + tok->text + "'");
        // re-tag: role errors get their own code
        diags_.back().code = std::string(codes::kBadRole);
        return false;
      }
      roles.insert(*role);
      if (!p.accept_symbol(",")) return true;
    }
  }

  bool parse_annotations(LineParser& p, std::vector<std::string>& out, std::string_view owner) {
    while (true) {
      auto tok = p.expect_word("annotation token");
      if (!tok) return false;
      std::string token(expand_annotation_alias(tok->text));
      if (!is_known_annotation(token)) {
        p.warn_at(*tok, codes::kUnknownAnnotation,
                  "unknown annotation '" + tok->text + "' on " + std::string(owner) +
                      " (kept, but it will produce no facts)");
      }
      if (std::find(out.begin(), out.end(), token) != out.end()) {
        p.warn_at(*tok, codes::kDupAnnotationParse,
                  "duplicate annotation '" + token + "' ignored");
      } else {
        out.push_back(std::move(token));
      }
      if (!p.accept_symbol(",")) return true;
    }
  }

  void parse_flow(LineParser& p) {
    p.advance();  // keyword
    auto first = p.expect_word("flow source entity id");
    if (!first) return;

    Flow f;
    Token src_tok = *first;
    if (p.peek().kind == Token::Kind::Word) {
      // explicit id form: flow <id> <src> -> <dst>
      f.id = first->text;
      auto src = p.expect_word("flow source entity id");
      if (!src) return;
      src_tok = *src;
    }
    f.source = src_tok.text;
    f.span = p.span_of(src_tok);
    if (f.id.empty()) f.span = p.span_of(*first);

    if (!p.expect_symbol("->")) return;
    auto dst = p.expect_word("flow target entity id");
    if (!dst) return;
    f.target = dst->text;

    if (p.accept_symbol(":")) {
      if (!parse_annotations(p, f.annotations, "flow")) return;
    }
    p.require_line_end();
    if (!p.ok()) return;
    if (!f.id.empty()) explicit_flow_ids_.insert(f.id);
    diagram_.flows.push_back(std::move(f));
  }

  void parse_boundary(LineParser& p) {
    p.advance();  // keyword
    auto id = p.expect_word("boundary id");
    if (!id) return;

    TrustBoundary tb;
    tb.id = id->text;
    tb.span = p.span_of(*id);

    auto key = p.expect_word("kind");
    if (!key) return;
    if (key->text != "kind") {
      p.error_at(*key, "expected kind=generic or kind=compliance");
      return;
    }
    if (!p.expect_symbol("=")) return;
    auto v = p.expect_word("boundary kind (generic or compliance)");
    if (!v) return;
    auto kind = boundary_kind_from_token(v->text);
    if (!kind) {
      p.error_at(*v, "expected boundary kind generic or compliance");
      return;
    }
    tb.kind = *kind;

    if (!p.expect_symbol("{")) return;
    while (p.peek().kind == Token::Kind::Word) tb.members.push_back(p.advance().text);
    if (!p.expect_symbol("}")) return;
    p.require_line_end();

    std::sort(tb.members.begin(), tb.members.end());
    tb.members.erase(std::unique(tb.members.begin(), tb.members.end()), tb.members.end());
    if (p.ok()) diagram_.boundaries.push_back(std::move(tb));
  }

  void assign_auto_flow_ids() {
    int next = 1;
    for (Flow& f : diagram_.flows) {
      if (!f.id.empty()) continue;
      std::string candidate;
      do {
        candidate = "f" + std::to_string(next++);
      } while (explicit_flow_ids_.contains(candidate));
      f.id = candidate;
    }
  }

  std::string_view text_;
  Diagram diagram_;
  std::set<std::string> explicit_flow_ids_;
  std::vector<Diagnostic> diags_;
};

std::string quote_label(const std::string& label) {
  std::string out = "\"";
  for (char c : label) {
    if (c == '\\' || c == '"') {
      out.push_back('\\');
      out.push_back(c);
    } else if (c == '\n') {
      out += "\\n";
    } else {
      out.push_back(c);
    }
  }
  out.push_back('"');
  return out;
}

void append_annotations(std::string& line, const std::vector<std::string>& annotations) {
  if (annotations.empty()) return;
  line += " :";
  for (std::size_t i = 0; i < annotations.size(); ++i) {
    line += i == 0 ? " " : ", ";
    line += annotations[i];
  }
}

}  // namespace

DiagramParseResult parse_diagram(std::string_view text) { return DiagramParser(text).run(); }

std::string serialize_diagram(const Diagram& d) {
  const Diagram c = d.canonicalized();
  std::string out;

  for (const Entity& e : c.entities) {
    std::string line;
    if (e.kind == EntityKind::DataStore) {
      line = "store " + e.id;
    } else {
      line = "entity " + e.id + " kind=" + std::string(to_token(e.kind));
      if (!e.roles.empty()) {
        line += " roles=";
        const auto roles = e.roles.to_vector();
        for (std::size_t i = 0; i < roles.size(); ++i) {
          if (i) line += ",";
          line += to_token(roles[i]);
        }
      }
    }
    if (!e.label.empty()) line += " label=" + quote_label(e.label);
    append_annotations(line, e.annotations);
    out += line;
    out += '\n';
  }

  for (const TrustBoundary& tb : c.boundaries) {
    std::string line = "boundary " + tb.id + " kind=" + std::string(to_token(tb.kind)) + " {";
    for (const std::string& m : tb.members) line += " " + m;
    line += " }";
    out += line;
    out += '\n';
  }

  for (const Flow& f : c.flows) {
    std::string line = "flow " + f.id + " " + f.source + " -> " + f.target;
    append_annotations(line, f.annotations);
    out += line;
    out += '\n';
  }

  return out;
}

}  // namespace gdprtm
