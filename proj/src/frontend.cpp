#include "p2r/frontend.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

namespace p2r {

std::string Diagnostic::to_string() const {
  std::ostringstream os;
  os << file << ":" << line << ":" << col << ": " << message;
  return os.str();
}

namespace {

enum class Tok { Ident, Number, CharLit, StringLit, Punct, End };

struct Token {
  Tok kind = Tok::End;
  std::string text;
  int line = 1;
  int col = 1;
};

const std::set<std::string> kTypeKeywords = {
    "void",     "char",  "short", "int",    "long",  "float",
    "double",   "signed", "unsigned", "_Bool", "struct", "union",
    "enum",     "const", "volatile"};

const std::set<std::string> kStorageKeywords = {"static", "extern", "inline",
                                                "register", "__inline"};

const std::set<std::string> kStmtKeywords = {
    "if",   "else",  "switch", "for",   "while", "do",      "return",
    "break", "continue", "goto", "case", "default", "sizeof", "typedef"};

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

class Lexer {
public:
  Lexer(const std::string &text, const std::string &file,
        std::vector<Diagnostic> &diags)
      : text_(text), file_(file), diags_(diags) {}

  std::vector<Token> run() {
    std::vector<Token> out;
    while (true) {
      skip_trivia();
      if (pos_ >= text_.size())
        break;
      Token t;
      t.line = line_;
      t.col = col_;
      char c = text_[pos_];
      if (ident_start(c)) {
        size_t start = pos_;
        while (pos_ < text_.size() && ident_char(text_[pos_]))
          advance();
        t.kind = Tok::Ident;
        t.text = text_.substr(start, pos_ - start);
      } else if (std::isdigit(static_cast<unsigned char>(c)) ||
                 (c == '.' && pos_ + 1 < text_.size() &&
                  std::isdigit(static_cast<unsigned char>(text_[pos_ + 1])))) {
        t.kind = Tok::Number;
        t.text = lex_number();
      } else if (c == '"') {
        t.kind = Tok::StringLit;
        t.text = lex_quoted('"');
      } else if (c == '\'') {
        t.kind = Tok::CharLit;
        t.text = lex_quoted('\'');
      } else {
        t.kind = Tok::Punct;
        t.text = lex_punct();
        if (t.text.empty()) {
          diags_.push_back({file_, t.line, t.col,
                            std::string("unexpected character '") + c + "'"});
          advance();
          continue;
        }
      }
      out.push_back(std::move(t));
    }
    Token eof;
    eof.kind = Tok::End;
    eof.line = line_;
    eof.col = col_;
    out.push_back(eof);
    return out;
  }

private:
  void advance() {
    if (text_[pos_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++pos_;
  }

  void skip_trivia() {
    while (pos_ < text_.size()) {
      char c = text_[pos_];
      if (std::isspace(static_cast<unsigned char>(c))) {
        advance();
      } else if (c == '/' && pos_ + 1 < text_.size() && text_[pos_ + 1] == '/') {
        while (pos_ < text_.size() && text_[pos_] != '\n')
          advance();
      } else if (c == '/' && pos_ + 1 < text_.size() && text_[pos_ + 1] == '*') {
        int l = line_, cc = col_;
        advance();
        advance();
        bool closed = false;
        while (pos_ < text_.size()) {
          if (text_[pos_] == '*' && pos_ + 1 < text_.size() &&
              text_[pos_ + 1] == '/') {
            advance();
            advance();
            closed = true;
            break;
          }
          advance();
        }
        if (!closed)
          diags_.push_back({file_, l, cc, "unterminated block comment"});
      } else if (c == '#') {
        // Inputs are preprocessed; a stray directive line is skipped.
        diags_.push_back({file_, line_, col_, "preprocessor directive skipped"});
        while (pos_ < text_.size() && text_[pos_] != '\n')
          advance();
      } else {
        break;
      }
    }
  }

  std::string lex_number() {
    size_t start = pos_;
    while (pos_ < text_.size() &&
           (ident_char(text_[pos_]) || text_[pos_] == '.' ||
            ((text_[pos_] == '+' || text_[pos_] == '-') && pos_ > start &&
             (text_[pos_ - 1] == 'e' || text_[pos_ - 1] == 'E' ||
              text_[pos_ - 1] == 'p' || text_[pos_ - 1] == 'P'))))
      advance();
    return text_.substr(start, pos_ - start);
  }

  std::string lex_quoted(char quote) {
    size_t start = pos_;
    int l = line_, c = col_;
    advance();
    while (pos_ < text_.size() && text_[pos_] != quote) {
      if (text_[pos_] == '\\' && pos_ + 1 < text_.size())
        advance();
      if (text_[pos_] == '\n') {
        diags_.push_back({file_, l, c, "unterminated literal"});
        return text_.substr(start, pos_ - start);
      }
      advance();
    }
    if (pos_ < text_.size())
      advance();
    else
      diags_.push_back({file_, l, c, "unterminated literal"});
    return text_.substr(start, pos_ - start);
  }

  std::string lex_punct() {
    static const char *three[] = {"<<=", ">>=", "..."};
    static const char *two[] = {"->", "++", "--", "<<", ">>", "<=", ">=",
                                "==", "!=", "&&", "||", "+=", "-=", "*=",
                                "/=", "%=", "&=", "^=", "|="};
    for (const char *p : three)
      if (text_.compare(pos_, 3, p) == 0) {
        advance();
        advance();
        advance();
        return p;
      }
    for (const char *p : two)
      if (text_.compare(pos_, 2, p) == 0) {
        advance();
        advance();
        return p;
      }
    static const std::string singles = "+-*/%<>=!&|^~?:;,.(){}[]";
    char c = text_[pos_];
    if (singles.find(c) != std::string::npos) {
      advance();
      return std::string(1, c);
    }
    return {};
  }

  const std::string &text_;
  std::string file_;
  std::vector<Diagnostic> &diags_;
  size_t pos_ = 0;
  int line_ = 1;
  int col_ = 1;
};

struct ParseBail {
  std::string message;
  int line;
  int col;
};

/// Builds one AstTree. Nodes are renumbered to DFS pre-order before the
/// tree is returned, which fixes serialization order.
class TreeBuilder {
public:
  explicit TreeBuilder(std::string file) : file_(std::move(file)) {}

  NodeId make(NodeKind kind, std::optional<std::string> value, Loc loc) {
    AstNode n;
    n.id = static_cast<NodeId>(nodes_.size());
    n.kind = kind;
    n.value = std::move(value);
    n.loc = std::move(loc);
    nodes_.push_back(std::move(n));
    return nodes_.back().id;
  }

  void attach(NodeId parent, NodeId child, std::string role) {
    nodes_[parent].children.push_back(child);
    nodes_[child].role = std::move(role);
    widen(parent, nodes_[child].loc);
  }

  void widen(NodeId id, const Loc &loc) {
    Loc &l = nodes_[id].loc;
    if (loc.start_line < l.start_line ||
        (loc.start_line == l.start_line && loc.start_col < l.start_col)) {
      l.start_line = loc.start_line;
      l.start_col = loc.start_col;
    }
    if (loc.end_line > l.end_line ||
        (loc.end_line == l.end_line && loc.end_col > l.end_col)) {
      l.end_line = loc.end_line;
      l.end_col = loc.end_col;
    }
  }

  AstNode &node(NodeId id) { return nodes_[id]; }

  AstTree finish(NodeId root, std::string function_name,
                 std::vector<DeclaredVar> vars) {
    AstTree tree;
    tree.function_name = std::move(function_name);
    tree.declared_vars = std::move(vars);
    // Renumber to DFS pre-order.
    std::vector<NodeId> order;
    order.reserve(nodes_.size());
    std::vector<NodeId> stack{root};
    while (!stack.empty()) {
      NodeId id = stack.back();
      stack.pop_back();
      order.push_back(id);
      const auto &c = nodes_[id].children;
      stack.insert(stack.end(), c.rbegin(), c.rend());
    }
    std::vector<NodeId> remap(nodes_.size(), kInvalidNode);
    for (NodeId i = 0; i < order.size(); ++i)
      remap[order[i]] = i;
    tree.nodes.resize(order.size());
    for (NodeId i = 0; i < order.size(); ++i) {
      AstNode n = std::move(nodes_[order[i]]);
      n.id = i;
      for (NodeId &c : n.children)
        c = remap[c];
      tree.nodes[i] = std::move(n);
    }
    tree.root = 0;
    return tree;
  }

  const std::string &file() const { return file_; }

private:
  std::string file_;
  std::vector<AstNode> nodes_;
};

class Parser {
public:
  Parser(std::vector<Token> toks, std::string file,
         std::vector<Diagnostic> &diags)
      : toks_(std::move(toks)), file_(std::move(file)), diags_(diags) {}

  std::vector<AstTree> parse_all() {
    std::vector<AstTree> out;
    while (!at_end()) {
      size_t before = pos_;
      if (auto fn = try_parse_function())
        out.push_back(std::move(*fn));
      else
        skip_top_level_item();
      if (pos_ == before)
        ++pos_; // never stall
    }
    return out;
  }

private:
  // --- token helpers -------------------------------------------------
  const Token &cur() const { return toks_[pos_]; }
  const Token &peek(size_t n = 1) const {
    return toks_[std::min(pos_ + n, toks_.size() - 1)];
  }
  bool at_end() const { return cur().kind == Tok::End; }
  bool is_punct(const char *p) const {
    return cur().kind == Tok::Punct && cur().text == p;
  }
  bool is_ident(const char *s) const {
    return cur().kind == Tok::Ident && cur().text == s;
  }
  Token take() { return toks_[pos_++]; }
  Token expect_punct(const char *p) {
    if (!is_punct(p))
      bail(std::string("expected '") + p + "'");
    return take();
  }

  [[noreturn]] void bail(std::string msg) {
    throw ParseBail{std::move(msg), cur().line, cur().col};
  }

  void diag(const Token &t, std::string msg) {
    diags_.push_back({file_, t.line, t.col, std::move(msg)});
  }

  Loc tok_loc(const Token &t) const {
    int len = static_cast<int>(t.text.size());
    return Loc{file_, t.line, t.col, t.line, t.col + std::max(len - 1, 0)};
  }

  Loc span(const Token &a, const Token &b) const {
    Loc l = tok_loc(a);
    Loc r = tok_loc(b);
    l.end_line = r.end_line;
    l.end_col = r.end_col;
    return l;
  }

  void skip_attributes() {
    while (is_ident("__attribute__") || is_ident("__declspec")) {
      Token t = take();
      diag(t, "attribute skipped");
      if (is_punct("(")) {
        int depth = 0;
        while (!at_end()) {
          if (is_punct("("))
            ++depth;
          else if (is_punct(")")) {
            if (--depth == 0) {
              take();
              break;
            }
          }
          take();
        }
      }
    }
    while (cur().kind == Tok::Ident &&
           (cur().text == "__restrict" || cur().text == "restrict")) {
      diag(cur(), "qualifier skipped");
      take();
    }
  }

  void skip_top_level_item() {
    // Swallow one non-function top-level construct.
    int depth = 0;
    while (!at_end()) {
      if (is_punct("{")) {
        ++depth;
      } else if (is_punct("}")) {
        --depth;
        if (depth <= 0) {
          take();
          if (is_punct(";"))
            take();
          return;
        }
      } else if (is_punct(";") && depth == 0) {
        take();
        return;
      }
      take();
    }
  }

  // --- type recognition ----------------------------------------------
  bool is_type_keyword(const Token &t) const {
    return t.kind == Tok::Ident && kTypeKeywords.count(t.text) > 0;
  }

  bool is_plain_ident(const Token &t) const {
    return t.kind == Tok::Ident && kTypeKeywords.count(t.text) == 0 &&
           kStorageKeywords.count(t.text) == 0 && kStmtKeywords.count(t.text) == 0;
  }

  // Collect declaration specifiers; returns spelled tokens. An
  // identifier counts as a typedef name only when allow_typedef_name.
  std::vector<std::string> parse_specifiers(bool allow_typedef_name) {
    std::vector<std::string> spec;
    bool saw_typedef_name = false;
    while (true) {
      skip_attributes();
      if (is_type_keyword(cur())) {
        std::string word = take().text;
        if (word == "struct" || word == "union" || word == "enum") {
          spec.push_back(word);
          if (cur().kind == Tok::Ident)
            spec.push_back(take().text);
          continue;
        }
        spec.push_back(word);
        if (word != "const" && word != "volatile")
          saw_typedef_name = true; // a real type word seen
        continue;
      }
      if (allow_typedef_name && !saw_typedef_name && is_plain_ident(cur()) &&
          (peek().kind == Tok::Ident || (peek().kind == Tok::Punct && peek().text == "*"))) {
        spec.push_back(take().text);
        saw_typedef_name = true;
        continue;
      }
      break;
    }
    return spec;
  }

  static std::string join(const std::vector<std::string> &parts) {
    std::string out;
    for (const auto &p : parts) {
      if (!out.empty())
        out += ' ';
      out += p;
    }
    return out;
  }

  // --- function recognition -------------------------------------------
  std::optional<AstTree> try_parse_function() {
    size_t save = pos_;
    while (cur().kind == Tok::Ident && kStorageKeywords.count(cur().text))
      take();
    skip_attributes();
    auto spec = parse_specifiers(true);
    if (spec.empty()) {
      pos_ = save;
      return std::nullopt;
    }
    while (is_punct("*")) {
      spec.push_back("*");
      take();
    }
    if (!is_plain_ident(cur()) || !(peek().kind == Tok::Punct && peek().text == "(")) {
      pos_ = save;
      return std::nullopt;
    }
    Token name_tok = take();
    take(); // '('
    // Look ahead past the parameter list.
    size_t param_start = pos_;
    int depth = 1;
    while (!at_end() && depth > 0) {
      if (is_punct("("))
        ++depth;
      else if (is_punct(")"))
        --depth;
      take();
    }
    skip_attributes();
    if (!is_punct("{")) {
      // Prototype or something else entirely.
      pos_ = save;
      return std::nullopt;
    }

    TreeBuilder b(file_);
    vars_.clear();
    builder_ = &b;
    NodeId fn = b.make(NodeKind::Function, name_tok.text, tok_loc(name_tok));

    size_t body_pos = pos_;
    pos_ = param_start;
    try {
      parse_param_list(fn);
    } catch (const ParseBail &e) {
      diags_.push_back({file_, e.line, e.col,
                        "function '" + name_tok.text +
                            "' dropped: parameter list: " + e.message});
      pos_ = body_pos;
      skip_balanced_braces();
      builder_ = nullptr;
      return std::nullopt;
    }
    pos_ = body_pos;
    try {
      NodeId body = parse_block();
      b.attach(fn, body, "body");
    } catch (const ParseBail &e) {
      diags_.push_back({file_, e.line, e.col,
                        "function '" + name_tok.text +
                            "' dropped: " + e.message});
      skip_balanced_braces();
      builder_ = nullptr;
      return std::nullopt;
    }
    AstTree tree = b.finish(fn, name_tok.text, vars_);
    collect_global_refs(tree);
    builder_ = nullptr;
    return tree;
  }

  void skip_balanced_braces() {
    int depth = 0;
    while (!at_end()) {
      if (is_punct("{"))
        ++depth;
      else if (is_punct("}")) {
        --depth;
        if (depth <= 0) {
          take();
          return;
        }
      }
      take();
    }
  }

  void parse_param_list(NodeId fn) {
    if (is_punct(")")) {
      take();
      return;
    }
    if (is_ident("void") && peek().kind == Tok::Punct && peek().text == ")") {
      take();
      take();
      return;
    }
    int index = 0;
    while (true) {
      if (is_punct("...")) {
        diag(cur(), "variadic parameters ignored");
        take();
      } else {
        auto spec = parse_specifiers(true);
        int stars = 0;
        while (is_punct("*")) {
          ++stars;
          take();
        }
        skip_attributes();
        if (is_plain_ident(cur())) {
          Token name = take();
          std::string suffix;
          while (is_punct("[")) {
            Token open = take();
            std::string dim;
            while (!is_punct("]") && !at_end())
              dim += take().text;
            expect_punct("]");
            (void)open;
            suffix += "[" + dim + "]";
          }
          std::string type = join(spec);
          if (stars)
            type += " " + std::string(stars, '*');
          if (!suffix.empty())
            type += suffix;
          NodeId p = builder_->make(NodeKind::Parameter, name.text, tok_loc(name));
          builder_->attach(fn, p, "param");
          vars_.push_back({name.text, type, tok_loc(name), Storage::Parameter});
          ++index;
        } else if (!spec.empty()) {
          diag(cur(), "unnamed parameter skipped");
        } else {
          bail("cannot parse parameter");
        }
      }
      if (is_punct(",")) {
        take();
        continue;
      }
      expect_punct(")");
      break;
    }
  }

  // --- statements ------------------------------------------------------
  NodeId parse_block() {
    Token open = expect_punct("{");
    NodeId block = builder_->make(NodeKind::BlockStmt, std::nullopt, tok_loc(open));
    int index = 0;
    while (!is_punct("}")) {
      if (at_end())
        bail("unterminated block");
      NodeId stmt = parse_statement();
      builder_->attach(block, stmt, "stmt");
    }
    Token close = take();
    builder_->widen(block, tok_loc(close));
    return block;
  }

  NodeId parse_statement() {
    size_t start = pos_;
    try {
      return parse_statement_inner();
    } catch (const ParseBail &e) {
      diags_.push_back({file_, e.line, e.col, "statement degraded: " + e.message});
      pos_ = start;
      return degraded_statement();
    }
  }

  NodeId degraded_statement() {
    // Generic degradation: swallow to ';' (tracking nesting), keep
    // the raw spelling on a childless BinaryExpr inside an ExprStmt.
    Token first = cur();
    std::string raw;
    int depth = 0;
    Token last = first;
    while (!at_end()) {
      if (is_punct("{") || is_punct("(") || is_punct("["))
        ++depth;
      else if (is_punct("}") || is_punct(")") || is_punct("]")) {
        if (depth == 0 && is_punct("}"))
          break;
        --depth;
      }
      last = cur();
      if (!raw.empty())
        raw += ' ';
      raw += take().text;
      if (last.kind == Tok::Punct && last.text == ";" && depth <= 0)
        break;
    }
    NodeId stmt = builder_->make(NodeKind::ExprStmt, std::nullopt, span(first, last));
    NodeId payload = builder_->make(NodeKind::BinaryExpr, raw, span(first, last));
    builder_->attach(stmt, payload, "expr");
    return stmt;
  }

  NodeId parse_statement_inner() {
    skip_attributes();
    Token first = cur();
    if (is_punct("{"))
      return parse_block();
    if (is_punct(";")) {
      take();
      return builder_->make(NodeKind::ExprStmt, std::nullopt, tok_loc(first));
    }
    if (is_ident("if")) {
      take();
      expect_punct("(");
      NodeId cond = parse_expression();
      expect_punct(")");
      NodeId then = parse_statement();
      NodeId stmt = builder_->make(NodeKind::IfStmt, std::nullopt, tok_loc(first));
      builder_->attach(stmt, cond, "condition");
      builder_->attach(stmt, then, "then-body");
      if (is_ident("else")) {
        take();
        NodeId els = parse_statement();
        builder_->attach(stmt, els, "else-body");
      }
      return stmt;
    }
    if (is_ident("switch")) {
      take();
      expect_punct("(");
      NodeId cond = parse_expression();
      expect_punct(")");
      NodeId body = parse_statement();
      NodeId stmt = builder_->make(NodeKind::SwitchStmt, std::nullopt, tok_loc(first));
      builder_->attach(stmt, cond, "condition");
      builder_->attach(stmt, body, "body");
      return stmt;
    }
    if (is_ident("while")) {
      take();
      expect_punct("(");
      NodeId cond = parse_expression();
      expect_punct(")");
      NodeId body = parse_statement();
      NodeId stmt = builder_->make(NodeKind::WhileStmt, std::nullopt, tok_loc(first));
      builder_->attach(stmt, cond, "condition");
      builder_->attach(stmt, body, "body");
      return stmt;
    }
    if (is_ident("do")) {
      take();
      NodeId body = parse_statement();
      if (!is_ident("while"))
        bail("expected 'while' after do-body");
      take();
      expect_punct("(");
      NodeId cond = parse_expression();
      expect_punct(")");
      expect_punct(";");
      NodeId stmt = builder_->make(NodeKind::WhileStmt, std::nullopt, tok_loc(first));
      builder_->attach(stmt, body, "body");
      builder_->attach(stmt, cond, "condition");
      return stmt;
    }
    if (is_ident("for")) {
      take();
      expect_punct("(");
      NodeId stmt = builder_->make(NodeKind::ForStmt, std::nullopt, tok_loc(first));
      if (!is_punct(";")) {
        if (starts_declaration())
          builder_->attach(stmt, parse_declaration_no_semi(), "init");
        else
          builder_->attach(stmt, parse_expression(), "init");
      }
      expect_punct(";");
      if (!is_punct(";"))
        builder_->attach(stmt, parse_expression(), "condition");
      expect_punct(";");
      if (!is_punct(")"))
        builder_->attach(stmt, parse_expression(), "update");
      expect_punct(")");
      builder_->attach(stmt, parse_statement(), "body");
      return stmt;
    }
    if (is_ident("return")) {
      take();
      NodeId stmt = builder_->make(NodeKind::ReturnStmt, std::nullopt, tok_loc(first));
      if (!is_punct(";"))
        builder_->attach(stmt, parse_expression(), "value");
      Token semi = expect_punct(";");
      builder_->widen(stmt, tok_loc(semi));
      return stmt;
    }
    if (is_ident("break")) {
      take();
      expect_punct(";");
      return builder_->make(NodeKind::BreakStmt, std::nullopt, tok_loc(first));
    }
    if (is_ident("continue")) {
      take();
      expect_punct(";");
      return builder_->make(NodeKind::ContinueStmt, std::nullopt, tok_loc(first));
    }
    if (is_ident("goto")) {
      take();
      if (cur().kind != Tok::Ident)
        bail("expected label after goto");
      Token label = take();
      expect_punct(";");
      return builder_->make(NodeKind::GotoStmt, label.text, span(first, label));
    }
    if (is_ident("case") || is_ident("default")) {
      std::string spelled = take().text;
      if (spelled == "case") {
        while (!is_punct(":") && !at_end())
          spelled += " " + take().text;
      }
      Token colon = expect_punct(":");
      (void)colon;
      NodeId inner = parse_statement();
      NodeId stmt = builder_->make(NodeKind::LabelStmt, spelled, tok_loc(first));
      builder_->attach(stmt, inner, "stmt");
      return stmt;
    }
    if (cur().kind == Tok::Ident && peek().kind == Tok::Punct &&
        peek().text == ":" && kStmtKeywords.count(cur().text) == 0) {
      Token label = take();
      take(); // ':'
      NodeId inner = parse_statement();
      NodeId stmt = builder_->make(NodeKind::LabelStmt, label.text, tok_loc(first));
      builder_->attach(stmt, inner, "stmt");
      return stmt;
    }
    if (is_ident("typedef")) {
      diag(cur(), "typedef inside function skipped");
      while (!is_punct(";") && !at_end())
        take();
      expect_punct(";");
      return builder_->make(NodeKind::ExprStmt, std::nullopt, tok_loc(first));
    }
    if (starts_declaration()) {
      NodeId decl = parse_declaration_no_semi();
      Token semi = expect_punct(";");
      builder_->widen(decl, tok_loc(semi));
      return decl;
    }
    NodeId expr = parse_expression();
    Token semi = expect_punct(";");
    NodeId stmt = builder_->make(NodeKind::ExprStmt, std::nullopt,
                                 builder_->node(expr).loc);
    builder_->attach(stmt, expr, "expr");
    builder_->widen(stmt, tok_loc(semi));
    return stmt;
  }

  bool starts_declaration() const {
    const Token &t = toks_[pos_];
    if (t.kind != Tok::Ident)
      return false;
    if (kTypeKeywords.count(t.text))
      return true;
    if (kStorageKeywords.count(t.text))
      return true;
    if (kStmtKeywords.count(t.text))
      return false;
    // `Name * ident` or `Name ident` is taken as a declaration.
    size_t p = pos_ + 1;
    int stars = 0;
    while (toks_[p].kind == Tok::Punct && toks_[p].text == "*") {
      ++p;
      ++stars;
    }
    if (toks_[p].kind != Tok::Ident || kStmtKeywords.count(toks_[p].text))
      return false;
    if (kTypeKeywords.count(toks_[p].text))
      return stars == 0; // e.g. "unsigned" after a typedef name: improbable
    const Token &after = toks_[p + 1];
    if (after.kind != Tok::Punct)
      return false;
    return after.text == "=" || after.text == ";" || after.text == "," ||
           after.text == "[";
  }

  NodeId parse_declaration_no_semi() {
    Token first = cur();
    while (cur().kind == Tok::Ident && kStorageKeywords.count(cur().text)) {
      diag(cur(), "storage-class specifier skipped");
      take();
    }
    auto spec = parse_specifiers(true);
    if (spec.empty())
      bail("expected declaration specifiers");
    NodeId decl = builder_->make(NodeKind::DeclStmt, std::nullopt, tok_loc(first));
    int index = 0;
    while (true) {
      int stars = 0;
      while (is_punct("*")) {
        ++stars;
        take();
      }
      if (!is_plain_ident(cur()))
        bail("expected declarator name");
      Token name = take();
      std::string suffix;
      while (is_punct("[")) {
        take();
        std::string dim;
        while (!is_punct("]") && !at_end())
          dim += take().text;
        expect_punct("]");
        suffix += "[" + dim + "]";
      }
      std::string type = join(spec);
      if (stars)
        type += " " + std::string(stars, '*');
      type += suffix;
      NodeId var = builder_->make(NodeKind::LocalVariable, name.text, tok_loc(name));
      builder_->attach(decl, var, "decl");
      vars_.push_back({name.text, type, tok_loc(name), Storage::Local});
      if (is_punct("=")) {
        Token eq = take();
        NodeId expr = parse_assignment();
        NodeId init = builder_->make(NodeKind::Initializer, std::nullopt, tok_loc(eq));
        builder_->attach(init, expr, "expr");
        builder_->attach(var, init, "init");
      }
      if (is_punct(",")) {
        take();
        continue;
      }
      break;
    }
    return decl;
  }

  // --- expressions ------------------------------------------------------
  NodeId parse_expression() {
    NodeId first = parse_assignment();
    if (!is_punct(","))
      return first;
    NodeId comma = builder_->make(NodeKind::CommaExpr, std::nullopt,
                                  builder_->node(first).loc);
    int index = 0;
    builder_->attach(comma, first, "operand");
    while (is_punct(",")) {
      take();
      NodeId next = parse_assignment();
      builder_->attach(comma, next, "operand");
    }
    return comma;
  }

  NodeId parse_assignment() {
    NodeId lhs = parse_conditional();
    static const std::set<std::string> assign_ops = {
        "=", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "<<=", ">>="};
    if (cur().kind == Tok::Punct && assign_ops.count(cur().text)) {
      Token op = take();
      NodeId rhs = parse_assignment();
      NodeId node = builder_->make(NodeKind::AssignExpr, op.text,
                                   builder_->node(lhs).loc);
      builder_->attach(node, lhs, "lhs");
      builder_->attach(node, rhs, "rhs");
      return node;
    }
    return lhs;
  }

  NodeId parse_conditional() {
    NodeId cond = parse_binary(0);
    if (!is_punct("?"))
      return cond;
    take();
    NodeId then_e = parse_expression();
    expect_punct(":");
    NodeId else_e = parse_conditional();
    NodeId node = builder_->make(NodeKind::ConditionalExpr, std::nullopt,
                                 builder_->node(cond).loc);
    builder_->attach(node, cond, "condition");
    builder_->attach(node, then_e, "then-expr");
    builder_->attach(node, else_e, "else-expr");
    return node;
  }

  struct BinOp {
    const char *spelling;
    int level;
  };

  // Levels: 0 || ; 1 && ; 2 | ; 3 ^ ; 4 & ; 5 == != ; 6 < <= > >= ;
  // 7 << >> ; 8 + - ; 9 * / %
  static const BinOp *binop_at(const Token &t) {
    static const BinOp ops[] = {
        {"||", 0}, {"&&", 1}, {"|", 2},  {"^", 3},  {"&", 4},
        {"==", 5}, {"!=", 5}, {"<", 6},  {"<=", 6}, {">", 6},
        {">=", 6}, {"<<", 7}, {">>", 7}, {"+", 8},  {"-", 8},
        {"*", 9},  {"/", 9},  {"%", 9},
    };
    if (t.kind != Tok::Punct)
      return nullptr;
    for (const auto &op : ops)
      if (t.text == op.spelling)
        return &op;
    return nullptr;
  }

  NodeId parse_binary(int min_level) {
    if (min_level > 9)
      return parse_unary();
    NodeId lhs = parse_binary(min_level + 1);
    while (true) {
      const BinOp *op = binop_at(cur());
      if (!op || op->level != min_level)
        return lhs;
      Token tok = take();
      NodeId rhs = parse_binary(min_level + 1);
      NodeId node =
          builder_->make(NodeKind::BinaryExpr, tok.text, builder_->node(lhs).loc);
      builder_->attach(node, lhs, "lhs");
      builder_->attach(node, rhs, "rhs");
      lhs = node;
    }
  }

  bool looks_like_type_in_parens(size_t p, size_t *close_out) const {
    // p points at the token after '('. Accept: type keyword ...; or
    // IDENT '*'* ')' (pointer-to-typedef casts).
    size_t q = p;
    bool keyword = false;
    if (toks_[q].kind == Tok::Ident && kTypeKeywords.count(toks_[q].text))
      keyword = true;
    else if (!is_plain_ident(toks_[q]))
      return false;
    ++q;
    if (keyword) {
      while (toks_[q].kind == Tok::Ident &&
             (kTypeKeywords.count(toks_[q].text) || is_plain_ident(toks_[q])))
        ++q;
      while (toks_[q].kind == Tok::Punct && toks_[q].text == "*")
        ++q;
      if (toks_[q].kind == Tok::Punct && toks_[q].text == ")") {
        *close_out = q;
        return true;
      }
      return false;
    }
    int stars = 0;
    while (toks_[q].kind == Tok::Punct && toks_[q].text == "*") {
      ++q;
      ++stars;
    }
    if (stars > 0 && toks_[q].kind == Tok::Punct && toks_[q].text == ")") {
      *close_out = q;
      return true;
    }
    return false;
  }

  std::string spell_range(size_t from, size_t to) const {
    std::string out;
    for (size_t i = from; i < to; ++i) {
      if (!out.empty() && toks_[i].text != "*")
        out += ' ';
      else if (!out.empty() && toks_[i].text == "*" && toks_[i - 1].text != "*")
        out += ' ';
      out += toks_[i].text;
    }
    return out;
  }

  NodeId parse_unary() {
    Token first = cur();
    if (is_punct("!") || is_punct("~") || is_punct("-") || is_punct("+") ||
        is_punct("*") || is_punct("&") || is_punct("++") || is_punct("--")) {
      Token op = take();
      NodeId operand = parse_unary();
      NodeId node = builder_->make(NodeKind::UnaryExpr, op.text, tok_loc(op));
      builder_->attach(node, operand, "operand");
      return node;
    }
    if (is_ident("sizeof")) {
      take();
      if (is_punct("(")) {
        size_t close = 0;
        if (looks_like_type_in_parens(pos_ + 1, &close)) {
          take(); // '('
          std::string type = spell_range(pos_, close);
          pos_ = close;
          Token closing = take();
          return builder_->make(NodeKind::SizeofExpr, type, span(first, closing));
        }
      }
      NodeId operand = parse_unary();
      NodeId node = builder_->make(NodeKind::SizeofExpr, std::nullopt, tok_loc(first));
      builder_->attach(node, operand, "operand");
      return node;
    }
    if (is_punct("(")) {
      size_t close = 0;
      if (looks_like_type_in_parens(pos_ + 1, &close)) {
        take(); // '('
        std::string type = spell_range(pos_, close);
        pos_ = close;
        take(); // ')'
        NodeId operand = parse_unary();
        NodeId node = builder_->make(NodeKind::CastExpr, type, tok_loc(first));
        builder_->attach(node, operand, "operand");
        return node;
      }
    }
    return parse_postfix();
  }

  NodeId parse_postfix() {
    NodeId node = parse_primary();
    while (true) {
      if (is_punct("(")) {
        take();
        // Callee spelling: a direct call uses the identifier, anything
        // else keeps the spelled expression.
        const AstNode &callee = builder_->node(node);
        std::string name = callee.kind == NodeKind::VariableAccess
                               ? *callee.value
                               : spelled_of(node);
        NodeId call = builder_->make(NodeKind::FunctionCall, name,
                                     builder_->node(node).loc);
        builder_->attach(call, node, "callee");
        int index = 0;
        if (!is_punct(")")) {
          while (true) {
            NodeId arg = parse_assignment();
            builder_->attach(call, arg, "argument[" + std::to_string(index++) + "]");
            if (is_punct(",")) {
              take();
              continue;
            }
            break;
          }
        }
        Token close = expect_punct(")");
        builder_->widen(call, tok_loc(close));
        node = call;
      } else if (is_punct("[")) {
        take();
        NodeId index = parse_expression();
        Token close = expect_punct("]");
        NodeId sub = builder_->make(NodeKind::ArraySubscript, std::nullopt,
                                    builder_->node(node).loc);
        builder_->attach(sub, node, "base");
        builder_->attach(sub, index, "index");
        builder_->widen(sub, tok_loc(close));
        node = sub;
      } else if (is_punct("->") || is_punct(".")) {
        bool arrow = cur().text == "->";
        take();
        if (cur().kind != Tok::Ident)
          bail("expected field name");
        Token field = take();
        NodeId fa = builder_->make(arrow ? NodeKind::PointerFieldAccess
                                         : NodeKind::DotFieldAccess,
                                   field.text, builder_->node(node).loc);
        builder_->attach(fa, node, "qualifier");
        builder_->widen(fa, tok_loc(field));
        node = fa;
      } else if (is_punct("++") || is_punct("--")) {
        Token op = take();
        NodeId post = builder_->make(NodeKind::UnaryExpr, "post" + op.text,
                                     builder_->node(node).loc);
        builder_->attach(post, node, "operand");
        builder_->widen(post, tok_loc(op));
        node = post;
      } else {
        return node;
      }
    }
  }

  std::string spelled_of(NodeId id) {
    const AstNode &n = builder_->node(id);
    if (n.value)
      return *n.value;
    return kind_name(n.kind);
  }

  NodeId parse_primary() {
    Token t = cur();
    if (t.kind == Tok::Ident) {
      if (kStmtKeywords.count(t.text) || kTypeKeywords.count(t.text))
        bail("unexpected keyword '" + t.text + "' in expression");
      take();
      return builder_->make(NodeKind::VariableAccess, t.text, tok_loc(t));
    }
    if (t.kind == Tok::Number || t.kind == Tok::CharLit) {
      take();
      return builder_->make(NodeKind::Literal, t.text, tok_loc(t));
    }
    if (t.kind == Tok::StringLit) {
      std::string spelled = take().text;
      Token last = t;
      while (cur().kind == Tok::StringLit) {
        last = take();
        spelled += " " + last.text;
      }
      return builder_->make(NodeKind::StringLiteral, spelled, span(t, last));
    }
    if (is_punct("(")) {
      take();
      NodeId inner = parse_expression();
      expect_punct(")");
      return inner;
    }
    bail("cannot parse expression");
  }

  void collect_global_refs(AstTree &tree) {
    std::set<std::string> known;
    for (const auto &v : vars_)
      known.insert(v.name);
    for (const auto &n : tree.nodes) {
      if (n.kind != NodeKind::VariableAccess || n.role == "callee")
        continue;
      if (known.count(*n.value))
        continue;
      known.insert(*n.value);
      tree.declared_vars.push_back({*n.value, "", n.loc, Storage::GlobalRef});
    }
  }

  std::vector<Token> toks_;
  std::string file_;
  std::vector<Diagnostic> &diags_;
  size_t pos_ = 0;
  TreeBuilder *builder_ = nullptr;
  std::vector<DeclaredVar> vars_;
};

} // namespace

SourceUnit parse_unit(const std::string &path, const std::string &text) {
  SourceUnit unit;
  unit.path = path;
  unit.text = text;
  Lexer lexer(text, path, unit.diagnostics);
  Parser parser(lexer.run(), path, unit.diagnostics);
  unit.functions = parser.parse_all();
  return unit;
}

AstTree parse_function(const std::string &text) {
  SourceUnit unit = parse_unit("<fixture>", text);
  if (unit.functions.size() != 1) {
    std::string msg = "expected exactly one function, found " +
                      std::to_string(unit.functions.size());
    for (const auto &d : unit.diagnostics)
      msg += "; " + d.to_string();
    throw ArityError(msg);
  }
  return std::move(unit.functions.front());
}

namespace {

class Renderer {
public:
  explicit Renderer(const AstTree &tree) : tree_(tree) {}

  std::string run() {
    const AstNode &fn = tree_.node(tree_.root);
    out_ << return_type() << " " << *fn.value << "(";
    bool first = true;
    NodeId body = kInvalidNode;
    for (NodeId c : fn.children) {
      const AstNode &child = tree_.node(c);
      if (child.kind == NodeKind::Parameter) {
        if (!first)
          out_ << ", ";
        first = false;
        const DeclaredVar *v = tree_.find_var(*child.value);
        out_ << (v && !v->declared_type.empty() ? v->declared_type : "int")
             << " " << *child.value;
      } else {
        body = c;
      }
    }
    if (first)
      out_ << "void";
    out_ << ")\n";
    if (body != kInvalidNode)
      stmt(body, 0);
    else
      out_ << "{\n}\n";
    return out_.str();
  }

private:
  std::string return_type() const { return "int"; }

  void indent(int n) {
    for (int i = 0; i < n; ++i)
      out_ << "    ";
  }

  void stmt(NodeId id, int depth) {
    const AstNode &n = tree_.node(id);
    switch (n.kind) {
    case NodeKind::BlockStmt:
      indent(depth);
      out_ << "{\n";
      for (NodeId c : n.children)
        stmt(c, depth + 1);
      indent(depth);
      out_ << "}\n";
      break;
    case NodeKind::IfStmt: {
      indent(depth);
      out_ << "if (";
      expr(child_by_role(n, "condition"));
      out_ << ")\n";
      stmt_or_block(child_by_role(n, "then-body"), depth);
      if (NodeId e = child_by_role_opt(n, "else-body"); e != kInvalidNode) {
        indent(depth);
        out_ << "else\n";
        stmt_or_block(e, depth);
      }
      break;
    }
    case NodeKind::SwitchStmt:
      indent(depth);
      out_ << "switch (";
      expr(child_by_role(n, "condition"));
      out_ << ")\n";
      stmt_or_block(child_by_role(n, "body"), depth);
      break;
    case NodeKind::WhileStmt:
      if (!n.children.empty() && tree_.node(n.children[0]).role == "body") {
        indent(depth);
        out_ << "do\n";
        stmt_or_block(n.children[0], depth);
        indent(depth);
        out_ << "while (";
        expr(child_by_role(n, "condition"));
        out_ << ");\n";
      } else {
        indent(depth);
        out_ << "while (";
        expr(child_by_role(n, "condition"));
        out_ << ")\n";
        stmt_or_block(child_by_role(n, "body"), depth);
      }
      break;
    case NodeKind::ForStmt: {
      indent(depth);
      out_ << "for (";
      if (NodeId init = child_by_role_opt(n, "init"); init != kInvalidNode) {
        if (tree_.node(init).kind == NodeKind::DeclStmt)
          decl_inline(init);
        else
          expr(init);
      }
      out_ << "; ";
      if (NodeId c = child_by_role_opt(n, "condition"); c != kInvalidNode)
        expr(c);
      out_ << "; ";
      if (NodeId u = child_by_role_opt(n, "update"); u != kInvalidNode)
        expr(u);
      out_ << ")\n";
      stmt_or_block(child_by_role(n, "body"), depth);
      break;
    }
    case NodeKind::ReturnStmt:
      indent(depth);
      out_ << "return";
      if (!n.children.empty()) {
        out_ << " ";
        expr(n.children[0]);
      }
      out_ << ";\n";
      break;
    case NodeKind::ExprStmt:
      indent(depth);
      if (!n.children.empty())
        expr(n.children[0]);
      out_ << ";\n";
      break;
    case NodeKind::DeclStmt:
      indent(depth);
      decl_inline(id);
      out_ << ";\n";
      break;
    case NodeKind::LabelStmt:
      indent(depth > 0 ? depth - 1 : 0);
      out_ << *n.value << ":\n";
      if (!n.children.empty())
        stmt(n.children[0], depth);
      break;
    case NodeKind::GotoStmt:
      indent(depth);
      out_ << "goto " << *n.value << ";\n";
      break;
    case NodeKind::BreakStmt:
      indent(depth);
      out_ << "break;\n";
      break;
    case NodeKind::ContinueStmt:
      indent(depth);
      out_ << "continue;\n";
      break;
    default:
      indent(depth);
      expr(id);
      out_ << ";\n";
      break;
    }
  }

  void stmt_or_block(NodeId id, int depth) {
    if (tree_.node(id).kind == NodeKind::BlockStmt)
      stmt(id, depth);
    else
      stmt(id, depth + 1);
  }

  void decl_inline(NodeId id) {
    const AstNode &n = tree_.node(id);
    bool first = true;
    std::string base;
    for (NodeId c : n.children) {
      const AstNode &var = tree_.node(c);
      const DeclaredVar *v = tree_.find_var(*var.value);
      std::string type = v && !v->declared_type.empty() ? v->declared_type : "int";
      if (first) {
        out_ << type << " " << *var.value;
        base = type;
        first = false;
      } else {
        // Shared specifiers; re-spell the pointer decor per declarator.
        out_ << ", " << *var.value;
      }
      if (!var.children.empty()) {
        out_ << " = ";
        expr(tree_.node(var.children[0]).children[0]);
      }
    }
  }

  NodeId child_by_role(const AstNode &n, const char *role) const {
    NodeId id = child_by_role_opt(n, role);
    if (id == kInvalidNode)
      throw std::runtime_error(std::string("render: missing role ") + role);
    return id;
  }

  NodeId child_by_role_opt(const AstNode &n, const char *role) const {
    for (NodeId c : n.children)
      if (tree_.node(c).role == role)
        return c;
    return kInvalidNode;
  }

  void expr(NodeId id) {
    const AstNode &n = tree_.node(id);
    switch (n.kind) {
    case NodeKind::VariableAccess:
      out_ << *n.value;
      break;
    case NodeKind::Literal:
      out_ << *n.value;
      break;
    case NodeKind::StringLiteral:
      out_ << *n.value;
      break;
    case NodeKind::FunctionCall: {
      const AstNode &callee = tree_.node(n.children.at(0));
      if (callee.kind == NodeKind::VariableAccess)
        out_ << *callee.value;
      else {
        out_ << "(";
        expr(n.children.at(0));
        out_ << ")";
      }
      out_ << "(";
      for (size_t i = 1; i < n.children.size(); ++i) {
        if (i > 1)
          out_ << ", ";
        expr(n.children[i]);
      }
      out_ << ")";
      break;
    }
    case NodeKind::PointerFieldAccess:
      expr_wrapped(n.children.at(0));
      out_ << "->" << *n.value;
      break;
    case NodeKind::DotFieldAccess:
      expr_wrapped(n.children.at(0));
      out_ << "." << *n.value;
      break;
    case NodeKind::ArraySubscript:
      expr_wrapped(n.children.at(0));
      out_ << "[";
      expr(n.children.at(1));
      out_ << "]";
      break;
    case NodeKind::AssignExpr:
    case NodeKind::BinaryExpr:
      if (n.children.size() == 2) {
        out_ << "(";
        expr(n.children[0]);
        out_ << " " << *n.value << " ";
        expr(n.children[1]);
        out_ << ")";
      } else {
        // degraded payload: raw spelling
        out_ << *n.value;
      }
      break;
    case NodeKind::UnaryExpr:
      if (n.value->rfind("post", 0) == 0) {
        expr_wrapped(n.children.at(0));
        out_ << n.value->substr(4);
      } else {
        out_ << "(" << *n.value;
        if (*n.value == "-" || *n.value == "+" || ident_start((*n.value)[0]))
          out_ << " ";
        expr(n.children.at(0));
        out_ << ")";
      }
      break;
    case NodeKind::CastExpr:
      out_ << "((" << *n.value << ")";
      expr_wrapped(n.children.at(0));
      out_ << ")";
      break;
    case NodeKind::SizeofExpr:
      if (n.value)
        out_ << "sizeof(" << *n.value << ")";
      else {
        out_ << "sizeof(";
        expr(n.children.at(0));
        out_ << ")";
      }
      break;
    case NodeKind::CommaExpr: {
      out_ << "(";
      for (size_t i = 0; i < n.children.size(); ++i) {
        if (i)
          out_ << ", ";
        expr(n.children[i]);
      }
      out_ << ")";
      break;
    }
    case NodeKind::ConditionalExpr:
      out_ << "(";
      expr(n.children.at(0));
      out_ << " ? ";
      expr(n.children.at(1));
      out_ << " : ";
      expr(n.children.at(2));
      out_ << ")";
      break;
    default:
      throw std::runtime_error(std::string("render: unexpected kind ") +
                               kind_name(n.kind));
    }
  }

  void expr_wrapped(NodeId id) {
    const AstNode &n = tree_.node(id);
    bool atom = n.kind == NodeKind::VariableAccess || n.kind == NodeKind::Literal ||
                n.kind == NodeKind::StringLiteral ||
                n.kind == NodeKind::FunctionCall ||
                n.kind == NodeKind::ArraySubscript ||
                n.kind == NodeKind::PointerFieldAccess ||
                n.kind == NodeKind::DotFieldAccess;
    if (atom)
      expr(id);
    else {
      out_ << "(";
      expr(id);
      out_ << ")";
    }
  }

  const AstTree &tree_;
  std::ostringstream out_;
};

} // namespace

std::string render_source(const AstTree &tree) { return Renderer(tree).run(); }

} // namespace p2r
