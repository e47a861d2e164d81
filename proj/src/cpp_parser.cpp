#include <algorithm>
#include <array>
#include <cctype>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>

#include "cref/error.hpp"
#include "cref/syntax_tree.hpp"

namespace cref {

namespace {

// ----------------------------------------------------------------- lexer --

enum class Tok { kIdent, kKeyword, kNumber, kString, kChar, kPunct, kPreproc, kEnd };

struct Token {
  Tok kind = Tok::kEnd;
  std::string text;
  int line = 0;
};

const std::set<std::string, std::less<>>& keywords() {
  static const std::set<std::string, std::less<>> k = {
      "alignas",   "alignof",     "asm",          "auto",       "bool",      "break",
      "case",      "catch",       "char",         "char16_t",   "char32_t",  "char8_t",
      "class",     "const",       "consteval",    "constexpr",  "constinit", "const_cast",
      "continue",  "decltype",    "default",      "delete",     "do",        "double",
      "dynamic_cast", "else",     "enum",         "explicit",   "export",    "extern",
      "false",     "float",       "for",          "friend",     "goto",      "if",
      "inline",    "int",         "long",         "mutable",    "namespace", "new",
      "noexcept",  "nullptr",     "operator",     "private",    "protected", "public",
      "register",  "reinterpret_cast", "return",  "short",      "signed",    "sizeof",
      "static",    "static_assert", "static_cast", "struct",    "switch",    "template",
      "this",      "thread_local", "throw",       "true",       "try",       "typedef",
      "typeid",    "typename",    "union",        "unsigned",   "using",     "virtual",
      "void",      "volatile",    "wchar_t",      "while"};
  return k;
}

bool is_fundamental(std::string_view t) {
  static constexpr std::array<std::string_view, 16> kTypes = {
      "void", "bool", "char", "char8_t", "char16_t", "char32_t", "wchar_t", "short",
      "int",  "long", "float", "double", "signed", "unsigned", "auto", "decltype"};
  return std::find(kTypes.begin(), kTypes.end(), t) != kTypes.end();
}

bool is_decl_qualifier(std::string_view t) {
  static constexpr std::array<std::string_view, 14> kQuals = {
      "const",  "volatile", "static",  "extern",  "inline",    "constexpr", "register",
      "mutable", "thread_local", "virtual", "explicit", "friend", "typename", "consteval"};
  return std::find(kQuals.begin(), kQuals.end(), t) != kQuals.end();
}

class Lexer {
 public:
  explicit Lexer(std::string_view src) : src_(src) {}

  std::vector<Token> run() {
    std::vector<Token> out;
    bool line_start = true;
    while (pos_ < src_.size()) {
      const char c = src_[pos_];
      if (c == '\n') {
        ++line_;
        ++pos_;
        line_start = true;
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
        continue;
      }
      if (c == '/' && peek(1) == '/') {
        while (pos_ < src_.size() && src_[pos_] != '\n') ++pos_;
        continue;
      }
      if (c == '/' && peek(1) == '*') {
        const int start_line = line_;
        const auto end = src_.find("*/", pos_ + 2);
        if (end == std::string_view::npos) fail(start_line, "unterminated block comment");
        for (std::size_t i = pos_; i < end; ++i) line_ += src_[i] == '\n';
        pos_ = end + 2;
        continue;
      }
      if (c == '#' && line_start) {
        out.push_back(preprocessor());
        continue;
      }
      line_start = false;
      if (std::isalpha(static_cast<unsigned char>(c)) || c == '_' ||
          static_cast<unsigned char>(c) >= 0x80) {
        out.push_back(identifier_or_literal());
      } else if (std::isdigit(static_cast<unsigned char>(c)) ||
                 (c == '.' && std::isdigit(static_cast<unsigned char>(peek(1))))) {
        out.push_back(number());
      } else if (c == '"') {
        out.push_back(quoted('"', Tok::kString, pos_));
      } else if (c == '\'') {
        out.push_back(quoted('\'', Tok::kChar, pos_));
      } else {
        out.push_back(punct());
      }
    }
    return out;
  }

 private:
  [[noreturn]] void fail(int line, const std::string& what) {
    throw Error(ErrorCode::kParse, fmt::format("line {}: {}", line, what));
  }

  char peek(std::size_t ahead) const {
    return pos_ + ahead < src_.size() ? src_[pos_ + ahead] : '\0';
  }

  Token preprocessor() {
    const int line = line_;
    std::string raw;
    while (pos_ < src_.size()) {
      const char c = src_[pos_];
      if (c == '\\' && peek(1) == '\n') {
        pos_ += 2;
        ++line_;
        raw.push_back(' ');
        continue;
      }
      if (c == '\n') break;
      if (c == '/' && peek(1) == '/') {
        while (pos_ < src_.size() && src_[pos_] != '\n') ++pos_;
        break;
      }
      if (c == '/' && peek(1) == '*') {
        const auto end = src_.find("*/", pos_ + 2);
        if (end == std::string_view::npos) fail(line, "unterminated block comment");
        for (std::size_t i = pos_; i < end; ++i) line_ += src_[i] == '\n';
        pos_ = end + 2;
        raw.push_back(' ');
        continue;
      }
      raw.push_back(c);
      ++pos_;
    }
    // Collapse whitespace runs so layout changes do not alter the label.
    std::string text;
    bool space = false;
    for (char c : raw) {
      if (std::isspace(static_cast<unsigned char>(c))) {
        space = !text.empty();
        continue;
      }
      if (space) text.push_back(' ');
      space = false;
      text.push_back(c);
    }
    // "# include" and "#include" are the same directive.
    if (text.size() > 2 && text[1] == ' ') text.erase(1, 1);
    return {Tok::kPreproc, text, line};
  }

  Token identifier_or_literal() {
    const std::size_t start = pos_;
    while (pos_ < src_.size() &&
           (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_' ||
            static_cast<unsigned char>(src_[pos_]) >= 0x80)) {
      ++pos_;
    }
    const std::string_view word = src_.substr(start, pos_ - start);
    const char next = pos_ < src_.size() ? src_[pos_] : '\0';
    const bool string_prefix = word == "L" || word == "u" || word == "U" || word == "u8";
    const bool raw_prefix = word == "R" || word == "LR" || word == "uR" || word == "UR" || word == "u8R";
    if (next == '"' && raw_prefix) return raw_string(start);
    if (next == '"' && string_prefix) return quoted('"', Tok::kString, start);
    if (next == '\'' && string_prefix) return quoted('\'', Tok::kChar, start);
    const Tok kind = keywords().contains(word) ? Tok::kKeyword : Tok::kIdent;
    return {kind, std::string(word), line_};
  }

  Token raw_string(std::size_t start) {
    const int line = line_;
    ++pos_;  // opening quote
    const auto paren = src_.find('(', pos_);
    if (paren == std::string_view::npos) fail(line, "malformed raw string literal");
    const std::string terminator = ")" + std::string(src_.substr(pos_, paren - pos_)) + "\"";
    const auto end = src_.find(terminator, paren + 1);
    if (end == std::string_view::npos) fail(line, "unterminated raw string literal");
    for (std::size_t i = pos_; i < end; ++i) line_ += src_[i] == '\n';
    pos_ = end + terminator.size();
    return {Tok::kString, std::string(src_.substr(start, pos_ - start)), line};
  }

  Token quoted(char quote, Tok kind, std::size_t start) {
    const int line = line_;
    while (src_[pos_] != quote) ++pos_;  // skip prefix
    ++pos_;
    while (true) {
      if (pos_ >= src_.size() || src_[pos_] == '\n') {
        fail(line, quote == '"' ? "unterminated string literal" : "unterminated character literal");
      }
      const char c = src_[pos_];
      if (c == '\\') {
        pos_ += 2;
        continue;
      }
      ++pos_;
      if (c == quote) break;
    }
    return {kind, std::string(src_.substr(start, pos_ - start)), line};
  }

  Token number() {
    const std::size_t start = pos_;
    while (pos_ < src_.size()) {
      const char c = src_[pos_];
      if (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '\'') {
        ++pos_;
      } else if ((c == '+' || c == '-') && pos_ > start &&
                 (std::tolower(static_cast<unsigned char>(src_[pos_ - 1])) == 'e' ||
                  std::tolower(static_cast<unsigned char>(src_[pos_ - 1])) == 'p') &&
                 !(src_[start] == '0' && pos_ > start + 1 &&
                   std::tolower(static_cast<unsigned char>(src_[start + 1])) == 'x' &&
                   std::tolower(static_cast<unsigned char>(src_[pos_ - 1])) == 'e')) {
        ++pos_;
      } else {
        break;
      }
    }
    return {Tok::kNumber, std::string(src_.substr(start, pos_ - start)), line_};
  }

  Token punct() {
    static constexpr std::array<std::string_view, 36> kMulti = {
        "<<=", ">>=", "...", "->*", "<=>", "::", "->", "++", "--", "<<", ">>", "<=",
        ">=",  "==",  "!=",  "&&",  "||",  "+=", "-=", "*=", "/=", "%=", "&=", "|=",
        "^=",  ".*",  "##",  "<:",  ":>",  "<%", "%>", "%:", "and", "or", "not", "xor"};
    for (std::string_view p : kMulti) {
      if (std::isalpha(static_cast<unsigned char>(p[0]))) continue;
      if (p == "<:" || p == ":>" || p == "<%" || p == "%>" || p == "%:" || p == "##") continue;
      if (src_.substr(pos_, p.size()) == p) {
        pos_ += p.size();
        return {Tok::kPunct, std::string(p), line_};
      }
    }
    return {Tok::kPunct, std::string(1, src_[pos_++]), line_};
  }

  std::string_view src_;
  std::size_t pos_ = 0;
  int line_ = 1;
};

// ---------------------------------------------------------------- parser --

/// Internal recovery signal: the current statement cannot be parsed.
struct SyntaxIssue {};

constexpr int kMaxDepth = 400;

class Parser {
 public:
  explicit Parser(std::vector<Token> tokens) : toks_(std::move(tokens)) {
    toks_.push_back({Tok::kEnd, "", toks_.empty() ? 1 : toks_.back().line});
  }

  SyntaxTree run() {
    SyntaxTree tree("TranslationUnit");
    while (!at_end()) external(tree, SyntaxTree::root());
    return tree;
  }

 private:
  // -- token helpers --
  const Token& cur() const { return toks_[pos_]; }
  const Token& ahead(std::size_t n) const {
    return toks_[std::min(pos_ + n, toks_.size() - 1)];
  }
  bool at_end() const { return cur().kind == Tok::kEnd; }
  bool is(std::string_view text) const {
    return cur().kind != Tok::kString && cur().kind != Tok::kChar && cur().text == text;
  }
  bool is_at(std::size_t index, std::string_view text) const {
    const Token& t = toks_[std::min(index, toks_.size() - 1)];
    return t.kind != Tok::kString && t.kind != Tok::kChar && t.text == text;
  }
  bool accept(std::string_view text) {
    if (!is(text)) return false;
    ++pos_;
    return true;
  }
  void expect(std::string_view text) {
    if (!accept(text)) throw SyntaxIssue{};
  }
  bool is_name_start() const {
    return cur().kind == Tok::kIdent || (is("::") && ahead(1).kind == Tok::kIdent);
  }

  /// Splits a leading ">>" or ">=" style token so templates can close.
  void split_greater() {
    std::string& t = toks_[pos_].text;
    if (t.size() > 1 && t[0] == '>') {
      Token rest = toks_[pos_];
      rest.text = t.substr(1);
      t = ">";
      toks_.insert(toks_.begin() + static_cast<std::ptrdiff_t>(pos_) + 1, rest);
    }
  }

  struct DepthGuard {
    explicit DepthGuard(int& d) : depth(d) {
      if (++depth > kMaxDepth) {
        --depth;
        throw SyntaxIssue{};
      }
    }
    ~DepthGuard() { --depth; }
    int& depth;
  };

  static std::string leaf_label(const Token& t) {
    switch (t.kind) {
      case Tok::kIdent: return "Ident:" + t.text;
      case Tok::kKeyword: return "Keyword:" + t.text;
      case Tok::kNumber: return "Num:" + t.text;
      case Tok::kString: return "Str:" + t.text;
      case Tok::kChar: return "Char:" + t.text;
      case Tok::kPreproc: return "Preproc:" + t.text;
      case Tok::kPunct: return "Tok:" + t.text;
      case Tok::kEnd: return "Tok:";
    }
    return "Tok:";
  }

  // -- speculative scanning (no tree output) --

  /// Index just past a balanced `<...>` starting at `i`, or nullopt.
  std::optional<std::size_t> skip_angles(std::size_t i) const {
    int depth = 0;
    int parens = 0;
    for (; i < toks_.size(); ++i) {
      const Token& t = toks_[i];
      if (t.kind == Tok::kEnd) return std::nullopt;
      if (t.kind == Tok::kString || t.kind == Tok::kChar || t.kind == Tok::kNumber ||
          t.kind == Tok::kIdent || t.kind == Tok::kKeyword) {
        continue;
      }
      const std::string& s = t.text;
      if (s == "(") ++parens;
      else if (s == ")") {
        if (--parens < 0) return std::nullopt;
      } else if (s == "<") ++depth;
      else if (s == ">" || s == ">>") {
        depth -= static_cast<int>(s.size());
        if (depth <= 0) return depth == 0 ? std::optional<std::size_t>(i + 1) : std::nullopt;
      } else if (s == ";" || s == "{" || s == "}" || s == "&&" || s == "||" || s == "=") {
        if (parens == 0) return std::nullopt;
      }
    }
    return std::nullopt;
  }

  /// Index past a (possibly qualified, possibly templated) name at `i`.
  std::optional<std::size_t> skip_name(std::size_t i) const {
    if (is_at(i, "::")) ++i;
    if (toks_[i].kind != Tok::kIdent) return std::nullopt;
    ++i;
    for (;;) {
      if (is_at(i, "<")) {
        auto past = skip_angles(i);
        if (!past) return i;
        i = *past;
      }
      if (is_at(i, "::") && (toks_[i + 1].kind == Tok::kIdent || is_at(i + 1, "~"))) {
        i += is_at(i + 1, "~") ? 3 : 2;
        continue;
      }
      return i;
    }
  }

  /// Heuristic: does a declaration start at the cursor?
  bool looks_like_declaration() const {
    const Token& t = cur();
    if (t.kind == Tok::kKeyword) {
      return is_fundamental(t.text) || is_decl_qualifier(t.text) || t.text == "struct" ||
             t.text == "class" || t.text == "enum" || t.text == "union" ||
             t.text == "typedef" || t.text == "using" || t.text == "static_assert";
    }
    if (!is_name_start()) return false;
    auto past = skip_name(pos_);
    if (!past) return false;
    std::size_t i = *past;
    while (is_at(i, "*") || is_at(i, "&") || is_at(i, "&&") || is_at(i, "const")) ++i;
    return toks_[i].kind == Tok::kIdent ||
           (is_at(i, "(") && is_at(i + 1, "*"));  // function pointer declarator
  }

  // -- tree builders --

  void add_token_leaves(SyntaxTree& tree, std::size_t parent, std::size_t from, std::size_t to) {
    for (std::size_t i = from; i < to; ++i) tree.add_child(parent, leaf_label(toks_[i]));
  }

  /// Skips to the end of the current statement for error recovery, recording
  /// the skipped tokens under an Error node.
  void recover(SyntaxTree& tree, std::size_t parent, std::size_t start, bool top_level = false) {
    pos_ = start;
    const std::size_t error = tree.add_child(parent, "Error");
    int depth = 0;
    while (!at_end()) {
      if (depth == 0 && is("}") && (pos_ != start || !top_level)) break;
      const std::string& s = cur().kind == Tok::kPunct ? cur().text : std::string{};
      if (s == "{" || s == "(" || s == "[") ++depth;
      if (s == "}" || s == ")" || s == "]") --depth;
      tree.add_child(error, leaf_label(cur()));
      ++pos_;
      if (depth <= 0 && s == ";") break;
      if (depth == 0 && s == "}") break;
      if (depth < 0) depth = 0;
    }
  }

  // -- external declarations --

  void external(SyntaxTree& tree, std::size_t parent) {
    const std::size_t start = pos_;
    SyntaxTree backup = tree;
    try {
      external_unchecked(tree, parent);
    } catch (const SyntaxIssue&) {
      tree = std::move(backup);
      recover(tree, parent, start, /*top_level=*/true);
    }
  }

  void external_unchecked(SyntaxTree& tree, std::size_t parent) {
    DepthGuard guard(depth_);
    if (cur().kind == Tok::kPreproc) {
      tree.add_child(parent, leaf_label(cur()));
      ++pos_;
      return;
    }
    if (accept(";")) return;
    if (is("}")) throw SyntaxIssue{};
    if (is("template")) {
      const std::size_t node = tree.add_child(parent, "Template");
      ++pos_;
      if (is("<")) {
        const std::size_t params = tree.add_child(node, "TemplateParams");
        auto past = skip_angles(pos_);
        if (!past) throw SyntaxIssue{};
        add_token_leaves(tree, params, pos_ + 1, *past - 1);
        pos_ = *past;
      }
      external_unchecked(tree, node);
      return;
    }
    if (is("namespace")) {
      const std::size_t node = tree.add_child(parent, "Namespace");
      ++pos_;
      while (cur().kind == Tok::kIdent || is("::")) {
        tree.add_child(node, leaf_label(cur()));
        ++pos_;
      }
      if (accept("=")) {
        while (!at_end() && !is(";")) {
          tree.add_child(node, leaf_label(cur()));
          ++pos_;
        }
        expect(";");
        return;
      }
      expect("{");
      while (!at_end() && !is("}")) external(tree, node);
      expect("}");
      return;
    }
    if (is("extern") && ahead(1).kind == Tok::kString && is_at(pos_ + 2, "{")) {
      const std::size_t node = tree.add_child(parent, "Linkage");
      pos_ += 3;
      while (!at_end() && !is("}")) external(tree, node);
      expect("}");
      return;
    }
    block_item(tree, parent, /*top_level=*/true);
  }

  // -- statements --

  void statement(SyntaxTree& tree, std::size_t parent) {
    const std::size_t start = pos_;
    SyntaxTree backup = tree;
    try {
      DepthGuard guard(depth_);
      statement_unchecked(tree, parent);
    } catch (const SyntaxIssue&) {
      tree = std::move(backup);
      recover(tree, parent, start);
      if (pos_ == start && !at_end() && !is("}")) {
        tree.add_child(tree.add_child(parent, "Error"), leaf_label(cur()));
        ++pos_;
      }
    }
  }

  void compound(SyntaxTree& tree, std::size_t parent) {
    const std::size_t node = tree.add_child(parent, "Compound");
    expect("{");
    while (!at_end() && !is("}")) {
      const std::size_t before = pos_;
      block_item_safe(tree, node);
      if (pos_ == before) ++pos_;
    }
    accept("}");  // tolerate a missing closing brace at end of input
  }

  void block_item_safe(SyntaxTree& tree, std::size_t parent) {
    const std::size_t start = pos_;
    SyntaxTree backup = tree;
    try {
      DepthGuard guard(depth_);
      block_item(tree, parent, /*top_level=*/false);
    } catch (const SyntaxIssue&) {
      tree = std::move(backup);
      recover(tree, parent, start);
    }
  }

  void block_item(SyntaxTree& tree, std::size_t parent, bool top_level) {
    if (cur().kind == Tok::kPreproc) {
      tree.add_child(parent, leaf_label(cur()));
      ++pos_;
      return;
    }
    if (is("using")) {
      const std::size_t node = tree.add_child(parent, "Using");
      ++pos_;
      while (!at_end() && !is(";")) {
        tree.add_child(node, leaf_label(cur()));
        ++pos_;
      }
      expect(";");
      return;
    }
    if (is("typedef")) {
      const std::size_t node = tree.add_child(parent, "Typedef");
      ++pos_;
      declaration_body(tree, node, top_level);
      return;
    }
    if (is("static_assert")) {
      const std::size_t node = tree.add_child(parent, "StaticAssert");
      ++pos_;
      expect("(");
      if (!is(")")) expression(tree, node);
      expect(")");
      expect(";");
      return;
    }
    if ((is("struct") || is("class") || is("union") || is("enum")) && record_follows()) {
      record(tree, parent);
      return;
    }
    if (is("template") || is("namespace")) {
      external_unchecked(tree, parent);
      return;
    }
    if (top_level || looks_like_declaration()) {
      declaration(tree, parent, top_level);
      return;
    }
    statement_unchecked(tree, parent);
  }

  /// `struct X {`, `struct {`, `struct X : Base {`, `enum class E {`...
  bool record_follows() const {
    std::size_t i = pos_ + 1;
    if (is_at(i, "class") || is_at(i, "struct")) ++i;  // enum class
    while (toks_[i].kind == Tok::kIdent || is_at(i, "::")) ++i;
    if (is_at(i, "final")) ++i;
    if (is_at(i, "{")) return true;
    if (is_at(i, ":")) {
      for (; i < toks_.size() && toks_[i].kind != Tok::kEnd; ++i) {
        if (is_at(i, "{")) return true;
        if (is_at(i, ";") || is_at(i, "(") || is_at(i, "=")) return false;
      }
    }
    return false;
  }

  void record(SyntaxTree& tree, std::size_t parent) {
    const bool is_enum = is("enum");
    const std::size_t node = tree.add_child(parent, (is_enum ? "Enum:" : "Record:") + cur().text);
    ++pos_;
    if (is_enum && (is("class") || is("struct"))) ++pos_;
    while (cur().kind == Tok::kIdent || is("::")) {
      tree.add_child(node, leaf_label(cur()));
      ++pos_;
    }
    if (accept(":")) {
      const std::size_t bases = tree.add_child(node, "Bases");
      while (!at_end() && !is("{")) {
        tree.add_child(bases, leaf_label(cur()));
        ++pos_;
      }
    }
    expect("{");
    const std::size_t body = tree.add_child(node, "Body");
    if (is_enum) {
      while (!at_end() && !is("}")) {
        if (cur().kind != Tok::kIdent) throw SyntaxIssue{};
        const std::size_t e = tree.add_child(body, "Enumerator");
        tree.add_child(e, leaf_label(cur()));
        ++pos_;
        if (accept("=")) assignment(tree, e);
        if (!accept(",")) break;
      }
    } else {
      while (!at_end() && !is("}")) {
        if ((is("public") || is("private") || is("protected")) && is_at(pos_ + 1, ":")) {
          tree.add_child(body, "Access:" + cur().text);
          pos_ += 2;
          continue;
        }
        const std::size_t before = pos_;
        member(tree, body);
        if (pos_ == before) ++pos_;
      }
    }
    expect("}");
    // Trailing declarators: `struct P {...} a, b[10];`
    while (!at_end() && !is(";")) {
      declarator(tree, node, /*top_level=*/false);
      if (!accept(",")) break;
    }
    expect(";");
  }

  void member(SyntaxTree& tree, std::size_t parent) {
    const std::size_t start = pos_;
    SyntaxTree backup = tree;
    try {
      DepthGuard guard(depth_);
      if (accept(";")) return;
      if (is("~") || ((cur().kind == Tok::kIdent) && is_at(pos_ + 1, "("))) {
        // Constructor or destructor: no type specifier.
        const std::size_t node = tree.add_child(parent, "Constructor");
        function_tail(tree, node, /*top_level=*/true);
        return;
      }
      block_item(tree, parent, /*top_level=*/true);
    } catch (const SyntaxIssue&) {
      tree = std::move(backup);
      recover(tree, parent, start);
    }
  }

  /// Name (and optional '~'), parameter list, qualifiers, then a body, `;`,
  /// `= default` or an initializer list.
  void function_tail(SyntaxTree& tree, std::size_t node, bool top_level) {
    if (accept("~")) tree.add_child(node, "Tok:~");
    tree.add_child(node, leaf_label(cur()));
    ++pos_;
    parameters(tree, node);
    function_rest(tree, node, top_level);
  }

  void function_rest(SyntaxTree& tree, std::size_t node, bool top_level) {
    (void)top_level;
    while (is("const") || is("noexcept") || is("override") || is("final") || is("volatile") ||
           is("&") || is("&&")) {
      tree.add_child(node, leaf_label(cur()));
      ++pos_;
      if (is("(")) skip_parens_into(tree, node);
    }
    if (accept("->")) {
      type_specifier(tree, node);
    }
    if (accept("=")) {
      tree.add_child(node, leaf_label(cur()));  // default / delete / 0
      ++pos_;
      expect(";");
      return;
    }
    if (accept(":")) {
      const std::size_t inits = tree.add_child(node, "MemberInits");
      while (!at_end() && !is("{")) {
        const std::size_t init = tree.add_child(inits, "MemberInit");
        tree.add_child(init, leaf_label(cur()));
        ++pos_;
        if (is("(")) {
          call_arguments(tree, init, "(", ")");
        } else if (is("{")) {
          call_arguments(tree, init, "{", "}");
        } else {
          throw SyntaxIssue{};
        }
        if (!accept(",")) break;
      }
    }
    if (is("{")) {
      compound(tree, node);
      return;
    }
    expect(";");
  }

  void skip_parens_into(SyntaxTree& tree, std::size_t node) {
    int depth = 0;
    do {
      if (is("(")) ++depth;
      if (is(")")) --depth;
      tree.add_child(node, leaf_label(cur()));
      ++pos_;
    } while (depth > 0 && !at_end());
  }

  // -- declarations --

  void declaration(SyntaxTree& tree, std::size_t parent, bool top_level) {
    // Function definitions get their own node; everything else is a Decl.
    const std::size_t start = pos_;
    SyntaxTree probe = tree;
    const std::size_t decl = probe.add_child(parent, "Decl");
    type_specifier(probe, decl);
    const std::size_t type_end = pos_;
    if (is_function_declarator(top_level)) {
      pos_ = start;
      const std::size_t fn = tree.add_child(parent, "Function");
      type_specifier(tree, fn);
      while (is("*") || is("&") || is("&&")) {
        tree.add_child(fn, "PtrOp:" + cur().text);
        ++pos_;
      }
      qualified_name(tree, fn);
      parameters(tree, fn);
      function_rest(tree, fn, top_level);
      return;
    }
    pos_ = type_end;
    tree = std::move(probe);
    declarators_until_semicolon(tree, decl, top_level);
  }

  void declaration_body(SyntaxTree& tree, std::size_t node, bool top_level) {
    type_specifier(tree, node);
    declarators_until_semicolon(tree, node, top_level);
  }

  void declarators_until_semicolon(SyntaxTree& tree, std::size_t node, bool top_level) {
    if (accept(";")) return;
    for (;;) {
      declarator(tree, node, top_level);
      if (!accept(",")) break;
    }
    expect(";");
  }

  bool is_function_declarator(bool top_level) const {
    std::size_t i = pos_;
    while (is_at(i, "*") || is_at(i, "&") || is_at(i, "&&")) ++i;
    if (is_at(i, "operator")) return true;
    auto past = skip_name(i);
    if (!past || !is_at(*past, "(")) return false;
    // Find the matching ')' and look at what follows.
    int depth = 0;
    std::size_t j = *past;
    for (; j < toks_.size() && toks_[j].kind != Tok::kEnd; ++j) {
      if (is_at(j, "(")) ++depth;
      if (is_at(j, ")") && --depth == 0) break;
    }
    ++j;
    while (is_at(j, "const") || is_at(j, "noexcept") || is_at(j, "override") ||
           is_at(j, "final")) {
      ++j;
    }
    if (is_at(j, "{") || is_at(j, "->")) return true;
    if (is_at(j, ":") && top_level) return true;
    if (is_at(j, ";") || is_at(j, "=")) {
      // Prototype vs. direct-initialisation: a prototype's list is empty or
      // starts with something type-like.
      const std::size_t first = *past + 1;
      if (is_at(first, ")")) return top_level || is_at(j, ";");
      const Token& t = toks_[first];
      if (t.kind == Tok::kKeyword) return is_fundamental(t.text) || is_decl_qualifier(t.text) ||
                                          t.text == "struct" || t.text == "class";
      if (top_level && t.kind == Tok::kIdent) {
        auto name_end = skip_name(first);
        if (!name_end) return false;
        std::size_t k = *name_end;
        while (is_at(k, "*") || is_at(k, "&")) ++k;
        return toks_[k].kind == Tok::kIdent || is_at(k, ",") || is_at(k, ")");
      }
    }
    return false;
  }

  void qualified_name(SyntaxTree& tree, std::size_t parent) {
    if (is("operator")) {
      std::string name = "operator";
      ++pos_;
      if (is("(")) {
        name += "()";
        pos_ += 2;
      } else if (is("[")) {
        name += "[]";
        pos_ += 2;
      } else {
        while (!at_end() && !is("(")) name += cur().text, ++pos_;
      }
      tree.add_child(parent, "Ident:" + name);
      return;
    }
    std::string name;
    if (accept("::")) name = "::";
    if (cur().kind != Tok::kIdent) throw SyntaxIssue{};
    name += cur().text;
    ++pos_;
    for (;;) {
      if (is("<")) {
        auto past = skip_angles(pos_);
        if (past && (is_at(*past, "::") || is_at(*past, "("))) {
          for (std::size_t i = pos_; i < *past; ++i) name += toks_[i].text;
          pos_ = *past;
        }
      }
      if (is("::") && (ahead(1).kind == Tok::kIdent || is_at(pos_ + 1, "~") ||
                       is_at(pos_ + 1, "operator"))) {
        name += "::";
        ++pos_;
        if (accept("~")) name += "~";
        if (is("operator")) {
          tree.add_child(parent, "Ident:" + name);
          qualified_name(tree, parent);
          return;
        }
        name += cur().text;
        ++pos_;
        continue;
      }
      break;
    }
    tree.add_child(parent, "Ident:" + name);
  }

  /// Type node whose leaves are the specifier tokens.
  void type_specifier(SyntaxTree& tree, std::size_t parent) {
    const std::size_t type = tree.add_child(parent, "Type");
    bool have_base = false;
    bool fundamental = false;
    for (;;) {
      const Token& t = cur();
      if (t.kind == Tok::kKeyword && is_decl_qualifier(t.text)) {
        tree.add_child(type, leaf_label(t));
        ++pos_;
        continue;
      }
      if (t.kind == Tok::kKeyword && is_fundamental(t.text) && (!have_base || fundamental)) {
        tree.add_child(type, leaf_label(t));
        ++pos_;
        if (t.text == "decltype" && is("(")) skip_parens_into(tree, type);
        have_base = true;
        fundamental = true;
        continue;
      }
      if (!have_base && (t.text == "struct" || t.text == "class" || t.text == "enum" ||
                         t.text == "union") && t.kind == Tok::kKeyword) {
        tree.add_child(type, leaf_label(t));
        ++pos_;
        continue;
      }
      if (!have_base && is_name_start()) {
        auto past = skip_name(pos_);
        if (!past) throw SyntaxIssue{};
        for (std::size_t i = pos_; i < *past; ++i) tree.add_child(type, leaf_label(toks_[i]));
        pos_ = *past;
        have_base = true;
        continue;
      }
      break;
    }
    if (!have_base && tree.children(type).empty()) throw SyntaxIssue{};
  }

  void declarator(SyntaxTree& tree, std::size_t parent, bool top_level) {
    const std::size_t node = tree.add_child(parent, "Declarator");
    while (is("*") || is("&") || is("&&") || is("const")) {
      tree.add_child(node, cur().text == "const" ? "Keyword:const" : "PtrOp:" + cur().text);
      ++pos_;
    }
    if (is("(") && is_at(pos_ + 1, "*")) {
      // Function pointer: (*name)(params)
      ++pos_;
      tree.add_child(node, "PtrOp:*");
      ++pos_;
      qualified_name(tree, node);
      expect(")");
      parameters(tree, node);
    } else if (is_name_start() || is("operator")) {
      qualified_name(tree, node);
    } else if (!is("[") && !is(":")) {
      throw SyntaxIssue{};
    }
    while (is("[")) {
      const std::size_t dim = tree.add_child(node, "ArrayDim");
      ++pos_;
      if (!is("]")) expression(tree, dim);
      expect("]");
    }
    if (is("(")) {
      if (is_function_params_here(top_level)) {
        parameters(tree, node);
        while (is("const") || is("noexcept")) {
          tree.add_child(node, leaf_label(cur()));
          ++pos_;
        }
      } else {
        const std::size_t init = tree.add_child(node, "CtorInit");
        call_arguments(tree, init, "(", ")");
      }
    }
    if (accept(":")) {
      const std::size_t bits = tree.add_child(node, "BitField");
      conditional(tree, bits);
    }
    if (accept("=")) {
      const std::size_t init = tree.add_child(node, "Init");
      if (is("{")) {
        init_list(tree, init);
      } else {
        assignment(tree, init);
      }
    } else if (is("{")) {
      const std::size_t init = tree.add_child(node, "Init");
      init_list(tree, init);
    }
  }

  bool is_function_params_here(bool top_level) const {
    const std::size_t first = pos_ + 1;
    if (is_at(first, ")")) return true;
    const Token& t = toks_[first];
    if (t.kind == Tok::kKeyword) {
      return is_fundamental(t.text) || is_decl_qualifier(t.text) || t.text == "struct";
    }
    if (!top_level) return false;
    return t.kind == Tok::kIdent;
  }

  void parameters(SyntaxTree& tree, std::size_t parent) {
    const std::size_t params = tree.add_child(parent, "Params");
    expect("(");
    while (!at_end() && !is(")")) {
      if (accept("...")) {
        tree.add_child(params, "Ellipsis");
      } else {
        const std::size_t param = tree.add_child(params, "Param");
        type_specifier(tree, param);
        while (is("*") || is("&") || is("&&") || is("const")) {
          tree.add_child(param, cur().text == "const" ? "Keyword:const" : "PtrOp:" + cur().text);
          ++pos_;
        }
        if (is("(") && is_at(pos_ + 1, "*")) {
          pos_ += 2;
          tree.add_child(param, "PtrOp:*");
          if (cur().kind == Tok::kIdent) {
            tree.add_child(param, leaf_label(cur()));
            ++pos_;
          }
          expect(")");
          parameters(tree, param);
        } else if (cur().kind == Tok::kIdent) {
          tree.add_child(param, leaf_label(cur()));
          ++pos_;
        }
        while (is("[")) {
          const std::size_t dim = tree.add_child(param, "ArrayDim");
          ++pos_;
          if (!is("]")) expression(tree, dim);
          expect("]");
        }
        if (accept("=")) {
          const std::size_t init = tree.add_child(param, "Default");
          assignment(tree, init);
        }
      }
      if (!accept(",")) break;
    }
    expect(")");
  }

  void init_list(SyntaxTree& tree, std::size_t parent) {
    const std::size_t node = tree.add_child(parent, "InitList");
    expect("{");
    while (!at_end() && !is("}")) {
      if (is("{")) {
        init_list(tree, node);
      } else if (is(".") && ahead(1).kind == Tok::kIdent) {
        const std::size_t designated = tree.add_child(node, "Designator:" + ahead(1).text);
        pos_ += 2;
        expect("=");
        assignment(tree, designated);
      } else {
        assignment(tree, node);
      }
      if (!accept(",")) break;
    }
    expect("}");
  }

  void statement_unchecked(SyntaxTree& tree, std::size_t parent) {
    if (is("{")) {
      compound(tree, parent);
      return;
    }
    if (accept(";")) {
      tree.add_child(parent, "Empty");
      return;
    }
    if (is("if")) {
      const std::size_t node = tree.add_child(parent, "If");
      ++pos_;
      if (is("constexpr")) {
        tree.add_child(node, "Keyword:constexpr");
        ++pos_;
      }
      expect("(");
      condition(tree, node);
      expect(")");
      statement(tree, node);
      if (accept("else")) {
        statement(tree, tree.add_child(node, "Else"));
      }
      return;
    }
    if (is("for")) {
      for_statement(tree, parent);
      return;
    }
    if (is("while")) {
      const std::size_t node = tree.add_child(parent, "While");
      ++pos_;
      expect("(");
      condition(tree, node);
      expect(")");
      statement(tree, node);
      return;
    }
    if (is("do")) {
      const std::size_t node = tree.add_child(parent, "DoWhile");
      ++pos_;
      statement(tree, node);
      expect("while");
      expect("(");
      expression(tree, node);
      expect(")");
      expect(";");
      return;
    }
    if (is("switch")) {
      const std::size_t node = tree.add_child(parent, "Switch");
      ++pos_;
      expect("(");
      condition(tree, node);
      expect(")");
      statement(tree, node);
      return;
    }
    if (is("case")) {
      const std::size_t node = tree.add_child(parent, "Case");
      ++pos_;
      conditional(tree, node);
      if (accept("...")) conditional(tree, node);
      expect(":");
      return;
    }
    if (is("default") && is_at(pos_ + 1, ":")) {
      tree.add_child(parent, "Default");
      pos_ += 2;
      return;
    }
    if (is("return") || is("co_return")) {
      const std::size_t node = tree.add_child(parent, "Return");
      ++pos_;
      if (is("{")) {
        init_list(tree, node);
      } else if (!is(";")) {
        expression(tree, node);
      }
      expect(";");
      return;
    }
    if (is("break") || is("continue")) {
      tree.add_child(parent, is("break") ? "Break" : "Continue");
      ++pos_;
      expect(";");
      return;
    }
    if (is("goto")) {
      const std::size_t node = tree.add_child(parent, "Goto");
      ++pos_;
      tree.add_child(node, leaf_label(cur()));
      ++pos_;
      expect(";");
      return;
    }
    if (is("try")) {
      const std::size_t node = tree.add_child(parent, "Try");
      ++pos_;
      compound(tree, node);
      while (accept("catch")) {
        const std::size_t handler = tree.add_child(node, "Catch");
        expect("(");
        if (accept("...")) {
          tree.add_child(handler, "Ellipsis");
        } else {
          const std::size_t param = tree.add_child(handler, "Param");
          type_specifier(tree, param);
          while (is("&") || is("*") || is("const")) {
            tree.add_child(param, "PtrOp:" + cur().text);
            ++pos_;
          }
          if (cur().kind == Tok::kIdent) {
            tree.add_child(param, leaf_label(cur()));
            ++pos_;
          }
        }
        expect(")");
        compound(tree, handler);
      }
      return;
    }
    if (cur().kind == Tok::kIdent && is_at(pos_ + 1, ":") && !is_at(pos_ + 1, "::")) {
      tree.add_child(parent, "Label:" + cur().text);
      pos_ += 2;
      return;
    }
    if (looks_like_declaration()) {
      declaration(tree, parent, /*top_level=*/false);
      return;
    }
    const std::size_t node = tree.add_child(parent, "ExprStmt");
    expression(tree, node);
    expect(";");
  }

  void condition(SyntaxTree& tree, std::size_t parent) {
    if (looks_like_declaration()) {
      const std::size_t decl = tree.add_child(parent, "Decl");
      type_specifier(tree, decl);
      declarator(tree, decl, false);
      if (accept(";")) expression(tree, parent);  // if (init; cond)
      return;
    }
    expression(tree, parent);
  }

  bool range_for_ahead() const {
    int depth = 0;
    for (std::size_t i = pos_; i < toks_.size() && toks_[i].kind != Tok::kEnd; ++i) {
      if (is_at(i, "(") || is_at(i, "[") || is_at(i, "{")) ++depth;
      if (is_at(i, ")") || is_at(i, "]") || is_at(i, "}")) {
        if (--depth < 0) return false;
      }
      if (depth == 0 && is_at(i, ";")) return false;
      if (depth == 0 && is_at(i, ":")) return true;
    }
    return false;
  }

  void for_statement(SyntaxTree& tree, std::size_t parent) {
    ++pos_;
    expect("(");
    if (range_for_ahead()) {
      const std::size_t node = tree.add_child(parent, "RangeFor");
      const std::size_t decl = tree.add_child(node, "Decl");
      type_specifier(tree, decl);
      const std::size_t d = tree.add_child(decl, "Declarator");
      while (is("&") || is("&&") || is("*") || is("const")) {
        tree.add_child(d, "PtrOp:" + cur().text);
        ++pos_;
      }
      if (is("[")) {  // structured binding
        while (!at_end() && !is(":")) {
          tree.add_child(d, leaf_label(cur()));
          ++pos_;
        }
      } else {
        qualified_name(tree, d);
      }
      expect(":");
      if (is("{")) {
        init_list(tree, node);
      } else {
        expression(tree, node);
      }
      expect(")");
      statement(tree, node);
      return;
    }
    const std::size_t node = tree.add_child(parent, "For");
    const std::size_t init = tree.add_child(node, "ForInit");
    if (!accept(";")) {
      if (looks_like_declaration()) {
        declaration(tree, init, /*top_level=*/false);
      } else {
        expression(tree, init);
        expect(";");
      }
    }
    const std::size_t cond = tree.add_child(node, "ForCond");
    if (!is(";")) condition(tree, cond);
    expect(";");
    const std::size_t step = tree.add_child(node, "ForStep");
    if (!is(")")) expression(tree, step);
    expect(")");
    statement(tree, node);
  }

  // -- expressions --

  void expression(SyntaxTree& tree, std::size_t parent) {
    DepthGuard guard(depth_);
    SyntaxTree first("Scratch");
    assignment(first, 0);
    if (!is(",")) {
      graft_children(tree, parent, first);
      return;
    }
    const std::size_t node = tree.add_child(parent, "Comma");
    graft_children(tree, node, first);
    while (accept(",")) assignment(tree, node);
  }

  // Binary expressions are parsed into a scratch tree per operand and then
  // grafted, which keeps operator nodes above their operands in the flat store.
  static void graft_children(SyntaxTree& tree, std::size_t parent, const SyntaxTree& scratch) {
    // DFS order must add children left-to-right; graft() pushes reversed.
    for (std::size_t child : scratch.children(0)) graft_ordered(tree, parent, scratch, child);
  }

  static void graft_ordered(SyntaxTree& tree, std::size_t parent, const SyntaxTree& scratch,
                            std::size_t node) {
    const std::size_t dst = tree.add_child(parent, scratch.label(node));
    std::vector<std::tuple<std::size_t, std::size_t, std::size_t>> work;  // src, dst, cursor
    work.emplace_back(node, dst, 0);
    while (!work.empty()) {
      auto& [src, d, cursor] = work.back();
      const auto& kids = scratch.children(src);
      if (cursor >= kids.size()) {
        work.pop_back();
        continue;
      }
      const std::size_t child = kids[cursor++];
      const std::size_t nd = tree.add_child(d, scratch.label(child));
      work.emplace_back(child, nd, 0);
    }
  }

  void assignment(SyntaxTree& tree, std::size_t parent) {
    DepthGuard guard(depth_);
    SyntaxTree lhs("Scratch");
    conditional(lhs, 0);
    static constexpr std::array<std::string_view, 11> kOps = {
        "=", "+=", "-=", "*=", "/=", "%=", "<<=", ">>=", "&=", "|=", "^="};
    if (cur().kind == Tok::kPunct &&
        std::find(kOps.begin(), kOps.end(), cur().text) != kOps.end()) {
      const std::size_t node = tree.add_child(parent, "Assign:" + cur().text);
      ++pos_;
      graft_children(tree, node, lhs);
      if (is("{")) {
        init_list(tree, node);
      } else {
        assignment(tree, node);
      }
      return;
    }
    graft_children(tree, parent, lhs);
  }

  void conditional(SyntaxTree& tree, std::size_t parent) {
    SyntaxTree cond("Scratch");
    binary(cond, 0, 0);
    if (!is("?")) {
      graft_children(tree, parent, cond);
      return;
    }
    ++pos_;
    const std::size_t node = tree.add_child(parent, "Ternary");
    graft_children(tree, node, cond);
    assignment(tree, node);
    expect(":");
    assignment(tree, node);
  }

  static int precedence(const Token& t) {
    if (t.kind != Tok::kPunct && !(t.kind == Tok::kIdent && (t.text == "and" || t.text == "or")))
      return -1;
    const std::string& s = t.text;
    if (s == "||" || s == "or") return 0;
    if (s == "&&" || s == "and") return 1;
    if (s == "|") return 2;
    if (s == "^") return 3;
    if (s == "&") return 4;
    if (s == "==" || s == "!=") return 5;
    if (s == "<" || s == ">" || s == "<=" || s == ">=") return 6;
    if (s == "<=>") return 7;
    if (s == "<<" || s == ">>") return 8;
    if (s == "+" || s == "-") return 9;
    if (s == "*" || s == "/" || s == "%") return 10;
    if (s == ".*" || s == "->*") return 11;
    return -1;
  }

  /// Precedence climbing into `tree` under `parent`, left associative.
  void binary(SyntaxTree& tree, std::size_t parent, int min_level) {
    DepthGuard guard(depth_);
    SyntaxTree acc("Scratch");
    unary(acc, 0);
    for (;;) {
      const int level = precedence(cur());
      if (level < min_level || level < 0) break;
      const std::string op = cur().text;
      ++pos_;
      SyntaxTree rhs("Scratch");
      binary(rhs, 0, level + 1);
      SyntaxTree combined("Scratch");
      const std::size_t node = combined.add_child(0, "Binary:" + op);
      graft_children(combined, node, acc);
      graft_children(combined, node, rhs);
      acc = std::move(combined);
    }
    graft_children(tree, parent, acc);
  }

  bool cast_ahead() const {
    // `(type) expr` where the parenthesised part is clearly a type.
    if (!is("(")) return false;
    std::size_t i = pos_ + 1;
    const Token& t = toks_[i];
    bool type_like = false;
    if (t.kind == Tok::kKeyword && (is_fundamental(t.text) || t.text == "const" ||
                                    t.text == "unsigned" || t.text == "signed")) {
      while (toks_[i].kind == Tok::kKeyword &&
             (is_fundamental(toks_[i].text) || is_decl_qualifier(toks_[i].text))) {
        ++i;
      }
      type_like = true;
    } else {
      return false;
    }
    while (is_at(i, "*") || is_at(i, "&")) ++i;
    if (!type_like || !is_at(i, ")")) return false;
    const Token& next = toks_[i + 1];
    return next.kind != Tok::kPunct || next.text == "(" || next.text == "-" || next.text == "!" ||
           next.text == "~" || next.text == "*" || next.text == "&" || next.text == "+";
  }

  void unary(SyntaxTree& tree, std::size_t parent) {
    DepthGuard guard(depth_);
    const Token& t = cur();
    if (t.kind == Tok::kPunct &&
        (t.text == "!" || t.text == "~" || t.text == "-" || t.text == "+" || t.text == "*" ||
         t.text == "&" || t.text == "++" || t.text == "--")) {
      const std::size_t node = tree.add_child(parent, "Unary:" + t.text);
      ++pos_;
      unary(tree, node);
      return;
    }
    if (t.kind == Tok::kIdent && t.text == "not") {
      const std::size_t node = tree.add_child(parent, "Unary:!");
      ++pos_;
      unary(tree, node);
      return;
    }
    if (is("sizeof") || is("alignof")) {
      const std::size_t node = tree.add_child(parent, t.text == "sizeof" ? "Sizeof" : "Alignof");
      ++pos_;
      if (is("(") && (looks_like_type_at(pos_ + 1))) {
        ++pos_;
        type_specifier(tree, node);
        while (is("*") || is("&")) {
          tree.add_child(node, "PtrOp:" + cur().text);
          ++pos_;
        }
        expect(")");
      } else {
        unary(tree, node);
      }
      return;
    }
    if (is("new")) {
      const std::size_t node = tree.add_child(parent, "New");
      ++pos_;
      type_specifier(tree, node);
      while (is("*")) {
        tree.add_child(node, "PtrOp:*");
        ++pos_;
      }
      while (is("[")) {
        const std::size_t dim = tree.add_child(node, "ArrayDim");
        ++pos_;
        expression(tree, dim);
        expect("]");
      }
      if (is("(")) call_arguments(tree, node, "(", ")");
      else if (is("{")) init_list(tree, node);
      return;
    }
    if (is("delete")) {
      const std::size_t node = tree.add_child(parent, "Delete");
      ++pos_;
      if (is("[") && is_at(pos_ + 1, "]")) {
        tree.add_child(node, "Tok:[]");
        pos_ += 2;
      }
      unary(tree, node);
      return;
    }
    if (is("throw")) {
      const std::size_t node = tree.add_child(parent, "Throw");
      ++pos_;
      if (!is(";") && !is(")")) assignment(tree, node);
      return;
    }
    if (cast_ahead()) {
      const std::size_t node = tree.add_child(parent, "Cast");
      ++pos_;
      type_specifier(tree, node);
      while (is("*") || is("&")) {
        tree.add_child(node, "PtrOp:" + cur().text);
        ++pos_;
      }
      expect(")");
      unary(tree, node);
      return;
    }
    postfix(tree, parent);
  }

  bool looks_like_type_at(std::size_t i) const {
    const Token& t = toks_[i];
    if (t.kind == Tok::kKeyword) return is_fundamental(t.text) || is_decl_qualifier(t.text);
    return false;
  }

  void postfix(SyntaxTree& tree, std::size_t parent) {
    SyntaxTree acc("Scratch");
    primary(acc, 0);
    for (;;) {
      if (is("(")) {
        SyntaxTree next("Scratch");
        const std::size_t node = next.add_child(0, "Call");
        graft_children(next, node, acc);
        call_arguments(next, node, "(", ")");
        acc = std::move(next);
      } else if (is("[")) {
        SyntaxTree next("Scratch");
        const std::size_t node = next.add_child(0, "Index");
        graft_children(next, node, acc);
        ++pos_;
        expression(next, node);
        expect("]");
        acc = std::move(next);
      } else if (is(".") || is("->")) {
        SyntaxTree next("Scratch");
        const std::size_t node = next.add_child(0, "Member:" + cur().text);
        graft_children(next, node, acc);
        ++pos_;
        accept("template");
        if (accept("~")) next.add_child(node, "Tok:~");
        if (cur().kind != Tok::kIdent && !is("operator")) throw SyntaxIssue{};
        qualified_name(next, node);
        acc = std::move(next);
      } else if (is("++") || is("--")) {
        SyntaxTree next("Scratch");
        const std::size_t node = next.add_child(0, "Postfix:" + cur().text);
        graft_children(next, node, acc);
        ++pos_;
        acc = std::move(next);
      } else if (is("{") && acc.children(0).size() == 1 &&
                 acc.label(acc.children(0)[0]).rfind("Ident:", 0) == 0) {
        // Functional cast with braces: T{...}
        SyntaxTree next("Scratch");
        const std::size_t node = next.add_child(0, "Construct");
        graft_children(next, node, acc);
        init_list(next, node);
        acc = std::move(next);
      } else {
        break;
      }
    }
    graft_children(tree, parent, acc);
  }

  void call_arguments(SyntaxTree& tree, std::size_t node, std::string_view open,
                      std::string_view close) {
    const std::size_t args = tree.add_child(node, "Args");
    expect(open);
    while (!at_end() && !is(close)) {
      if (is("{")) {
        init_list(tree, args);
      } else {
        assignment(tree, args);
      }
      if (!accept(",")) break;
    }
    expect(close);
  }

  void primary(SyntaxTree& tree, std::size_t parent) {
    const Token& t = cur();
    switch (t.kind) {
      case Tok::kNumber:
      case Tok::kString:
      case Tok::kChar: {
        std::string label = leaf_label(t);
        ++pos_;
        // Adjacent string literals concatenate.
        while (t.kind == Tok::kString && cur().kind == Tok::kString) {
          label += cur().text;
          ++pos_;
        }
        tree.add_child(parent, label);
        return;
      }
      case Tok::kKeyword: {
        if (t.text == "true" || t.text == "false" || t.text == "nullptr" || t.text == "this") {
          tree.add_child(parent, "Lit:" + t.text);
          ++pos_;
          return;
        }
        if (t.text == "static_cast" || t.text == "dynamic_cast" || t.text == "const_cast" ||
            t.text == "reinterpret_cast") {
          const std::size_t node = tree.add_child(parent, "Cast:" + t.text);
          ++pos_;
          expect("<");
          type_specifier(tree, node);
          while (is("*") || is("&")) {
            tree.add_child(node, "PtrOp:" + cur().text);
            ++pos_;
          }
          split_greater();
          expect(">");
          expect("(");
          expression(tree, node);
          expect(")");
          return;
        }
        if (is_fundamental(t.text)) {
          // Functional cast: int(x), long long{3}
          const std::size_t node = tree.add_child(parent, "Construct");
          const std::size_t type = tree.add_child(node, "Type");
          while (cur().kind == Tok::kKeyword && is_fundamental(cur().text)) {
            tree.add_child(type, leaf_label(cur()));
            ++pos_;
          }
          if (is("(")) call_arguments(tree, node, "(", ")");
          else if (is("{")) init_list(tree, node);
          else throw SyntaxIssue{};
          return;
        }
        throw SyntaxIssue{};
      }
      case Tok::kIdent: {
        name_expression(tree, parent);
        return;
      }
      case Tok::kPunct: {
        if (t.text == "(") {
          const std::size_t node = tree.add_child(parent, "Paren");
          ++pos_;
          expression(tree, node);
          expect(")");
          return;
        }
        if (t.text == "::" && ahead(1).kind == Tok::kIdent) {
          name_expression(tree, parent);
          return;
        }
        if (t.text == "[") {
          lambda(tree, parent);
          return;
        }
        if (t.text == "{") {
          init_list(tree, parent);
          return;
        }
        throw SyntaxIssue{};
      }
      default:
        throw SyntaxIssue{};
    }
  }

  void name_expression(SyntaxTree& tree, std::size_t parent) {
    std::string name;
    if (accept("::")) name = "::";
    name += cur().text;
    ++pos_;
    for (;;) {
      if (is("<")) {
        // Only treat as template arguments when followed by a call or scope.
        auto past = skip_angles(pos_);
        if (past && (is_at(*past, "(") || is_at(*past, "::") || is_at(*past, "{")) &&
            template_args_plausible(pos_ + 1, *past - 1)) {
          for (std::size_t i = pos_; i < *past; ++i) name += toks_[i].text;
          pos_ = *past;
          continue;
        }
      }
      if (is("::") && (ahead(1).kind == Tok::kIdent || is_at(pos_ + 1, "~"))) {
        name += "::";
        ++pos_;
        if (accept("~")) name += "~";
        name += cur().text;
        ++pos_;
        continue;
      }
      break;
    }
    tree.add_child(parent, "Ident:" + name);
  }

  bool template_args_plausible(std::size_t from, std::size_t to) const {
    for (std::size_t i = from; i < to; ++i) {
      const Token& t = toks_[i];
      if (t.kind == Tok::kIdent || t.kind == Tok::kNumber) continue;
      if (t.kind == Tok::kKeyword && (is_fundamental(t.text) || is_decl_qualifier(t.text))) continue;
      if (t.text == "," || t.text == "::" || t.text == "*" || t.text == "&" || t.text == "<" ||
          t.text == ">" || t.text == ">>") {
        continue;
      }
      return false;
    }
    return true;
  }

  void lambda(SyntaxTree& tree, std::size_t parent) {
    const std::size_t node = tree.add_child(parent, "Lambda");
    const std::size_t capture = tree.add_child(node, "Capture");
    expect("[");
    while (!at_end() && !is("]")) {
      tree.add_child(capture, leaf_label(cur()));
      ++pos_;
    }
    expect("]");
    if (is("(")) parameters(tree, node);
    while (is("mutable") || is("constexpr") || is("noexcept")) {
      tree.add_child(node, leaf_label(cur()));
      ++pos_;
    }
    if (accept("->")) type_specifier(tree, node);
    compound(tree, node);
  }

  std::vector<Token> toks_;
  std::size_t pos_ = 0;
  int depth_ = 0;
};

}  // namespace

SyntaxTree parse_ast(std::string_view code) {
  std::vector<Token> tokens = Lexer(code).run();
  if (tokens.empty()) throw Error(ErrorCode::kParse, "no tokens to parse");
  return Parser(std::move(tokens)).run();
}

}  // namespace cref
