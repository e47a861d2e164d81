#include <doctest.h>

#include <random>

#include "cref/corpus.hpp"
#include "cref/error.hpp"
#include "cref/syntax_tree.hpp"
#include "oracles.hpp"

using cref::parse_ast;
using cref::SyntaxTree;

namespace {

// Replaces every whitespace run outside literals with a random equivalent
// (spaces, tabs, newlines, comments). Runs containing a newline keep one;
// preprocessor lines only get spaces and tabs.
std::string perturb(const std::string& code, std::mt19937_64& rng) {
  std::string out;
  bool in_string = false;
  bool in_char = false;
  bool in_preproc = false;
  bool line_start = true;
  std::uniform_int_distribution<int> pick(0, 5);
  for (std::size_t i = 0; i < code.size();) {
    const char c = code[i];
    if (in_string || in_char) {
      out.push_back(c);
      if (c == '\\' && i + 1 < code.size()) {
        out.push_back(code[i + 1]);
        i += 2;
        continue;
      }
      if ((in_string && c == '"') || (in_char && c == '\'')) in_string = in_char = false;
      ++i;
      continue;
    }
    if (c == ' ' || c == '\t' || c == '\n') {
      std::size_t j = i;
      bool newline = false;
      while (j < code.size() && (code[j] == ' ' || code[j] == '\t' || code[j] == '\n')) {
        newline = newline || code[j] == '\n';
        ++j;
      }
      std::string ws;
      if (in_preproc && !newline) {
        ws = pick(rng) % 2 ? "\t" : "   ";
      } else if (in_preproc) {
        ws = " \n";
      } else {
        switch (pick(rng)) {
          case 0: ws = " "; break;
          case 1: ws = "\t\t"; break;
          case 2: ws = " /* note */ "; break;
          case 3: ws = "\n\n  "; break;
          case 4: ws = " // trailing remark\n"; break;
          default: ws = "\n/* multi\n line */\n"; break;
        }
        if (newline && ws.find('\n') == std::string::npos) ws += "\n";
      }
      out += ws;
      if (newline) {
        in_preproc = false;
        line_start = true;
      }
      i = j;
      continue;
    }
    if (line_start && c == '#') in_preproc = true;
    line_start = false;
    if (c == '"') in_string = true;
    if (c == '\'') in_char = true;
    out.push_back(c);
    ++i;
  }
  return out;
}

}  // namespace

TEST_CASE("minimal program parses to the frozen nine-node tree") {
  const SyntaxTree t = parse_ast("int main(){return 0;}");
  CHECK(t.size() == 9);
  CHECK(t.to_sexpr() ==
        "TranslationUnit(Function(Type(Keyword:int),Ident:main,Params,Compound(Return(Num:0))))");
}

TEST_CASE("comments and whitespace never change the tree") {
  const cref::Corpus corpus = cref::ingest(oracle::fixture("corpus"));
  std::mt19937_64 rng(11);
  for (const auto& s : corpus.submissions()) {
    for (const std::string* code : {&s.incorrect_code, &s.corrected_code}) {
      const SyntaxTree base = parse_ast(*code);
      CHECK(base.size() > 20);
      for (int round = 0; round < 10; ++round) {
        const std::string variant = perturb(*code, rng);
        CHECK_MESSAGE(parse_ast(variant) == base, variant);
      }
    }
  }
}

TEST_CASE("preprocessor spacing is normalized") {
  CHECK(parse_ast("#include <cstdio>\nint x;") == parse_ast("#  include   <cstdio>\nint x;"));
}

TEST_CASE("expressions keep precedence and associativity") {
  const SyntaxTree t = parse_ast("int f(){return a+b*c-d;}");
  const std::string s = t.to_sexpr();
  CHECK(s.find("Binary:-(Binary:+(Ident:a,Binary:*(Ident:b,Ident:c)),Ident:d)") != std::string::npos);
  const std::string assign = parse_ast("void g(){a=b=c;}").to_sexpr();
  CHECK(assign.find("Assign:=(Ident:a,Assign:=(Ident:b,Ident:c))") != std::string::npos);
}

TEST_CASE("different programs give different trees") {
  CHECK_FALSE(parse_ast("int main(){return a+b;}") == parse_ast("int main(){return a-b;}"));
  CHECK_FALSE(parse_ast("int main(){return a+b;}") == parse_ast("int main(){return b+a;}"));
}

TEST_CASE("broken statements become Error nodes and parsing continues") {
  const SyntaxTree t = parse_ast("int main(){ int x = ; return 0; }");
  const std::string s = t.to_sexpr();
  CHECK(s.find("Error") != std::string::npos);
  CHECK(s.find("Return(Num:0)") != std::string::npos);
  CHECK(parse_ast("}}}{{{").size() > 1);
}

TEST_CASE("modern constructs parse without Error nodes") {
  const char* code = R"(
#include <bits/stdc++.h>
using namespace std;
template <typename T> struct Box { T v; Box(T x) : v(x) {} T get() const { return v; } };
enum Color { Red, Green = 2 };
int main() {
  vector<pair<int, int>> v{{1, 2}, {3, 4}};
  auto f = [&](int x) -> int { return x * 2; };
  for (auto& [a, b] : v) cout << f(a) + b << '\n';
  long long s = static_cast<long long>(v.size()) << 2;
  int* p = new int[3];
  delete[] p;
  switch (s) { case 1: break; default: s ^= 1; }
  do { s--; } while (s > 0 && !false);
  cout << (s ? "yes" : "no") << endl;
  return 0;
}
)";
  const std::string s = parse_ast(code).to_sexpr();
  CHECK(s.find("Error") == std::string::npos);
  CHECK(s.find("Lambda") != std::string::npos);
  CHECK(s.find("RangeFor") != std::string::npos);
}

TEST_CASE("lexical failures raise parse errors") {
  CHECK_THROWS_AS(parse_ast("int main(){ /* never closed"), cref::Error);
  CHECK_THROWS_AS(parse_ast("char* s = \"open"), cref::Error);
  CHECK_THROWS_AS(parse_ast("   \n // only a comment\n"), cref::Error);
  try {
    parse_ast("int a;\nchar* s = \"open");
  } catch (const cref::Error& e) {
    CHECK(e.code() == cref::ErrorCode::kParse);
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("deep nesting does not overflow the stack") {
  std::string code = "int main(){return ";
  code += std::string(3000, '(') + "1" + std::string(3000, ')') + ";}";
  CHECK_NOTHROW(parse_ast(code));
}
