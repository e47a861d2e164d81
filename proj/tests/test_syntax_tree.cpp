#include <doctest.h>

#include <random>

#include "cref/error.hpp"
#include "cref/syntax_tree.hpp"
#include "oracles.hpp"

using cref::SyntaxTree;
using cref::ted;

TEST_CASE("sexpr round trip keeps labels with separators") {
  SyntaxTree t("Binary:,");
  const auto a = t.add_child(0, "Ident:(x)");
  t.add_child(a, "Str:\"a\\b\"");
  t.add_child(0, "Num:1");
  const SyntaxTree back = SyntaxTree::from_sexpr(t.to_sexpr());
  CHECK(back == t);
  CHECK(back.size() == 4);
  CHECK(t.depth() == 3);
}

TEST_CASE("postorder visits children before parents") {
  const SyntaxTree t = SyntaxTree::from_sexpr("a(b(c,d),e)");
  std::vector<std::string> labels;
  for (auto i : t.postorder()) labels.push_back(t.label(i));
  CHECK(labels == std::vector<std::string>{"c", "d", "b", "e", "a"});
}

TEST_CASE("ted on small hand cases") {
  const auto t = [](const char* s) { return SyntaxTree::from_sexpr(s); };
  CHECK(ted(t("a"), t("a")) == 0);
  CHECK(ted(t("a"), t("b")) == 1);
  CHECK(ted(t("a(b,c)"), t("a(c)")) == 1);
  CHECK(ted(t("a(b(c,d))"), t("a(c,d)")) == 1);
  CHECK(ted(t("a(b,c)"), t("a(c,b)")) == 2);
  CHECK(ted(SyntaxTree{}, t("a(b,c)")) == 3);
  CHECK(ted(t("a(b,c)"), SyntaxTree{}) == 3);
  CHECK(ted(SyntaxTree{}, SyntaxTree{}) == 0);
  // classic Zhang-Shasha example
  CHECK(ted(t("f(d(a,c(b)),e)"), t("f(c(d(a,b)),e)")) == 2);
}

TEST_CASE("ted equals exhaustive edit-script cost on all trees up to 5 nodes") {
  const oracle::EditGraph graph(5, "ab");
  std::vector<int> trees;
  for (std::size_t id = 0; id < graph.size(); ++id) {
    if (graph.is_tree(static_cast<int>(id))) trees.push_back(static_cast<int>(id));
  }
  REQUIRE(trees.size() == 550);
  std::vector<SyntaxTree> converted;
  for (int id : trees) converted.push_back(oracle::to_tree(graph.forest(id).front()));
  std::size_t mismatches = 0;
  for (std::size_t i = 0; i < trees.size(); ++i) {
    const auto dist = graph.distances_from(trees[i]);
    for (std::size_t j = 0; j < trees.size(); ++j) {
      if (ted(converted[i], converted[j]) != dist[trees[j]]) ++mismatches;
    }
  }
  CHECK(mismatches == 0);
}

TEST_CASE("ted is a metric on random trees") {
  std::mt19937_64 rng(7);
  std::vector<SyntaxTree> trees;
  for (int i = 0; i < 120; ++i) trees.push_back(oracle::random_tree(rng, 10, "abc"));
  const std::size_t n = trees.size();
  std::vector<std::int64_t> d(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) d[i * n + j] = ted(trees[i], trees[j]);
  }
  for (std::size_t i = 0; i < n; ++i) {
    CHECK(d[i * n + i] == 0);
    for (std::size_t j = 0; j < n; ++j) {
      CHECK(d[i * n + j] == d[j * n + i]);
      CHECK((d[i * n + j] == 0) == (trees[i] == trees[j]));
      CHECK(d[i * n + j] <= static_cast<std::int64_t>(trees[i].size() + trees[j].size()));
      for (std::size_t k = 0; k < n; ++k) {
        if (d[i * n + k] > d[i * n + j] + d[j * n + k]) FAIL("triangle inequality violated");
      }
    }
  }
}

TEST_CASE("from_sexpr rejects malformed text") {
  CHECK_THROWS_AS(SyntaxTree::from_sexpr("a(b"), cref::Error);
  CHECK_THROWS_AS(SyntaxTree::from_sexpr("a)b"), cref::Error);
}

TEST_CASE("ted agrees with the recursive forest recurrence on parsed programs") {
  const char* programs[] = {"int main(){}", "int main(){return 0;}", "struct A{}; struct B{};",
                            "int x;", "int main(){int a,b,c;}", "int f(int a){return a+1;}"};
  for (const char* a : programs) {
    for (const char* b : programs) {
      const SyntaxTree ta = cref::parse_ast(a);
      const SyntaxTree tb = cref::parse_ast(b);
      CHECK_MESSAGE(ted(ta, tb) == oracle::recursive_ted(ta, tb), a, " vs ", b);
    }
  }
  std::mt19937_64 rng(3);
  for (int i = 0; i < 200; ++i) {
    const SyntaxTree x = oracle::random_tree(rng, 9, "abcd");
    const SyntaxTree y = oracle::random_tree(rng, 9, "abcd");
    CHECK(ted(x, y) == oracle::recursive_ted(x, y));
  }
}
