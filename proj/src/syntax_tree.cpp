#include "cref/syntax_tree.hpp"

#include <algorithm>
#include <limits>
#include <unordered_map>

#include <fmt/format.h>

#include "cref/error.hpp"

namespace cref {

SyntaxTree::SyntaxTree(std::string root_label) { nodes_.push_back({std::move(root_label), {}}); }

std::size_t SyntaxTree::add_child(std::size_t parent, std::string label) {
  const std::size_t index = nodes_.size();
  nodes_.push_back({std::move(label), {}});
  nodes_[parent].children.push_back(index);
  return index;
}

std::vector<std::size_t> SyntaxTree::postorder() const {
  std::vector<std::size_t> order;
  if (nodes_.empty()) return order;
  order.reserve(nodes_.size());
  // (node, next child position)
  std::vector<std::pair<std::size_t, std::size_t>> stack{{0, 0}};
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < nodes_[node].children.size()) {
      const std::size_t child = nodes_[node].children[next++];
      stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

std::size_t SyntaxTree::depth() const {
  if (nodes_.empty()) return 0;
  std::size_t best = 0;
  std::vector<std::pair<std::size_t, std::size_t>> stack{{0, 1}};
  while (!stack.empty()) {
    auto [node, d] = stack.back();
    stack.pop_back();
    best = std::max(best, d);
    for (std::size_t c : nodes_[node].children) stack.emplace_back(c, d + 1);
  }
  return best;
}

namespace {

void escape_into(std::string& out, std::string_view label) {
  for (char c : label) {
    if (c == '(' || c == ')' || c == ',' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
}

}  // namespace

std::string SyntaxTree::to_sexpr() const {
  std::string out;
  if (nodes_.empty()) return out;
  // (node, next child position)
  std::vector<std::pair<std::size_t, std::size_t>> stack{{0, 0}};
  escape_into(out, nodes_[0].label);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    const auto& kids = nodes_[node].children;
    if (next < kids.size()) {
      out.push_back(next == 0 ? '(' : ',');
      const std::size_t child = kids[next++];
      escape_into(out, nodes_[child].label);
      stack.emplace_back(child, 0);
    } else {
      if (!kids.empty()) out.push_back(')');
      stack.pop_back();
    }
  }
  return out;
}

SyntaxTree SyntaxTree::from_sexpr(std::string_view text) {
  SyntaxTree tree;
  if (text.empty()) return tree;
  std::size_t pos = 0;
  auto read_label = [&] {
    std::string label;
    while (pos < text.size()) {
      const char c = text[pos];
      if (c == '\\' && pos + 1 < text.size()) {
        label.push_back(text[pos + 1]);
        pos += 2;
        continue;
      }
      if (c == '(' || c == ')' || c == ',') break;
      label.push_back(c);
      ++pos;
    }
    return label;
  };
  tree.nodes_.push_back({read_label(), {}});
  std::vector<std::size_t> parents;
  std::size_t last = 0;
  while (pos < text.size()) {
    const char c = text[pos++];
    if (c == '(') {
      parents.push_back(last);
      last = tree.add_child(parents.back(), read_label());
    } else if (c == ',') {
      if (parents.empty()) throw Error(ErrorCode::kParse, "bad tree text: stray ','");
      last = tree.add_child(parents.back(), read_label());
    } else if (c == ')') {
      if (parents.empty()) throw Error(ErrorCode::kParse, "bad tree text: unbalanced ')'");
      last = parents.back();
      parents.pop_back();
    }
  }
  if (!parents.empty()) throw Error(ErrorCode::kParse, "bad tree text: unbalanced '('");
  return tree;
}

bool operator==(const SyntaxTree& a, const SyntaxTree& b) {
  if (a.size() != b.size()) return false;
  if (a.empty()) return true;
  std::vector<std::pair<std::size_t, std::size_t>> stack{{0, 0}};
  while (!stack.empty()) {
    auto [x, y] = stack.back();
    stack.pop_back();
    const auto& nx = a.nodes_[x];
    const auto& ny = b.nodes_[y];
    if (nx.label != ny.label || nx.children.size() != ny.children.size()) return false;
    for (std::size_t i = 0; i < nx.children.size(); ++i) {
      stack.emplace_back(nx.children[i], ny.children[i]);
    }
  }
  return true;
}

// ------------------------------------------------------------------- TED --

namespace {

/// Post-order view used by Zhang-Shasha: 1-based label ids, leftmost leaf
/// descendants and keyroots.
struct Indexed {
  std::vector<int> labels;    // [1..n]
  std::vector<int> leftmost;  // [1..n]
  std::vector<int> keyroots;  // ascending
};

Indexed index_tree(const SyntaxTree& tree, std::unordered_map<std::string, int>& dictionary) {
  Indexed out;
  const auto order = tree.postorder();
  const int n = static_cast<int>(order.size());
  out.labels.assign(n + 1, 0);
  out.leftmost.assign(n + 1, 0);
  std::vector<int> position(tree.size(), 0);
  for (int i = 0; i < n; ++i) position[order[i]] = i + 1;
  for (int i = 1; i <= n; ++i) {
    const std::size_t node = order[i - 1];
    auto [it, _] = dictionary.emplace(tree.label(node), static_cast<int>(dictionary.size()));
    out.labels[i] = it->second;
    const auto& kids = tree.children(node);
    out.leftmost[i] = kids.empty() ? i : out.leftmost[position[kids.front()]];
  }
  // A keyroot is the highest-numbered node for each distinct leftmost leaf.
  std::vector<int> highest(n + 1, 0);
  for (int i = 1; i <= n; ++i) highest[out.leftmost[i]] = i;
  for (int i = 1; i <= n; ++i) {
    if (highest[out.leftmost[i]] == i) out.keyroots.push_back(i);
  }
  return out;
}

}  // namespace

std::int64_t ted(const SyntaxTree& a, const SyntaxTree& b) {
  if (a.empty()) return static_cast<std::int64_t>(b.size());
  if (b.empty()) return static_cast<std::int64_t>(a.size());
  std::unordered_map<std::string, int> dictionary;
  const Indexed x = index_tree(a, dictionary);
  const Indexed y = index_tree(b, dictionary);
  const int n = static_cast<int>(a.size());
  const int m = static_cast<int>(b.size());

  std::vector<int> tree_dist(static_cast<std::size_t>(n + 1) * (m + 1), 0);
  auto td = [&](int i, int j) -> int& { return tree_dist[static_cast<std::size_t>(i) * (m + 1) + j]; };
  std::vector<int> forest(static_cast<std::size_t>(n + 2) * (m + 2), 0);

  for (int i1 : x.keyroots) {
    for (int j1 : y.keyroots) {
      const int li = x.leftmost[i1];
      const int lj = y.leftmost[j1];
      const int rows = i1 - li + 2;
      const int cols = j1 - lj + 2;
      // fd(r, c) is the forest distance of A[li..li+r-1] vs B[lj..lj+c-1].
      auto fd = [&](int r, int c) -> int& { return forest[static_cast<std::size_t>(r) * cols + c]; };
      fd(0, 0) = 0;
      for (int r = 1; r < rows; ++r) fd(r, 0) = fd(r - 1, 0) + 1;
      for (int c = 1; c < cols; ++c) fd(0, c) = fd(0, c - 1) + 1;
      for (int r = 1; r < rows; ++r) {
        const int i = li + r - 1;
        for (int c = 1; c < cols; ++c) {
          const int j = lj + c - 1;
          const int del = fd(r - 1, c) + 1;
          const int ins = fd(r, c - 1) + 1;
          if (x.leftmost[i] == li && y.leftmost[j] == lj) {
            const int ren = fd(r - 1, c - 1) + (x.labels[i] == y.labels[j] ? 0 : 1);
            fd(r, c) = std::min({del, ins, ren});
            td(i, j) = fd(r, c);
          } else {
            const int sub = fd(x.leftmost[i] - li, y.leftmost[j] - lj) + td(i, j);
            fd(r, c) = std::min({del, ins, sub});
          }
        }
      }
    }
  }
  return td(n, m);
}

}  // namespace cref
