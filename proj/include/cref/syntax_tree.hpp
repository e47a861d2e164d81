#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace cref {

/// Labeled ordered tree stored as a flat node array; node 0 is the root.
class SyntaxTree {
 public:
  struct Node {
    std::string label;
    std::vector<std::size_t> children;
  };

  SyntaxTree() = default;
  explicit SyntaxTree(std::string root_label);

  std::size_t add_child(std::size_t parent, std::string label);

  bool empty() const { return nodes_.empty(); }
  std::size_t size() const { return nodes_.size(); }
  static constexpr std::size_t root() { return 0; }
  const Node& node(std::size_t index) const { return nodes_[index]; }
  const std::string& label(std::size_t index) const { return nodes_[index].label; }
  const std::vector<std::size_t>& children(std::size_t index) const {
    return nodes_[index].children;
  }

  /// Node indices in post-order (children left to right, then parent).
  std::vector<std::size_t> postorder() const;
  std::size_t depth() const;

  /// Compact text form `a(b,c(d))`. Labels are escaped so that the form is
  /// unambiguous; from_sexpr() inverts it.
  std::string to_sexpr() const;
  static SyntaxTree from_sexpr(std::string_view text);

  /// Structural equality: labels and child order, independent of storage.
  friend bool operator==(const SyntaxTree& a, const SyntaxTree& b);

 private:
  std::vector<Node> nodes_;
};

/// Error-tolerant C/C++ parse. Comments and whitespace are dropped; literals
/// and identifiers become leaf labels; unparseable statements become `Error`
/// nodes. Throws Error(kParse) for lexical failures (unterminated literal or
/// comment) and for input without any tokens.
SyntaxTree parse_ast(std::string_view code);

/// Tree edit distance with unit insert/delete/relabel costs over ordered
/// trees (Zhang-Shasha). Empty trees are allowed on either side.
std::int64_t ted(const SyntaxTree& a, const SyntaxTree& b);

}  // namespace cref
