#include "cref/diff.hpp"

#include <algorithm>
#include <cstdint>
#include <vector>

#include <fmt/format.h>

namespace cref {

namespace {

enum class Op { kEqual, kDelete, kInsert };

struct Edit {
  Op op;
  std::size_t a;  // line index in before (kEqual, kDelete)
  std::size_t b;  // line index in after (kEqual, kInsert)
};

/// Lines keep their terminating '\n' so a missing final newline is a change.
std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    const std::size_t nl = text.find('\n', start);
    const std::size_t end = nl == std::string_view::npos ? text.size() : nl + 1;
    lines.push_back(text.substr(start, end - start));
    start = end;
  }
  return lines;
}

std::vector<Edit> edit_script(const std::vector<std::string_view>& a,
                              const std::vector<std::string_view>& b) {
  const std::size_t n = a.size();
  const std::size_t m = b.size();
  // lcs[i][j] = LCS length of a[i..] and b[j..]
  std::vector<std::vector<std::uint32_t>> lcs(n + 1, std::vector<std::uint32_t>(m + 1, 0));
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t j = m; j-- > 0;) {
      lcs[i][j] = a[i] == b[j] ? lcs[i + 1][j + 1] + 1 : std::max(lcs[i + 1][j], lcs[i][j + 1]);
    }
  }
  std::vector<Edit> edits;
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < n || j < m) {
    if (i < n && j < m && a[i] == b[j]) {
      edits.push_back({Op::kEqual, i++, j++});
    } else if (j < m && (i == n || lcs[i][j + 1] > lcs[i + 1][j])) {
      edits.push_back({Op::kInsert, i, j++});
    } else {
      edits.push_back({Op::kDelete, i++, j});
    }
  }
  return edits;
}

std::string range(std::size_t start, std::size_t count) {
  // GNU convention: an empty range names the line before it.
  if (count == 1) return fmt::format("{}", start + 1);
  return fmt::format("{},{}", count == 0 ? start : start + 1, count);
}

void emit_line(std::string& out, char marker, std::string_view line) {
  out += marker;
  out.append(line);
  if (line.empty() || line.back() != '\n') out += "\n\\ No newline at end of file\n";
}

}  // namespace

std::string unified_diff(std::string_view before, std::string_view after,
                         std::string_view before_name, std::string_view after_name,
                         std::size_t context) {
  const auto a = split_lines(before);
  const auto b = split_lines(after);
  const std::vector<Edit> edits = edit_script(a, b);
  if (std::all_of(edits.begin(), edits.end(), [](const Edit& e) { return e.op == Op::kEqual; })) {
    return {};
  }

  std::string out = fmt::format("--- {}\n+++ {}\n", before_name, after_name);
  std::size_t k = 0;
  while (k < edits.size()) {
    // Next change.
    while (k < edits.size() && edits[k].op == Op::kEqual) ++k;
    if (k == edits.size()) break;
    std::size_t begin = k >= context ? k - context : 0;
    // Extend the hunk while changes are within 2*context equal lines.
    std::size_t end = k;
    while (end < edits.size()) {
      if (edits[end].op != Op::kEqual) {
        ++end;
        continue;
      }
      std::size_t run = end;
      while (run < edits.size() && edits[run].op == Op::kEqual) ++run;
      if (run == edits.size() || run - end > 2 * context) {
        end = std::min(edits.size(), end + context);
        break;
      }
      end = run;
    }
    std::size_t a_start = edits[begin].a;
    std::size_t b_start = edits[begin].b;
    std::size_t a_count = 0;
    std::size_t b_count = 0;
    for (std::size_t e = begin; e < end; ++e) {
      if (edits[e].op != Op::kInsert) ++a_count;
      if (edits[e].op != Op::kDelete) ++b_count;
    }
    out += fmt::format("@@ -{} +{} @@\n", range(a_start, a_count), range(b_start, b_count));
    for (std::size_t e = begin; e < end; ++e) {
      switch (edits[e].op) {
        case Op::kEqual: emit_line(out, ' ', a[edits[e].a]); break;
        case Op::kDelete: emit_line(out, '-', a[edits[e].a]); break;
        case Op::kInsert: emit_line(out, '+', b[edits[e].b]); break;
      }
    }
    k = end;
  }
  return out;
}

DiffStats diff_stats(std::string_view before, std::string_view after) {
  DiffStats stats;
  for (const Edit& e : edit_script(split_lines(before), split_lines(after))) {
    if (e.op == Op::kInsert) ++stats.added;
    if (e.op == Op::kDelete) ++stats.removed;
  }
  return stats;
}

}  // namespace cref
