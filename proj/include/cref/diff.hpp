#pragma once

#include <cstddef>
#include <string>
#include <string_view>

namespace cref {

struct DiffStats {
  std::size_t added = 0;
  std::size_t removed = 0;

  bool operator==(const DiffStats&) const = default;
};

/// Line-based unified diff (LCS alignment, GNU hunk header conventions).
/// Returns "" when the texts are equal.
std::string unified_diff(std::string_view before, std::string_view after,
                         std::string_view before_name = "a", std::string_view after_name = "b",
                         std::size_t context = 3);

DiffStats diff_stats(std::string_view before, std::string_view after);

}  // namespace cref
