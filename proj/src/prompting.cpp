#include "cref/prompting.hpp"

#include <algorithm>
#include <cctype>

#include <fmt/format.h>

#include "cref/error.hpp"
#include "cref/sandbox.hpp"

namespace cref {

namespace {

std::string_view trim_trailing_newlines(std::string_view text) {
  while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.remove_suffix(1);
  return text;
}

bool is_blank(std::string_view text) {
  return std::all_of(text.begin(), text.end(),
                     [](unsigned char c) { return std::isspace(c) != 0; });
}

std::string apply_cap(std::string entry, const PromptOptions& options, bool* truncated) {
  if (options.entry_byte_cap && entry.size() > *options.entry_byte_cap) {
    entry.resize(*options.entry_byte_cap);
    entry += "\n";
    entry += templates::kTruncationMarker;
    if (truncated) *truncated = true;
  }
  return entry;
}

EntryKind entry_kind(InfoKind kind) {
  switch (kind) {
    case InfoKind::kTutorGuidance: return EntryKind::kTutorGuidance;
    case InfoKind::kSolutionDescription: return EntryKind::kSolutionDescription;
    case InfoKind::kFailingTests: return EntryKind::kFailingTests;
  }
  return EntryKind::kCombined;
}

}  // namespace

char to_letter(InfoKind kind) {
  switch (kind) {
    case InfoKind::kTutorGuidance: return 'T';
    case InfoKind::kSolutionDescription: return 'S';
    case InfoKind::kFailingTests: return 'F';
  }
  return '?';
}

InfoSet::InfoSet(std::initializer_list<InfoKind> kinds) {
  for (InfoKind k : kinds) bits_ |= bit(k);
}

InfoSet InfoSet::with(InfoKind kind) const {
  InfoSet out = *this;
  out.bits_ |= bit(kind);
  return out;
}

std::size_t InfoSet::size() const { return members().size(); }

std::vector<InfoKind> InfoSet::members() const {
  std::vector<InfoKind> out;
  for (InfoKind k : {InfoKind::kTutorGuidance, InfoKind::kSolutionDescription,
                     InfoKind::kFailingTests}) {
    if (contains(k)) out.push_back(k);
  }
  return out;
}

std::string InfoSet::label() const {
  std::string out;
  for (InfoKind k : members()) {
    if (!out.empty()) out += '&';
    out += to_letter(k);
  }
  return out;
}

std::string InfoSet::compact() const {
  std::string out;
  for (InfoKind k : members()) out += to_letter(k);
  return out;
}

InfoSet InfoSet::parse(std::string_view text) {
  InfoSet out;
  for (char c : text) {
    switch (std::toupper(static_cast<unsigned char>(c))) {
      case 'T': out = out.with(InfoKind::kTutorGuidance); break;
      case 'S': out = out.with(InfoKind::kSolutionDescription); break;
      case 'F': out = out.with(InfoKind::kFailingTests); break;
      case ',': case '&': case ' ': case '+': break;
      default:
        throw Error(ErrorCode::kInvalidArgument, fmt::format("bad info set '{}'", text));
    }
  }
  return out;
}

std::vector<InfoSet> InfoSet::all_nonempty() {
  using K = InfoKind;
  return {InfoSet{K::kTutorGuidance},
          InfoSet{K::kSolutionDescription},
          InfoSet{K::kFailingTests},
          InfoSet{K::kTutorGuidance, K::kSolutionDescription},
          InfoSet{K::kTutorGuidance, K::kFailingTests},
          InfoSet{K::kSolutionDescription, K::kFailingTests},
          InfoSet{K::kTutorGuidance, K::kSolutionDescription, K::kFailingTests}};
}

std::string_view to_string(EntryKind kind) {
  switch (kind) {
    case EntryKind::kContext: return "context";
    case EntryKind::kTutorGuidance: return "T";
    case EntryKind::kSolutionDescription: return "S";
    case EntryKind::kFailingTests: return "F";
    case EntryKind::kTask: return "task";
    case EntryKind::kCombined: return "combined";
  }
  return "?";
}

std::string render_description(const Problem& problem) {
  std::string out = fmt::format("# {}\n\n{}", trim_trailing_newlines(problem.title),
                                trim_trailing_newlines(problem.statement));
  if (!is_blank(problem.input_format)) {
    out += fmt::format("\n### Input Format\n{}", trim_trailing_newlines(problem.input_format));
  }
  if (!is_blank(problem.output_format)) {
    out += fmt::format("\n### Output Format\n{}", trim_trailing_newlines(problem.output_format));
  }
  out += fmt::format("\n### Time Limit\n{}ms\n### Memory Limit\n{}KB", problem.time_limit_ms,
                     problem.memory_limit_kb);
  return out;
}

std::string fence_for(std::string_view code) {
  std::size_t longest = 0;
  std::size_t run = 0;
  for (char c : code) {
    run = (c == '`') ? run + 1 : 0;
    longest = std::max(longest, run);
  }
  return std::string(std::max<std::size_t>(3, longest + 1), '`');
}

std::string render_context(const Problem& problem, std::string_view incorrect_code) {
  if (is_blank(incorrect_code)) {
    throw Error(ErrorCode::kInvalidArgument, "empty incorrect code");
  }
  const std::string_view code = trim_trailing_newlines(incorrect_code);
  const std::string fence = fence_for(code);
  return fmt::format("{}\n{}\n{}\n{}\n{}\n{}", templates::kDescriptionIntro,
                     render_description(problem), templates::kIncorrectCodeIntro, fence, code,
                     fence);
}

std::string render_baseline(const Problem& problem, std::string_view incorrect_code) {
  return fmt::format("{}\n{}", render_context(problem, incorrect_code), templates::kTask);
}

std::string render_info_entry(InfoKind kind, const InfoPayloads& payloads) {
  switch (kind) {
    case InfoKind::kTutorGuidance: {
      if (!payloads.tutor_guidance || is_blank(*payloads.tutor_guidance)) {
        throw Error(ErrorCode::kInvalidArgument, "missing tutor guidance payload");
      }
      return std::string(trim_trailing_newlines(*payloads.tutor_guidance));
    }
    case InfoKind::kSolutionDescription: {
      if (!payloads.solution_description || is_blank(*payloads.solution_description)) {
        throw Error(ErrorCode::kInvalidArgument, "missing solution description payload");
      }
      return fmt::format("{}\n{}", templates::kSolutionIntro,
                         trim_trailing_newlines(*payloads.solution_description));
    }
    case InfoKind::kFailingTests: {
      if (!payloads.failing_tests) {
        throw Error(ErrorCode::kInvalidArgument, "missing failing tests payload");
      }
      if (payloads.failing_tests->empty()) {
        throw Error(ErrorCode::kInvalidArgument, "failing tests entry needs at least one case");
      }
      std::string out(templates::kFailingTestsIntro);
      for (const auto& t : *payloads.failing_tests) {
        out += fmt::format("\n{}\n{}\n{}\n{}", templates::kInputLabel,
                           trim_trailing_newlines(t.input_text), templates::kOutputLabel,
                           trim_trailing_newlines(t.expected_output_text));
      }
      return out;
    }
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown info kind");
}

std::vector<TestCase> failing_tests_of(const Problem& problem, const RunReport& report) {
  std::vector<TestCase> out;
  for (const TestCase& t : problem.test_cases) {
    if (std::find(report.failing_cases.begin(), report.failing_cases.end(), t.index) !=
        report.failing_cases.end()) {
      out.push_back(t);
    }
  }
  return out;
}

PromptBundle build_bundle(const Problem& problem, std::string_view incorrect_code, InfoSet info,
                          const InfoPayloads& payloads, const PromptOptions& options) {
  if (info.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "empty info set; use the baseline prompt");
  }
  PromptBundle bundle;
  const std::string context = render_context(problem, incorrect_code);
  const auto members = info.members();
  if (members.size() == 1) {
    const std::string entry =
        apply_cap(render_info_entry(members.front(), payloads), options, &bundle.truncated);
    bundle.entries.push_back(fmt::format("{}\n{}\n{}", context, entry, templates::kTask));
    bundle.kinds.push_back(EntryKind::kCombined);
    return bundle;
  }
  bundle.entries.push_back(context);
  bundle.kinds.push_back(EntryKind::kContext);
  for (InfoKind kind : members) {
    bundle.entries.push_back(apply_cap(render_info_entry(kind, payloads), options, &bundle.truncated));
    bundle.kinds.push_back(entry_kind(kind));
  }
  bundle.entries.emplace_back(templates::kTask);
  bundle.kinds.push_back(EntryKind::kTask);
  return bundle;
}

std::string render_followup(InfoKind kind, const InfoPayloads& payloads,
                            const PromptOptions& options, bool* truncated) {
  return fmt::format("{}\n{}", apply_cap(render_info_entry(kind, payloads), options, truncated),
                     templates::kTask);
}

// ------------------------------------------------------------ extraction --

namespace {

struct Line {
  std::size_t begin;
  std::size_t end;  // exclusive, excludes '\n'
};

std::vector<Line> split_lines(std::string_view text) {
  std::vector<Line> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    lines.push_back({start, end});
    start = end + 1;
  }
  return lines;
}

/// Number of leading backticks after at most three spaces, or 0.
std::size_t fence_run(std::string_view line, std::size_t* after) {
  std::size_t i = 0;
  while (i < line.size() && i < 3 && line[i] == ' ') ++i;
  std::size_t n = 0;
  while (i + n < line.size() && line[i + n] == '`') ++n;
  if (after) *after = i + n;
  return n >= 3 ? n : 0;
}

bool is_cpp_tag(std::string_view info) {
  std::string word;
  for (char c : info) {
    if (std::isspace(static_cast<unsigned char>(c)) || c == '{') break;
    word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  static constexpr std::string_view kTags[] = {"c",   "cpp", "c++", "cc",  "cxx",
                                               "h",   "hpp", "hxx", "cplusplus"};
  return std::find(std::begin(kTags), std::end(kTags), word) != std::end(kTags);
}

}  // namespace

std::vector<FencedBlock> find_fenced_blocks(std::string_view text) {
  std::vector<FencedBlock> blocks;
  const auto lines = split_lines(text);
  std::size_t i = 0;
  while (i < lines.size()) {
    const std::string_view line = text.substr(lines[i].begin, lines[i].end - lines[i].begin);
    std::size_t after = 0;
    const std::size_t run = fence_run(line, &after);
    std::string_view info = run ? line.substr(after) : std::string_view{};
    if (run == 0 || info.find('`') != std::string_view::npos) {
      ++i;
      continue;
    }
    while (!info.empty() && std::isspace(static_cast<unsigned char>(info.front()))) info.remove_prefix(1);
    while (!info.empty() && std::isspace(static_cast<unsigned char>(info.back()))) info.remove_suffix(1);

    FencedBlock block;
    block.info = std::string(info);
    block.offset = std::min(lines[i].end + 1, text.size());
    std::size_t j = i + 1;
    std::size_t content_end = text.size();
    for (; j < lines.size(); ++j) {
      const std::string_view candidate =
          text.substr(lines[j].begin, lines[j].end - lines[j].begin);
      std::size_t close_after = 0;
      const std::size_t close_run = fence_run(candidate, &close_after);
      if (close_run >= run &&
          candidate.find_first_not_of(" \t\r", close_after) == std::string_view::npos) {
        content_end = lines[j].begin;
        break;
      }
    }
    // Content excludes the newline that precedes the closing fence.
    if (content_end > block.offset && text[content_end - 1] == '\n') --content_end;
    block.length = content_end > block.offset ? content_end - block.offset : 0;
    blocks.push_back(block);
    i = j + 1;
  }
  return blocks;
}

std::optional<std::string> extract_code(std::string_view response, ExtractOptions options) {
  auto blocks = find_fenced_blocks(response);
  std::erase_if(blocks, [&](const FencedBlock& b) {
    return is_blank(response.substr(b.offset, b.length));
  });
  auto pick = [&](auto predicate) -> std::optional<std::string> {
    if (options.prefer_last) {
      for (auto it = blocks.rbegin(); it != blocks.rend(); ++it) {
        if (predicate(*it)) return std::string(response.substr(it->offset, it->length));
      }
    } else {
      for (const auto& b : blocks) {
        if (predicate(b)) return std::string(response.substr(b.offset, b.length));
      }
    }
    return std::nullopt;
  };
  if (auto tagged = pick([](const FencedBlock& b) { return is_cpp_tag(b.info); })) return tagged;
  if (auto any = pick([](const FencedBlock&) { return true; })) return any;
  if (response.find("int main") != std::string_view::npos) return std::string(response);
  return std::nullopt;
}

}  // namespace cref
