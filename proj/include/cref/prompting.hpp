#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cref/corpus.hpp"

namespace cref {

struct RunReport;

/// Bumped whenever any template wording changes; part of every run manifest.
inline constexpr std::string_view kTemplateVersion = "1";

enum class InfoKind { kTutorGuidance, kSolutionDescription, kFailingTests };

char to_letter(InfoKind kind);

/// Subset of {T, S, F}. Members always iterate in the fixed order T, S, F.
class InfoSet {
 public:
  constexpr InfoSet() = default;
  InfoSet(std::initializer_list<InfoKind> kinds);

  bool contains(InfoKind kind) const { return (bits_ & bit(kind)) != 0; }
  InfoSet with(InfoKind kind) const;
  bool empty() const { return bits_ == 0; }
  std::size_t size() const;
  std::vector<InfoKind> members() const;

  /// "T&S&F" style label (report names).
  std::string label() const;
  /// "TSF" style compact form (directory names).
  std::string compact() const;
  /// Accepts "T,S,F", "T&S&F", "TSF", case-insensitive.
  static InfoSet parse(std::string_view text);
  /// The seven non-empty subsets in a fixed order: T, S, F, T&S, T&F, S&F, T&S&F.
  static std::vector<InfoSet> all_nonempty();

  bool operator==(const InfoSet&) const = default;

 private:
  static constexpr unsigned bit(InfoKind k) { return 1u << static_cast<unsigned>(k); }
  unsigned bits_ = 0;
};

enum class EntryKind { kContext, kTutorGuidance, kSolutionDescription, kFailingTests, kTask, kCombined };

std::string_view to_string(EntryKind kind);

/// Ordered conversational entries; only the last one asks for a repair.
struct PromptBundle {
  std::vector<std::string> entries;
  std::vector<EntryKind> kinds;
  bool truncated = false;
};

struct InfoPayloads {
  std::optional<std::string> tutor_guidance;
  std::optional<std::string> solution_description;
  std::optional<std::vector<TestCase>> failing_tests;
};

struct PromptOptions {
  /// Per info entry byte cap; unset = never truncate.
  std::optional<std::size_t> entry_byte_cap;
};

namespace templates {
inline constexpr std::string_view kDescriptionIntro = "This is a programming problem description:";
inline constexpr std::string_view kIncorrectCodeIntro = "This is an incorrect code to the problem:";
inline constexpr std::string_view kTask =
    "You are a software engineer. Can you repair the incorrect code?";
inline constexpr std::string_view kSolutionIntro = "This is a solution to the problem:";
inline constexpr std::string_view kFailingTestsIntro =
    "This incorrect code failed to pass the following test cases:";
inline constexpr std::string_view kInputLabel = "[INPUT]";
inline constexpr std::string_view kOutputLabel = "[OUTPUT]";
inline constexpr std::string_view kTruncationMarker = "[truncated]";
/// Synthesized assistant reply to intermediate entries.
inline constexpr std::string_view kAcknowledgement = "OK.";
}  // namespace templates

/// Problem statement block in the benchmark's markdown layout.
std::string render_description(const Problem& problem);

/// Backtick fence long enough that `code` cannot close it early.
std::string fence_for(std::string_view code);

/// Throws Error(kInvalidArgument) "empty incorrect code".
std::string render_baseline(const Problem& problem, std::string_view incorrect_code);

/// Description plus fenced incorrect code, without the task sentence.
std::string render_context(const Problem& problem, std::string_view incorrect_code);

/// Throws Error(kInvalidArgument) when the payload is missing or empty, and
/// for F when there are no failing cases.
std::string render_info_entry(InfoKind kind, const InfoPayloads& payloads);

/// The test cases of `problem` listed in `report.failing_cases`, index order.
std::vector<TestCase> failing_tests_of(const Problem& problem, const RunReport& report);

/// Multi-info bundles: context, one entry per member (T, S, F order), task.
/// Single-info bundles collapse into one combined entry.
PromptBundle build_bundle(const Problem& problem, std::string_view incorrect_code, InfoSet info,
                          const InfoPayloads& payloads, const PromptOptions& options = {});

/// One follow-up turn inside an ongoing conversation: the info entry followed
/// by the task sentence.
std::string render_followup(InfoKind kind, const InfoPayloads& payloads,
                            const PromptOptions& options = {}, bool* truncated = nullptr);

struct ExtractOptions {
  bool prefer_last = true;
};

/// Cascade: last C/C++-tagged fenced block; else last fenced block; else the
/// whole response if it contains "int main"; else nothing.
std::optional<std::string> extract_code(std::string_view response, ExtractOptions options = {});

struct FencedBlock {
  std::string info;
  std::size_t offset = 0;  // content position in the source text
  std::size_t length = 0;
};

std::vector<FencedBlock> find_fenced_blocks(std::string_view text);

}  // namespace cref
