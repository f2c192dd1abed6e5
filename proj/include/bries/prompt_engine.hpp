#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "bries/taxonomy.hpp"

namespace bries::prompt {

/// One cell of the detector prompt grid: attack descriptions on/off crossed
/// with a confidence request on/off.
struct PromptStrategy {
  bool with_descriptions = false;
  bool with_confidence = false;

  friend bool operator==(const PromptStrategy&, const PromptStrategy&) = default;
  friend auto operator<=>(const PromptStrategy&, const PromptStrategy&) = default;

  static constexpr PromptStrategy base() { return {false, false}; }
  static constexpr PromptStrategy descriptions() { return {true, false}; }
  static constexpr PromptStrategy confidence() { return {false, true}; }
  static constexpr PromptStrategy combined() { return {true, true}; }
};

/// "0", "d0", "s0" or "d0s0".
std::string_view label(PromptStrategy s) noexcept;
std::optional<PromptStrategy> parse_strategy(std::string_view label) noexcept;

struct RenderedPrompt {
  std::string text;
  PromptStrategy strategy;
  std::string taxonomy_hash;
};

inline constexpr std::string_view kDetectorLead = "Identify any logical fallacies in the following text.";
inline constexpr std::string_view kConfidenceFormat = "attack - score: #";
inline constexpr std::string_view kConfidenceInstruction =
    "For each fallacy you identify, rate your confidence on a scale of 1 to 10 and respond "
    "with one line per fallacy in the format \"attack - score: #\".";
inline constexpr std::string_view kDefenderInstruction =
    "Read the original text and the list of fallacies found within the text and then rewrite "
    "the text to correct the issues. Make sure the rewritten text retains all of the same "
    "information as the original text. Only respond with the rewritten text. Do not add "
    "explanations or formatting.";

/// Renders the detector prompt. Throws Error(EmptyDocument) when `text` is
/// empty or whitespace only.
RenderedPrompt build_detector_prompt(const taxonomy::Taxonomy& tax, PromptStrategy strategy,
                                     std::string_view text);

/// Renders the defender (rewrite) prompt. The Attack slot carries the
/// detector's raw response, which may be empty.
RenderedPrompt build_defender_prompt(const taxonomy::Taxonomy& tax, std::string_view attacked_text,
                                     std::string_view detector_response);

}  // namespace bries::prompt
