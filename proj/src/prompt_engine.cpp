#include "bries/prompt_engine.hpp"

#include "bries/error.hpp"
#include "bries/util/text.hpp"

namespace bries::prompt {

std::string_view label(PromptStrategy s) noexcept {
  if (s.with_descriptions && s.with_confidence) return "d0s0";
  if (s.with_descriptions) return "d0";
  if (s.with_confidence) return "s0";
  return "0";
}

std::optional<PromptStrategy> parse_strategy(std::string_view raw) noexcept {
  if (raw == "0" || raw == "base") return PromptStrategy::base();
  if (raw == "d0") return PromptStrategy::descriptions();
  if (raw == "s0") return PromptStrategy::confidence();
  if (raw == "d0s0" || raw == "s0d0" || raw == "combined") return PromptStrategy::combined();
  return std::nullopt;
}

namespace {

std::string fallacy_list(const taxonomy::Taxonomy& tax, bool with_descriptions) {
  std::string out;
  if (!with_descriptions) {
    for (const auto& a : tax.canonical_attacks()) {
      if (!out.empty()) out += ", ";
      out += a.display_name;
    }
    return out;
  }
  // Descriptions are stored without a final period; every line but the last
  // gets one here and the skeleton supplies the last.
  for (const auto& a : tax.canonical_attacks()) {
    out += out.empty() ? "\n" : ".\n";
    out += a.display_name + ": " + a.description;
  }
  return out;
}

void require_document(std::string_view text) {
  if (util::trim(text).empty()) throw Error(ErrorCode::EmptyDocument, "document text is empty");
}

}  // namespace

RenderedPrompt build_detector_prompt(const taxonomy::Taxonomy& tax, PromptStrategy strategy,
                                     std::string_view text) {
  require_document(text);
  std::string out(kDetectorLead);
  out += " Here is a list of common fallacies to consider: ";
  out += fallacy_list(tax, strategy.with_descriptions);
  out += ". Text: ";
  out += text;
  out += ".";
  if (strategy.with_confidence) {
    out += "\n";
    out += kConfidenceInstruction;
  }
  return {std::move(out), strategy, tax.content_hash()};
}

RenderedPrompt build_defender_prompt(const taxonomy::Taxonomy& tax, std::string_view attacked_text,
                                     std::string_view detector_response) {
  require_document(attacked_text);
  std::string out(kDefenderInstruction);
  out += "\nOriginal Text: ";
  out += attacked_text;
  out += "\nAttack: ";
  out += detector_response;
  return {std::move(out), PromptStrategy::base(), tax.content_hash()};
}

}  // namespace bries::prompt
