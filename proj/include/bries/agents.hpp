#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "bries/llm_gateway.hpp"
#include "bries/prompt_engine.hpp"
#include "bries/taxonomy.hpp"

namespace bries::agents {

using taxonomy::AttackType;

/// Predicted attack types with optional confidence (1-10). Map keys keep the
/// set ordered canonically and unique.
using Prediction = std::map<AttackType, std::optional<int>>;

struct ParsedDetection {
  Prediction predicted;
  std::vector<std::string> unparsed_fragments;
};

struct DetectionResult {
  std::string document_id;
  std::string model_id;
  prompt::PromptStrategy strategy;
  double temperature = 0.0;
  Prediction predicted;
  std::vector<std::string> unparsed_fragments;
  std::string raw_text;
};

struct DefenseResult {
  std::string document_id;
  std::string model_id;
  std::string inoculated_text;
  std::string source_detection_raw;
};

/// Total parser for detector responses.
///
/// Segments on newlines and semicolons, strips list markers ("1.", "2)",
/// "-", "*", bullets). Under a confidence strategy each segment must look
/// like `<name> - score: <n>`; scores are rounded and clamped to [1, 10] and
/// the raw token of any adjusted score is kept as a fragment. Segments
/// without a score under a confidence strategy are fragments. Without a
/// confidence strategy, bare names are matched (a trailing score, if the
/// model volunteers one, is ignored), falling back to the text before ':'
/// and then to comma-separated pieces. A whole response of "none" or one
/// starting with "no fallacies" yields an empty prediction.
ParsedDetection parse_detection(const taxonomy::Taxonomy& tax, std::string_view raw_text,
                                prompt::PromptStrategy strategy);

/// Canonical writer: one `Name - score: n` line per prediction (or bare
/// names when confidence is absent). parse_detection inverts it exactly.
std::string format_detection(const taxonomy::Taxonomy& tax, const Prediction& predicted);

struct AgentContext {
  const taxonomy::Taxonomy& tax;
  const gateway::Gateway& gateway;
  int max_tokens = 1024;
};

gateway::CompletionRequest detector_request(const AgentContext& ctx, std::string_view document_id,
                                            std::string_view document, std::string_view model_id,
                                            prompt::PromptStrategy strategy, double temperature);

DetectionResult detection_from_completion(const AgentContext& ctx, std::string_view document_id,
                                          std::string_view model_id,
                                          prompt::PromptStrategy strategy, double temperature,
                                          std::string raw_text);

/// prompt -> gateway -> parse. Gateway errors propagate.
DetectionResult detect(const AgentContext& ctx, std::string_view document_id,
                       std::string_view document, std::string_view model_id,
                       prompt::PromptStrategy strategy, double temperature);

gateway::CompletionRequest defender_request(const AgentContext& ctx, std::string_view document,
                                            const DetectionResult& detection,
                                            std::string_view model_id, double temperature);

/// Throws Error(EmptyRewrite) if `raw_text` is whitespace only.
DefenseResult defense_from_completion(const DetectionResult& detection, std::string_view model_id,
                                      std::string raw_text);

/// Renders the defender prompt with the detector's raw response in the
/// Attack slot and returns the model output verbatim.
DefenseResult defend(const AgentContext& ctx, std::string_view document,
                     const DetectionResult& detection, std::string_view model_id,
                     double temperature);

}  // namespace bries::agents
