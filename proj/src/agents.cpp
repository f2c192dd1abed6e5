#include "bries/agents.hpp"

#include <cctype>
#include <cmath>
#include <regex>

#include "bries/error.hpp"
#include "bries/util/text.hpp"

namespace bries::agents {

namespace {

std::vector<std::string> segments(std::string_view raw) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    auto s = util::trim(cur);
    if (!s.empty()) out.push_back(std::move(s));
    cur.clear();
  };
  for (char c : raw) {
    if (c == '\n' || c == '\r' || c == ';') {
      flush();
    } else {
      cur.push_back(c);
    }
  }
  flush();
  return out;
}

std::string strip_list_marker(const std::string& segment) {
  static const std::regex marker(R"(^\s*(?:\(?[0-9]{1,3}[.):]|[-*+•]|\xE2\x80\xA2)\s+)");
  return util::trim(std::regex_replace(segment, marker, "", std::regex_constants::format_first_only));
}

bool is_negative_response(std::string_view raw) {
  const auto c = util::canonicalize(raw);
  return c == "none" || c == "none found" || c.rfind("no fallacies", 0) == 0 ||
         c.rfind("no logical fallacies", 0) == 0;
}

void add(Prediction& p, AttackType t, std::optional<int> confidence) {
  auto [it, inserted] = p.emplace(t, confidence);
  if (!inserted && confidence && (!it->second || *it->second < *confidence)) it->second = confidence;
}

}  // namespace

ParsedDetection parse_detection(const taxonomy::Taxonomy& tax, std::string_view raw_text,
                                prompt::PromptStrategy strategy) {
  static const std::regex scored(
      R"(^(.*?)\s*(?:-|–|—|:)?\s*\(?\s*(?:(?:confidence\s+)?score\s*[:=]?\s*)?(-?[0-9]+(?:\.[0-9]+)?)\s*(?:/\s*10)?\s*\)?\s*\.?$)",
      std::regex::icase);

  ParsedDetection out;
  if (is_negative_response(raw_text)) return out;

  for (const auto& seg_raw : segments(raw_text)) {
    const std::string seg = strip_list_marker(seg_raw);
    if (seg.empty()) continue;
    std::smatch m;
    const bool has_score = std::regex_match(seg, m, scored);

    if (strategy.with_confidence) {
      if (!has_score) {
        out.unparsed_fragments.push_back(seg);
        continue;
      }
      const auto type = tax.normalize(m[1].str());
      if (!type) {
        out.unparsed_fragments.push_back(seg);
        continue;
      }
      const std::string token = m[2].str();
      const double value = std::stod(token);
      const int clamped = static_cast<int>(std::clamp(std::round(value), 1.0, 10.0));
      if (token != std::to_string(clamped)) out.unparsed_fragments.push_back(token);
      add(out.predicted, *type, clamped);
      continue;
    }

    const std::string name = has_score ? m[1].str() : seg;
    if (auto t = tax.normalize(name)) {
      add(out.predicted, *t, std::nullopt);
      continue;
    }
    // "Name: explanation" or "Name - explanation"
    if (auto cut = name.find_first_of(":-"); cut != std::string::npos) {
      if (auto t = tax.normalize(name.substr(0, cut))) {
        add(out.predicted, *t, std::nullopt);
        continue;
      }
    }
    if (name.find(',') != std::string::npos) {
      std::vector<std::string> missed;
      bool any = false;
      for (const auto& piece : util::split(name, ',')) {
        const auto p = util::trim(piece);
        if (p.empty()) continue;
        if (auto t = tax.normalize(p)) {
          add(out.predicted, *t, std::nullopt);
          any = true;
        } else {
          missed.push_back(p);
        }
      }
      if (any) {
        for (auto& p : missed) out.unparsed_fragments.push_back(std::move(p));
        continue;
      }
    }
    out.unparsed_fragments.push_back(seg);
  }
  return out;
}

std::string format_detection(const taxonomy::Taxonomy& tax, const Prediction& predicted) {
  std::string out;
  for (const auto& [type, confidence] : predicted) {
    if (!out.empty()) out += '\n';
    out += tax.display_name(type);
    if (confidence) out += " - score: " + std::to_string(*confidence);
  }
  return out;
}

gateway::CompletionRequest detector_request(const AgentContext& ctx, std::string_view document_id,
                                            std::string_view document, std::string_view model_id,
                                            prompt::PromptStrategy strategy, double temperature) {
  gateway::CompletionRequest req;
  req.model_id = std::string(model_id);
  req.prompt = prompt::build_detector_prompt(ctx.tax, strategy, document);
  req.temperature = temperature;
  req.max_tokens = ctx.max_tokens;
  req.request_id = "detect/" + std::string(document_id) + "/" + std::string(model_id) + "/" +
                   std::string(prompt::label(strategy)) + "/" + util::format_double(temperature);
  return req;
}

DetectionResult detection_from_completion(const AgentContext& ctx, std::string_view document_id,
                                          std::string_view model_id,
                                          prompt::PromptStrategy strategy, double temperature,
                                          std::string raw_text) {
  auto parsed = parse_detection(ctx.tax, raw_text, strategy);
  return DetectionResult{std::string(document_id), std::string(model_id), strategy, temperature,
                         std::move(parsed.predicted), std::move(parsed.unparsed_fragments),
                         std::move(raw_text)};
}

DetectionResult detect(const AgentContext& ctx, std::string_view document_id,
                       std::string_view document, std::string_view model_id,
                       prompt::PromptStrategy strategy, double temperature) {
  auto req = detector_request(ctx, document_id, document, model_id, strategy, temperature);
  auto res = ctx.gateway.complete(req);
  return detection_from_completion(ctx, document_id, model_id, strategy, temperature,
                                   std::move(res.raw_text));
}

gateway::CompletionRequest defender_request(const AgentContext& ctx, std::string_view document,
                                            const DetectionResult& detection,
                                            std::string_view model_id, double temperature) {
  gateway::CompletionRequest req;
  req.model_id = std::string(model_id);
  req.prompt = prompt::build_defender_prompt(ctx.tax, document, detection.raw_text);
  req.temperature = temperature;
  req.max_tokens = ctx.max_tokens;
  req.request_id = "defend/" + detection.document_id + "/" + std::string(model_id) + "/" +
                   std::string(prompt::label(detection.strategy)) + "/" +
                   util::format_double(temperature);
  return req;
}

DefenseResult defense_from_completion(const DetectionResult& detection, std::string_view model_id,
                                      std::string raw_text) {
  if (util::trim(raw_text).empty())
    throw Error(ErrorCode::EmptyRewrite,
                "defender returned no text for document '" + detection.document_id + "'");
  return DefenseResult{detection.document_id, std::string(model_id), std::move(raw_text),
                       detection.raw_text};
}

DefenseResult defend(const AgentContext& ctx, std::string_view document,
                     const DetectionResult& detection, std::string_view model_id,
                     double temperature) {
  auto req = defender_request(ctx, document, detection, model_id, temperature);
  auto res = ctx.gateway.complete(req);
  return defense_from_completion(detection, model_id, std::move(res.raw_text));
}

}  // namespace bries::agents
