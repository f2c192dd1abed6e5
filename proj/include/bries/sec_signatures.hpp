#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "bries/llm_gateway.hpp"

namespace bries::sec {

/// Socio-emotional-cognitive measures, in canonical (report) order.
enum class Measure : std::uint8_t {
  Attitude,
  Sentiment,
  EmotionAnger,
  EmotionFear,
  EmotionJoy,
  EmotionSadness,
  IntentAgreeing,
  MoralAuthority,
  MoralFairness,
  MoralHarm,
  MoralIngroup,
  MoralPurity,
  Morality,
  PerspectivePositive,
  PerspectiveNeutral,
  PerspectiveNegative,
  Toxicity,
  Subjectivity,
  Empathy,
};

inline constexpr std::size_t kMeasureCount = 19;

enum class RangeKind { Unit, Signed };

struct MeasureInfo {
  Measure measure;
  std::string_view name;  // e.g. "Moral:Harm"
  RangeKind range;
};

const std::array<MeasureInfo, kMeasureCount>& canonical_measures() noexcept;
const MeasureInfo& info(Measure m) noexcept;
std::string_view name_of(Measure m) noexcept;
std::optional<Measure> measure_from_name(std::string_view name) noexcept;
bool is_perspective(Measure m) noexcept;

/// Closed interval of valid scores for a measure.
inline double range_low(Measure m) noexcept { return info(m).range == RangeKind::Signed ? -1.0 : 0.0; }
inline double range_high(Measure) noexcept { return 1.0; }

struct ScoreBatch {
  std::map<Measure, double> scores;
  std::map<Measure, std::string> failures;
  std::vector<std::string> audit;
};

/// A pluggable measure-scoring function.
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual std::string id() const = 0;
  virtual std::vector<Measure> measures() const = 0;
  /// Scores the requested subset of measures. Per-measure failures go into
  /// ScoreBatch::failures rather than being thrown.
  virtual ScoreBatch score(std::string_view text, const std::vector<Measure>& wanted) const = 0;
};

/// Term lists keyed by "<slug>.<polarity>", e.g. "moral_harm.terms",
/// "sentiment.positive".
struct Lexicon {
  std::map<std::string, std::unordered_set<std::string>> lists;
  std::string hash;

  /// Loads every `*.txt` under `dir`: one lowercase term per line, '#'
  /// comments and blank lines ignored.
  static Lexicon load(const std::filesystem::path& dir);
  static Lexicon from_lists(std::map<std::string, std::vector<std::string>> lists);
};

/// Hit counts behind a lexicon score. Every measure is a function of these
/// counts and the token total only.
struct LexiconEvidence {
  std::size_t tokens = 0;
  std::map<std::string, std::size_t> hits;  // per list name

  std::size_t hit(const std::string& list) const;
};

/// Bag-of-words scorer.
///
///  unit measures:   hits / tokens (0 for empty text)
///  signed measures: (positive hits - negative hits) / tokens, clamped to [-1, 1]
///  Morality:        tokens found in the morality list or any Moral:* list, / tokens
///  Perspective:     positive hits p, negative hits q, neutral mass
///                   max(1, tokens - p - q); the three are renormalized to sum to 1
class LexiconScorer final : public Scorer {
 public:
  explicit LexiconScorer(Lexicon lexicon);

  /// The lexicons shipped under data/lexicons.
  static std::shared_ptr<const LexiconScorer> builtin();

  std::string id() const override;
  std::vector<Measure> measures() const override;
  ScoreBatch score(std::string_view text, const std::vector<Measure>& wanted) const override;

  LexiconEvidence evidence(std::string_view text) const;
  double score_from(const LexiconEvidence& ev, Measure m) const;
  const Lexicon& lexicon() const noexcept { return lexicon_; }

 private:
  Lexicon lexicon_;
};

struct LlmScore {
  double value = 0.0;
  bool clamped = false;
  std::string raw_text;
};

/// Asks `model_id` to rate `measure` on 0-100, takes the first integer in
/// the reply, clamps to [0, 100] and rescales to the measure's range.
/// Non-numeric replies and gateway errors raise Error(ScorerFailure).
LlmScore llm_score(const gateway::Gateway& gw, Measure measure, std::string_view text,
                   std::string_view model_id, double temperature = 0.0);

std::string llm_scorer_prompt(Measure measure, std::string_view text);

/// LLM-backed scorer for a chosen subset of non-perspective measures.
class LlmScorer final : public Scorer {
 public:
  LlmScorer(const gateway::Gateway& gw, std::string model_id, std::vector<Measure> covered);

  std::string id() const override { return "llm:" + model_id_; }
  std::vector<Measure> measures() const override { return covered_; }
  ScoreBatch score(std::string_view text, const std::vector<Measure>& wanted) const override;

 private:
  const gateway::Gateway& gw_;
  std::string model_id_;
  std::vector<Measure> covered_;
};

/// Per-measure assignment of scorers; later registrations win.
class ScorerRegistry {
 public:
  /// Throws Error(InvalidConfig) if the scorer covers no measure.
  void register_scorer(std::shared_ptr<const Scorer> scorer);

  /// Throws Error(UncoveredMeasure) naming every measure without a scorer,
  /// and Error(InvalidConfig) if the three perspective measures are not all
  /// served by the same scorer (the simplex must come from one source).
  void validate() const;

  const Scorer* scorer_for(Measure m) const noexcept;
  std::string provenance(Measure m) const;

  /// The default configuration: the builtin lexicon scorer for every measure.
  static ScorerRegistry lexicon_default();

 private:
  std::array<std::shared_ptr<const Scorer>, kMeasureCount> by_measure_{};
};

struct SecSignature {
  std::string text_id;
  std::map<Measure, double> scores;
  std::map<Measure, std::string> scorer_provenance;
  std::map<Measure, std::string> failures;
  std::vector<std::string> audit;

  /// True when any measure failed; partial signatures are excluded from
  /// causal datasets.
  bool partial() const noexcept { return !failures.empty(); }
};

/// Scores every canonical measure with its registered scorer. Throws
/// whatever validate() throws for an invalid registry.
SecSignature score_text(std::string_view text_id, std::string_view text,
                        const ScorerRegistry& registry);

}  // namespace bries::sec
