#pragma once

#include <array>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bries/agents.hpp"

namespace bries::eval {

using taxonomy::AttackType;

struct GoldLabel {
  std::string document_id;
  std::set<AttackType> attack_types;
};

struct GroupKey {
  std::string model_id;
  prompt::PromptStrategy strategy;
  double temperature = 0.0;

  friend bool operator==(const GroupKey&, const GroupKey&) = default;
  friend auto operator<=>(const GroupKey&, const GroupKey&) = default;
};

GroupKey key_of(const agents::DetectionResult& d);

struct TypeRow {
  AttackType type{};
  int tp = 0;
  int fp = 0;
  int fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct F1Table {
  GroupKey key;
  std::array<TypeRow, taxonomy::kAttackCount> rows{};
  double macro_f1 = 0.0;
  double micro_f1 = 0.0;
};

struct EvalOptions {
  /// When set, predictions with a confidence below this value are ignored.
  /// Predictions without a confidence are always counted. Off by default.
  std::optional<int> min_confidence;
};

/// precision/recall/F1 with every 0/0 mapped to 0.
double safe_ratio(double num, double den) noexcept;
double harmonic_f1(double precision, double recall) noexcept;

/// Binary presence counting per (document, type) over all `detections`.
/// All 23 types are emitted. Macro-F1 averages per-type F1 over types with
/// any of tp/fp/fn nonzero; micro-F1 pools the counts. `key` is taken from
/// the first detection when not supplied. Throws Error(MissingGold).
F1Table per_type_f1(std::span<const agents::DetectionResult> detections,
                    std::span<const GoldLabel> gold, std::optional<GroupKey> key = std::nullopt,
                    const EvalOptions& options = {});

/// Splits detections by (model, strategy, temperature) and scores each
/// group. Tables come back sorted by key.
std::vector<F1Table> group_f1(std::span<const agents::DetectionResult> detections,
                              std::span<const GoldLabel> gold, const EvalOptions& options = {});

/// Set F1 between predicted and gold types of one document; 1 when both are
/// empty. Throws Error(IdMismatch).
double detection_score(const agents::DetectionResult& detection, const GoldLabel& gold);

enum class Axis { Strategy, Confidence, Temperature };
std::optional<Axis> parse_axis(std::string_view s) noexcept;
std::string_view to_string(Axis a) noexcept;

struct DeltaRow {
  AttackType type{};
  double f1_low = 0.0;
  double f1_high = 0.0;
  double delta = 0.0;  // f1_high - f1_low
  std::string winner;  // level label, or "tie"
};

struct PairComparison {
  std::string model_id;
  std::string fixed;  // the non-axis key parts, e.g. "s0=off T=0"
  std::string low_label;
  std::string high_label;
  double macro_delta = 0.0;
  std::vector<DeltaRow> rows;  // sorted by |delta| descending, ties in canonical order
};

struct ComparisonReport {
  Axis axis{};
  std::vector<PairComparison> pairs;
};

/// Pairs tables that agree on every key component except `axis` and reports
/// per-type F1 deltas. The low level is "without" (descriptions or
/// confidence) or the lower temperature. Throws Error(UnpairedGroups) when a
/// group does not hold exactly two tables with distinct axis values.
ComparisonReport compare_groups(std::span<const F1Table> tables, Axis axis);

inline constexpr std::string_view kF1CsvHeader =
    "group_model,group_strategy,group_temperature,attack_type,tp,fp,fn,precision,recall,f1";

std::string to_csv(std::span<const F1Table> tables);
std::string to_json(std::span<const F1Table> tables);
std::string to_json(const ComparisonReport& report);

}  // namespace bries::eval
