#include "bries/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>

#include <json.hpp>

#include "bries/error.hpp"
#include "bries/util/text.hpp"

namespace bries::eval {

using nlohmann::ordered_json;

GroupKey key_of(const agents::DetectionResult& d) {
  return GroupKey{d.model_id, d.strategy, d.temperature};
}

double safe_ratio(double num, double den) noexcept { return den == 0.0 ? 0.0 : num / den; }

double harmonic_f1(double precision, double recall) noexcept {
  return safe_ratio(2.0 * precision * recall, precision + recall);
}

namespace {

std::set<AttackType> counted(const agents::Prediction& p, const EvalOptions& opt) {
  std::set<AttackType> out;
  for (const auto& [t, conf] : p)
    if (!opt.min_confidence || !conf || *conf >= *opt.min_confidence) out.insert(t);
  return out;
}

void finish(TypeRow& r) {
  r.precision = safe_ratio(r.tp, r.tp + r.fp);
  r.recall = safe_ratio(r.tp, r.tp + r.fn);
  r.f1 = harmonic_f1(r.precision, r.recall);
}

}  // namespace

F1Table per_type_f1(std::span<const agents::DetectionResult> detections,
                    std::span<const GoldLabel> gold, std::optional<GroupKey> key,
                    const EvalOptions& options) {
  std::unordered_map<std::string, const GoldLabel*> gold_by_id;
  for (const auto& g : gold) gold_by_id.emplace(g.document_id, &g);

  F1Table table;
  if (key) {
    table.key = *key;
  } else if (!detections.empty()) {
    table.key = key_of(detections.front());
  }
  for (std::size_t i = 0; i < taxonomy::kAttackCount; ++i) table.rows[i].type = taxonomy::attack_at(i);

  for (const auto& det : detections) {
    auto it = gold_by_id.find(det.document_id);
    if (it == gold_by_id.end())
      throw Error(ErrorCode::MissingGold, "no gold label for document '" + det.document_id + "'");
    const auto predicted = counted(det.predicted, options);
    const auto& truth = it->second->attack_types;
    for (auto t : predicted) {
      auto& row = table.rows[taxonomy::index_of(t)];
      truth.count(t) ? ++row.tp : ++row.fp;
    }
    for (auto t : truth)
      if (!predicted.count(t)) ++table.rows[taxonomy::index_of(t)].fn;
  }

  int tp = 0, fp = 0, fn = 0, active = 0;
  double f1_sum = 0.0;
  for (auto& row : table.rows) {
    finish(row);
    tp += row.tp;
    fp += row.fp;
    fn += row.fn;
    if (row.tp + row.fp + row.fn > 0) {
      f1_sum += row.f1;
      ++active;
    }
  }
  table.macro_f1 = safe_ratio(f1_sum, active);
  const double micro_p = safe_ratio(tp, tp + fp);
  const double micro_r = safe_ratio(tp, tp + fn);
  table.micro_f1 = harmonic_f1(micro_p, micro_r);
  return table;
}

std::vector<F1Table> group_f1(std::span<const agents::DetectionResult> detections,
                              std::span<const GoldLabel> gold, const EvalOptions& options) {
  std::map<GroupKey, std::vector<agents::DetectionResult>> groups;
  for (const auto& d : detections) groups[key_of(d)].push_back(d);
  std::vector<F1Table> out;
  for (const auto& [key, dets] : groups) out.push_back(per_type_f1(dets, gold, key, options));
  return out;
}

double detection_score(const agents::DetectionResult& detection, const GoldLabel& gold) {
  if (detection.document_id != gold.document_id)
    throw Error(ErrorCode::IdMismatch,
                "detection '" + detection.document_id + "' vs gold '" + gold.document_id + "'");
  if (detection.predicted.empty() && gold.attack_types.empty()) return 1.0;
  int tp = 0;
  for (const auto& [t, conf] : detection.predicted)
    if (gold.attack_types.count(t)) ++tp;
  const double precision = safe_ratio(tp, static_cast<double>(detection.predicted.size()));
  const double recall = safe_ratio(tp, static_cast<double>(gold.attack_types.size()));
  return harmonic_f1(precision, recall);
}

std::optional<Axis> parse_axis(std::string_view s) noexcept {
  if (s == "strategy" || s == "descriptions") return Axis::Strategy;
  if (s == "confidence") return Axis::Confidence;
  if (s == "temperature") return Axis::Temperature;
  return std::nullopt;
}

std::string_view to_string(Axis a) noexcept {
  switch (a) {
    case Axis::Strategy: return "strategy";
    case Axis::Confidence: return "confidence";
    case Axis::Temperature: return "temperature";
  }
  return "";
}

namespace {

std::string temp_label(double t) { return "T=" + util::format_double(t); }

struct AxisSplit {
  std::string fixed;
  double level;  // ordering value along the axis
  std::string label;
};

AxisSplit split_key(const GroupKey& k, Axis axis) {
  const auto& s = k.strategy;
  switch (axis) {
    case Axis::Strategy:
      return {std::string("s0=") + (s.with_confidence ? "on" : "off") + " " + temp_label(k.temperature),
              s.with_descriptions ? 1.0 : 0.0, s.with_descriptions ? "d0" : "0"};
    case Axis::Confidence:
      return {std::string("d0=") + (s.with_descriptions ? "on" : "off") + " " + temp_label(k.temperature),
              s.with_confidence ? 1.0 : 0.0, s.with_confidence ? "s0" : "0"};
    case Axis::Temperature:
      return {"strategy=" + std::string(prompt::label(s)), k.temperature, temp_label(k.temperature)};
  }
  return {};
}

}  // namespace

ComparisonReport compare_groups(std::span<const F1Table> tables, Axis axis) {
  std::map<std::pair<std::string, std::string>, std::vector<const F1Table*>> groups;
  for (const auto& t : tables) groups[{t.key.model_id, split_key(t.key, axis).fixed}].push_back(&t);

  ComparisonReport report;
  report.axis = axis;
  for (const auto& [gk, members] : groups) {
    if (members.size() != 2)
      throw Error(ErrorCode::UnpairedGroups,
                  "group " + gk.first + " [" + gk.second + "] has " + std::to_string(members.size()) +
                      " tables on the " + std::string(to_string(axis)) + " axis; expected 2");
    auto a = split_key(members[0]->key, axis);
    auto b = split_key(members[1]->key, axis);
    if (a.level == b.level)
      throw Error(ErrorCode::UnpairedGroups, "group " + gk.first + " [" + gk.second +
                                                 "] repeats the same " + std::string(to_string(axis)));
    const F1Table* low = members[0];
    const F1Table* high = members[1];
    if (a.level > b.level) {
      std::swap(low, high);
      std::swap(a, b);
    }

    PairComparison pc;
    pc.model_id = gk.first;
    pc.fixed = gk.second;
    pc.low_label = a.label;
    pc.high_label = b.label;
    pc.macro_delta = high->macro_f1 - low->macro_f1;
    for (std::size_t i = 0; i < taxonomy::kAttackCount; ++i) {
      DeltaRow r;
      r.type = taxonomy::attack_at(i);
      r.f1_low = low->rows[i].f1;
      r.f1_high = high->rows[i].f1;
      r.delta = r.f1_high - r.f1_low;
      r.winner = r.delta > 0 ? pc.high_label : (r.delta < 0 ? pc.low_label : "tie");
      pc.rows.push_back(std::move(r));
    }
    std::stable_sort(pc.rows.begin(), pc.rows.end(), [](const DeltaRow& x, const DeltaRow& y) {
      return std::abs(x.delta) > std::abs(y.delta);
    });
    report.pairs.push_back(std::move(pc));
  }
  return report;
}

namespace {
std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}
}  // namespace

std::string to_csv(std::span<const F1Table> tables) {
  std::string out(kF1CsvHeader);
  out += '\n';
  for (const auto& t : tables) {
    for (const auto& r : t.rows) {
      out += csv_field(t.key.model_id) + ',' + std::string(prompt::label(t.key.strategy)) + ',' +
             util::format_double(t.key.temperature) + ',' +
             csv_field(taxonomy::display_name_of(r.type)) + ',' + std::to_string(r.tp) + ',' +
             std::to_string(r.fp) + ',' + std::to_string(r.fn) + ',' + util::format_fixed(r.precision, 6) +
             ',' + util::format_fixed(r.recall, 6) + ',' + util::format_fixed(r.f1, 6) + '\n';
    }
  }
  return out;
}

std::string to_json(std::span<const F1Table> tables) {
  ordered_json arr = ordered_json::array();
  for (const auto& t : tables) {
    ordered_json rows = ordered_json::array();
    for (const auto& r : t.rows) {
      rows.push_back({{"attack_type", taxonomy::display_name_of(r.type)},
                      {"tp", r.tp},
                      {"fp", r.fp},
                      {"fn", r.fn},
                      {"precision", r.precision},
                      {"recall", r.recall},
                      {"f1", r.f1}});
    }
    arr.push_back({{"group_model", t.key.model_id},
                   {"group_strategy", prompt::label(t.key.strategy)},
                   {"group_temperature", t.key.temperature},
                   {"macro_f1", t.macro_f1},
                   {"micro_f1", t.micro_f1},
                   {"rows", std::move(rows)}});
  }
  return arr.dump(2) + "\n";
}

std::string to_json(const ComparisonReport& report) {
  ordered_json pairs = ordered_json::array();
  for (const auto& p : report.pairs) {
    ordered_json rows = ordered_json::array();
    for (const auto& r : p.rows)
      rows.push_back({{"attack_type", taxonomy::display_name_of(r.type)},
                      {"f1_" + p.low_label, r.f1_low},
                      {"f1_" + p.high_label, r.f1_high},
                      {"delta", r.delta},
                      {"winner", r.winner}});
    pairs.push_back({{"model", p.model_id},
                     {"fixed", p.fixed},
                     {"low", p.low_label},
                     {"high", p.high_label},
                     {"macro_delta", p.macro_delta},
                     {"rows", std::move(rows)}});
  }
  ordered_json doc = {{"axis", to_string(report.axis)}, {"pairs", std::move(pairs)}};
  return doc.dump(2) + "\n";
}

}  // namespace bries::eval
