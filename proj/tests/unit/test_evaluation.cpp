#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "bries/error.hpp"
#include "bries/evaluation.hpp"
#include "bries/util/random.hpp"

using namespace bries;
using taxonomy::AttackType;

namespace {

agents::DetectionResult det(std::string id, std::set<AttackType> types, std::string model = "m",
                            prompt::PromptStrategy s = prompt::PromptStrategy::base(), double temp = 0.0) {
  agents::DetectionResult d;
  d.document_id = std::move(id);
  d.model_id = std::move(model);
  d.strategy = s;
  d.temperature = temp;
  for (auto t : types) d.predicted[t] = std::nullopt;
  return d;
}

// Naive counting over (document, type) pairs, independent of the library.
struct OracleCounts {
  std::map<AttackType, std::array<int, 3>> c;  // tp, fp, fn
};

OracleCounts oracle(const std::vector<agents::DetectionResult>& dets, const std::vector<eval::GoldLabel>& gold) {
  OracleCounts o;
  for (const auto& d : dets) {
    const eval::GoldLabel* g = nullptr;
    for (const auto& gl : gold)
      if (gl.document_id == d.document_id) g = &gl;
    for (std::size_t i = 0; i < taxonomy::kAttackCount; ++i) {
      const auto t = taxonomy::attack_at(i);
      const bool p = d.predicted.count(t) > 0;
      const bool a = g->attack_types.count(t) > 0;
      if (p && a) o.c[t][0]++;
      if (p && !a) o.c[t][1]++;
      if (!p && a) o.c[t][2]++;
    }
  }
  return o;
}

double oracle_f1(int tp, int fp, int fn) {
  const double p = tp + fp == 0 ? 0.0 : double(tp) / (tp + fp);
  const double r = tp + fn == 0 ? 0.0 : double(tp) / (tp + fn);
  return p + r == 0 ? 0.0 : 2 * p * r / (p + r);
}

std::set<AttackType> random_subset(util::Rng& rng, const std::vector<AttackType>& pool) {
  std::set<AttackType> out;
  for (auto t : pool)
    if (rng.uniform() < 0.4) out.insert(t);
  return out;
}

}  // namespace

TEST_CASE("one document with an extra prediction") {
  const std::vector<eval::GoldLabel> gold{{"d1", {AttackType::AppealToFear}}};
  const std::vector<agents::DetectionResult> dets{det("d1", {AttackType::AppealToFear, AttackType::RedHerring})};
  const auto table = eval::per_type_f1(dets, gold);
  CHECK(table.rows.size() == 23);
  const auto& fear = table.rows[taxonomy::index_of(AttackType::AppealToFear)];
  CHECK(fear.f1 == 1.0);
  const auto& herring = table.rows[taxonomy::index_of(AttackType::RedHerring)];
  CHECK(herring.fp == 1);
  CHECK(herring.precision == 0.0);
  CHECK(herring.recall == 0.0);
  CHECK(herring.f1 == 0.0);
  // Two types have support; the rest are excluded from the macro mean.
  CHECK(table.macro_f1 == doctest::Approx(0.5));
  CHECK(table.micro_f1 == doctest::Approx(oracle_f1(1, 1, 0)));
}

TEST_CASE("perfect detector gives macro 1") {
  util::Rng rng(3);
  std::vector<AttackType> all;
  for (std::size_t i = 0; i < taxonomy::kAttackCount; ++i) all.push_back(taxonomy::attack_at(i));
  std::vector<eval::GoldLabel> gold;
  std::vector<agents::DetectionResult> dets;
  for (int i = 0; i < 15; ++i) {
    auto s = random_subset(rng, all);
    if (s.empty()) s.insert(AttackType::Doubt);
    gold.push_back({"doc" + std::to_string(i), s});
    dets.push_back(det("doc" + std::to_string(i), s));
  }
  const auto t = eval::per_type_f1(dets, gold);
  CHECK(t.macro_f1 == 1.0);
  CHECK(t.micro_f1 == 1.0);
}

TEST_CASE("per_type_f1 equals the brute-force oracle") {
  util::Rng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    // Five types drawn from the taxonomy per trial.
    std::vector<AttackType> pool;
    while (pool.size() < 5) {
      const auto t = taxonomy::attack_at(rng.below(taxonomy::kAttackCount));
      if (std::find(pool.begin(), pool.end(), t) == pool.end()) pool.push_back(t);
    }
    const int n = 1 + static_cast<int>(rng.below(20));
    std::vector<eval::GoldLabel> gold;
    std::vector<agents::DetectionResult> dets;
    for (int i = 0; i < n; ++i) {
      gold.push_back({"d" + std::to_string(i), random_subset(rng, pool)});
      dets.push_back(det("d" + std::to_string(i), random_subset(rng, pool)));
    }
    const auto table = eval::per_type_f1(dets, gold);
    const auto o = oracle(dets, gold);
    double sum = 0;
    int counted = 0, TP = 0, FP = 0, FN = 0;
    for (std::size_t i = 0; i < taxonomy::kAttackCount; ++i) {
      const auto t = taxonomy::attack_at(i);
      const auto c = o.c.count(t) ? o.c.at(t) : std::array<int, 3>{0, 0, 0};
      const auto& row = table.rows[i];
      REQUIRE(row.type == t);
      CHECK(row.tp == c[0]);
      CHECK(row.fp == c[1]);
      CHECK(row.fn == c[2]);
      CHECK(row.f1 == oracle_f1(c[0], c[1], c[2]));
      if (c[0] + c[1] + c[2] > 0) {
        sum += oracle_f1(c[0], c[1], c[2]);
        ++counted;
      }
      TP += c[0];
      FP += c[1];
      FN += c[2];
    }
    CHECK(table.macro_f1 == doctest::Approx(counted ? sum / counted : 0.0).epsilon(1e-15));
    CHECK(table.micro_f1 == doctest::Approx(oracle_f1(TP, FP, FN)).epsilon(1e-15));
    CHECK(table.macro_f1 >= 0.0);
    CHECK(table.macro_f1 <= 1.0);
    CHECK(table.micro_f1 >= 0.0);
    CHECK(table.micro_f1 <= 1.0);

    // Document order never matters.
    auto shuffled = dets;
    rng.shuffle(shuffled);
    const auto again = eval::per_type_f1(shuffled, gold);
    CHECK(again.macro_f1 == table.macro_f1);
    CHECK(again.micro_f1 == table.micro_f1);
    for (std::size_t i = 0; i < taxonomy::kAttackCount; ++i) CHECK(again.rows[i].f1 == table.rows[i].f1);
  }
}

TEST_CASE("confidence is ignored unless a cutoff is configured") {
  const std::vector<eval::GoldLabel> gold{{"d", {AttackType::Doubt}}};
  auto d = det("d", {});
  d.predicted[AttackType::Doubt] = 2;
  d.predicted[AttackType::Slogans] = 9;
  const std::vector<agents::DetectionResult> dets{d};
  const auto plain = eval::per_type_f1(dets, gold);
  CHECK(plain.rows[taxonomy::index_of(AttackType::Doubt)].tp == 1);
  eval::EvalOptions opt;
  opt.min_confidence = 5;
  const auto cut = eval::per_type_f1(dets, gold, std::nullopt, opt);
  CHECK(cut.rows[taxonomy::index_of(AttackType::Doubt)].fn == 1);
  CHECK(cut.rows[taxonomy::index_of(AttackType::Slogans)].fp == 1);
}

TEST_CASE("missing gold is an error") {
  const std::vector<eval::GoldLabel> gold{{"a", {}}};
  const std::vector<agents::DetectionResult> dets{det("b", {})};
  try {
    eval::per_type_f1(dets, gold);
    FAIL("expected MissingGold");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingGold);
  }
}

TEST_CASE("detection_score examples") {
  CHECK(eval::detection_score(det("x", {AttackType::FlagWaving}), {"x", {AttackType::FlagWaving}}) == 1.0);
  CHECK(eval::detection_score(det("x", {}), {"x", {AttackType::Doubt}}) == 0.0);
  CHECK(eval::detection_score(det("x", {AttackType::AppealToFear, AttackType::Bandwagon}),
                              {"x", {AttackType::Bandwagon, AttackType::Doubt}}) == doctest::Approx(0.5));
  CHECK(eval::detection_score(det("x", {}), {"x", {}}) == 1.0);
  CHECK(eval::detection_score(det("x", {AttackType::Doubt}), {"x", {}}) == 0.0);
  try {
    eval::detection_score(det("x", {}), {"y", {}});
    FAIL("expected IdMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::IdMismatch);
  }
}

TEST_CASE("group_f1 splits by key and sorts") {
  const std::vector<eval::GoldLabel> gold{{"a", {AttackType::Doubt}}};
  const std::vector<agents::DetectionResult> dets{
      det("a", {AttackType::Doubt}, "m2"), det("a", {}, "m1", prompt::PromptStrategy::confidence(), 0.7),
      det("a", {AttackType::Doubt}, "m1")};
  const auto tables = eval::group_f1(dets, gold);
  REQUIRE(tables.size() == 3);
  CHECK(tables[0].key.model_id == "m1");
  CHECK(tables[0].key.strategy == prompt::PromptStrategy::base());
  CHECK(tables[0].macro_f1 == 1.0);
  CHECK(tables[1].key.strategy == prompt::PromptStrategy::confidence());
  CHECK(tables[1].macro_f1 == 0.0);
  CHECK(tables[2].key.model_id == "m2");
}

TEST_CASE("compare_groups pairing and deltas") {
  const std::vector<eval::GoldLabel> gold{{"a", {AttackType::FalseDilemma, AttackType::Doubt}}};
  const std::vector<agents::DetectionResult> dets{
      det("a", {AttackType::Doubt}, "m", prompt::PromptStrategy::base()),
      det("a", {AttackType::Doubt, AttackType::FalseDilemma}, "m", prompt::PromptStrategy::confidence())};
  const auto tables = eval::group_f1(dets, gold);

  const auto report = eval::compare_groups(tables, eval::Axis::Confidence);
  REQUIRE(report.pairs.size() == 1);
  const auto& pc = report.pairs[0];
  CHECK(pc.low_label == "0");
  CHECK(pc.high_label == "s0");
  CHECK(pc.rows.front().type == AttackType::FalseDilemma);
  CHECK(pc.rows.front().delta == 1.0);
  CHECK(pc.rows.front().winner == "s0");
  CHECK(pc.rows[1].winner == "tie");
  for (std::size_t i = 1; i < pc.rows.size(); ++i)
    CHECK(std::abs(pc.rows[i - 1].delta) >= std::abs(pc.rows[i].delta));

  // Self comparison along temperature: relabel one copy with a new temperature.
  auto twin = tables[0];
  twin.key.temperature = 0.9;
  const std::vector<eval::F1Table> same{tables[0], twin};
  const auto self = eval::compare_groups(same, eval::Axis::Temperature);
  REQUIRE(self.pairs.size() == 1);
  CHECK(self.pairs[0].macro_delta == 0.0);
  for (const auto& r : self.pairs[0].rows) CHECK(r.delta == 0.0);

  auto third = twin;
  third.key.temperature = 1.5;
  const std::vector<eval::F1Table> three{tables[0], twin, third};
  try {
    eval::compare_groups(three, eval::Axis::Temperature);
    FAIL("expected UnpairedGroups");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnpairedGroups);
  }
  // Both tables on one level of the strategy axis: unpairable.
  CHECK_THROWS_AS(eval::compare_groups(same, eval::Axis::Strategy), Error);
}

TEST_CASE("csv export has the frozen header and 23 rows per table") {
  const std::vector<eval::GoldLabel> gold{{"a", {AttackType::Doubt}}};
  const std::vector<agents::DetectionResult> dets{det("a", {AttackType::Doubt}, "gpt,x")};
  const auto tables = eval::group_f1(dets, gold);
  const auto csv = eval::to_csv(tables);
  CHECK(csv.starts_with("group_model,group_strategy,group_temperature,attack_type,tp,fp,fn,precision,recall,f1\n"));
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 24);
  CHECK(csv.find("\"gpt,x\",0,0,Doubt,1,0,0,1.000000,1.000000,1.000000\n") != std::string::npos);
  CHECK(eval::to_json(std::span<const eval::F1Table>(tables)).find("\"macro_f1\"") != std::string::npos);
}

TEST_CASE("axis parsing") {
  CHECK(eval::parse_axis("strategy") == eval::Axis::Strategy);
  CHECK(eval::parse_axis("confidence") == eval::Axis::Confidence);
  CHECK(eval::parse_axis("temperature") == eval::Axis::Temperature);
  CHECK_FALSE(eval::parse_axis("model").has_value());
}
