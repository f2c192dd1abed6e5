#include <doctest.h>

#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include "bries/error.hpp"
#include "bries/taxonomy.hpp"
#include "bries/util/kv_file.hpp"
#include "bries/util/text.hpp"

using namespace bries;
using taxonomy::AttackType;
using taxonomy::Taxonomy;

namespace {

// Plain two-row dynamic program, kept separate from the library version.
std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::string builtin_text() { return util::read_file(taxonomy::data_dir() / "taxonomy.ini"); }

}  // namespace

TEST_CASE("canonical list has 23 types in alphabetical order") {
  const auto& tax = Taxonomy::builtin();
  const auto& all = tax.canonical_attacks();
  REQUIRE(all.size() == 23);
  CHECK(all.front().display_name == "Appeal to Authority");
  CHECK(all.back().display_name == "Whataboutism");
  std::vector<std::string> names;
  for (const auto& a : all) names.push_back(a.display_name);
  CHECK(std::is_sorted(names.begin(), names.end()));
  for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i].type == taxonomy::attack_at(i));
}

TEST_CASE("ids and display names are unique, descriptions non-empty") {
  const auto& tax = Taxonomy::builtin();
  std::set<std::string> ids, names;
  for (const auto& a : tax.canonical_attacks()) {
    CHECK(ids.insert(a.id).second);
    CHECK(names.insert(a.display_name).second);
    CHECK_FALSE(util::trim(a.description).empty());
    CHECK(tax.description(a.type) == tax.description(a.type));
  }
  CHECK_FALSE(tax.description(AttackType::RedHerring).empty());
}

TEST_CASE("normalize examples") {
  const auto& tax = Taxonomy::builtin();
  CHECK(tax.normalize("appeal to fear") == AttackType::AppealToFear);
  CHECK(tax.normalize("  APPEAL   to FEAR!! ") == AttackType::AppealToFear);
  CHECK(tax.normalize("Exaggeration/Minimisation") == AttackType::ExaggerationOrMinimisation);
  CHECK(tax.normalize("Ad Hominem") == std::nullopt);
  CHECK(tax.normalize("") == std::nullopt);
  CHECK(tax.normalize("Appeal to Popularity") == AttackType::Bandwagon);
  CHECK(tax.normalize("Equivocation") == AttackType::Obfuscation);
}

TEST_CASE("normalize tolerates small drift and rejects unrelated text") {
  const auto& tax = Taxonomy::builtin();
  CHECK(tax.normalize("Red Herings") == AttackType::RedHerring);
  CHECK(tax.normalize("slippery-slopes") == AttackType::SlipperySlope);
  CHECK(tax.normalize("Whataboutisms") == AttackType::Whataboutism);
  CHECK(tax.normalize("asdf qwer") == std::nullopt);
  CHECK(tax.normalize("strawman argument") == std::nullopt);
}

TEST_CASE("round trip and idempotence over every type") {
  const auto& tax = Taxonomy::builtin();
  for (const auto& a : tax.canonical_attacks()) {
    const auto t = tax.normalize(a.display_name);
    REQUIRE(t == a.type);
    CHECK(tax.normalize(tax.display_name(*t)) == t);
    CHECK(tax.normalize(util::to_lower(a.display_name)) == a.type);
    for (const auto& alias : a.aliases) CHECK(tax.normalize(alias) == a.type);
  }
}

TEST_CASE("surface forms of different types are further apart than the fuzz threshold") {
  const auto& tax = Taxonomy::builtin();
  const auto& forms = tax.surface_forms();
  REQUIRE(forms.size() >= 23);
  for (std::size_t i = 0; i < forms.size(); ++i) {
    for (std::size_t j = i + 1; j < forms.size(); ++j) {
      if (forms[i].second == forms[j].second) continue;
      const auto& a = forms[i].first;
      const auto& b = forms[j].first;
      const double d = static_cast<double>(edit_distance(a, b)) / static_cast<double>(std::max(a.size(), b.size()));
      INFO(a << " vs " << b);
      CHECK(d > tax.fuzz_threshold());
    }
  }
}

TEST_CASE("content hash is stable and sensitive to edits") {
  const std::string text = builtin_text();
  const auto a = Taxonomy::parse(text);
  const auto b = Taxonomy::parse(text);
  CHECK(a.content_hash() == b.content_hash());
  std::string edited = text;
  const auto pos = edited.find("description = ");
  REQUIRE(pos != std::string::npos);
  edited.insert(pos + 14, "Edited. ");
  CHECK(Taxonomy::parse(edited).content_hash() != a.content_hash());
}

TEST_CASE("malformed taxonomy files are rejected") {
  const std::string text = builtin_text();

  SUBCASE("missing type") {
    const auto start = text.find("[whataboutism]");
    REQUIRE(start != std::string::npos);
    CHECK_THROWS_AS(Taxonomy::parse(text.substr(0, start)), Error);
  }
  SUBCASE("unknown section") {
    CHECK_THROWS_AS(Taxonomy::parse(text + "\n[ad_hominem]\ndisplay_name = Ad Hominem\ndescription = x\n"), Error);
  }
  SUBCASE("alias claimed by two types") {
    std::string dup = text;
    const std::string line = "aliases = What About-ism;";
    const auto pos = dup.find(line);
    REQUIRE(pos != std::string::npos);
    dup.replace(pos, line.size(), "aliases = Strawman; What About-ism;");
    try {
      Taxonomy::parse(dup);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("Strawman") != std::string::npos);
    }
  }
  SUBCASE("file not found") {
    try {
      Taxonomy::load("/nonexistent/taxonomy.ini");
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::FileNotFound);
    }
  }
}

TEST_CASE("id helpers agree with the enum") {
  for (std::size_t i = 0; i < taxonomy::kAttackCount; ++i) {
    const auto t = taxonomy::attack_at(i);
    CHECK(taxonomy::from_id(taxonomy::id_of(t)) == t);
    CHECK(Taxonomy::builtin().display_name(t) == taxonomy::display_name_of(t));
  }
  CHECK(taxonomy::from_id("ad_hominem") == std::nullopt);
}
