#include "bries/taxonomy.hpp"

#include <algorithm>
#include <cstdlib>
#include <limits>
#include <set>

#include "bries/error.hpp"
#include "bries/util/hash.hpp"
#include "bries/util/kv_file.hpp"
#include "bries/util/text.hpp"

#ifndef BRIES_DEFAULT_DATA_DIR
#define BRIES_DEFAULT_DATA_DIR "data"
#endif

namespace bries::taxonomy {

namespace {

struct Names {
  std::string_view id;
  std::string_view display;
};

constexpr std::array<Names, kAttackCount> kNames{{
    {"appeal_to_authority", "Appeal to Authority"},
    {"appeal_to_fear", "Appeal to Fear"},
    {"appeal_to_hypocrisy", "Appeal to Hypocrisy"},
    {"appeal_to_time", "Appeal to Time"},
    {"appeal_to_values", "Appeal to Values"},
    {"bandwagon", "Bandwagon"},
    {"causal_oversimplification", "Causal Oversimplification"},
    {"conversation_killer", "Conversation Killer"},
    {"doubt", "Doubt"},
    {"exaggeration_or_minimisation", "Exaggeration or Minimisation"},
    {"false_dilemma", "False Dilemma"},
    {"flag_waving", "Flag Waving"},
    {"guilt_by_association", "Guilt by Association"},
    {"labeling", "Labeling"},
    {"loaded_language", "Loaded Language"},
    {"obfuscation", "Obfuscation"},
    {"questioning_the_reputation", "Questioning the Reputation"},
    {"red_herring", "Red Herring"},
    {"repetition", "Repetition"},
    {"slippery_slope", "Slippery Slope"},
    {"slogans", "Slogans"},
    {"straw_man", "Straw Man"},
    {"whataboutism", "Whataboutism"},
}};

}  // namespace

std::string_view id_of(AttackType t) noexcept { return kNames[index_of(t)].id; }
std::string_view display_name_of(AttackType t) noexcept { return kNames[index_of(t)].display; }

std::optional<AttackType> from_id(std::string_view id) noexcept {
  for (std::size_t i = 0; i < kAttackCount; ++i)
    if (kNames[i].id == id) return attack_at(i);
  return std::nullopt;
}

std::filesystem::path data_dir() {
  if (const char* env = std::getenv("BRIES_DATA_DIR"); env && *env) return env;
  return BRIES_DEFAULT_DATA_DIR;
}

Taxonomy Taxonomy::load(const std::filesystem::path& path) {
  return parse(util::read_file(path), path.string());
}

Taxonomy Taxonomy::parse(std::string_view text, const std::string& origin) {
  const auto file = util::KvFile::parse(text, origin);
  std::vector<std::optional<AttackInfo>> slots(kAttackCount);

  for (const auto& section : file.sections()) {
    if (section.empty()) continue;
    const auto type = from_id(section);
    if (!type) throw Error(ErrorCode::InvalidData, origin + ": unknown attack id [" + section + "]");
    auto& slot = slots[index_of(*type)];
    if (slot) throw Error(ErrorCode::InvalidData, origin + ": duplicate section [" + section + "]");

    AttackInfo info{*type, section, "", "", {}};
    info.display_name = file.get(section, "display_name").value_or("");
    info.description = file.get(section, "description").value_or("");
    for (auto& alias : util::split(file.get(section, "aliases").value_or(""), ';')) {
      alias = util::trim(alias);
      if (!alias.empty()) info.aliases.push_back(alias);
    }
    if (info.display_name != display_name_of(*type))
      throw Error(ErrorCode::InvalidData, origin + ": [" + section + "] display_name must be '" +
                                              std::string(display_name_of(*type)) + "'");
    if (util::trim(info.description).empty())
      throw Error(ErrorCode::InvalidData, origin + ": [" + section + "] has no description");
    slot = std::move(info);
  }

  Taxonomy tax;
  for (std::size_t i = 0; i < kAttackCount; ++i) {
    if (!slots[i])
      throw Error(ErrorCode::InvalidData,
                  origin + ": missing section [" + std::string(kNames[i].id) + "]");
    tax.attacks_.push_back(std::move(*slots[i]));
  }

  std::string canonical_dump;
  for (const auto& a : tax.attacks_) {
    std::vector<std::string> surfaces{a.display_name};
    surfaces.insert(surfaces.end(), a.aliases.begin(), a.aliases.end());
    for (const auto& s : surfaces) {
      auto form = util::canonicalize(s);
      auto clash = std::find_if(tax.forms_.begin(), tax.forms_.end(),
                                [&](const auto& f) { return f.first == form; });
      if (clash != tax.forms_.end()) {
        if (clash->second != a.type)
          throw Error(ErrorCode::InvalidData, origin + ": surface form '" + s +
                                                  "' maps to two attack types");
        continue;
      }
      tax.forms_.emplace_back(std::move(form), a.type);
    }
    canonical_dump += a.id + '\x1f' + a.display_name + '\x1f' + a.description + '\x1f' +
                      util::join(a.aliases, "\x1e") + '\x1d';
  }
  tax.hash_ = util::digest(canonical_dump);
  return tax;
}

const Taxonomy& Taxonomy::builtin() {
  static const Taxonomy instance = load(data_dir() / "taxonomy.ini");
  return instance;
}

std::optional<AttackType> Taxonomy::normalize(std::string_view raw) const {
  const auto needle = util::canonicalize(raw);
  if (needle.empty()) return std::nullopt;
  for (const auto& [form, type] : forms_)
    if (form == needle) return type;

  double best = std::numeric_limits<double>::infinity();
  std::set<AttackType> best_types;
  for (const auto& [form, type] : forms_) {
    const double d = util::normalized_levenshtein(needle, form);
    if (d < best) {
      best = d;
      best_types = {type};
    } else if (d == best) {
      best_types.insert(type);
    }
  }
  if (best <= fuzz_threshold_ && best_types.size() == 1) return *best_types.begin();
  return std::nullopt;
}

}  // namespace bries::taxonomy
