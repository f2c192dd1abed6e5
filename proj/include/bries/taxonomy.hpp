#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace bries::taxonomy {

/// The 23 persuasion-attack types, declared in canonical order
/// (alphabetical by display name). Prompt text depends on this order.
enum class AttackType : std::uint8_t {
  AppealToAuthority,
  AppealToFear,
  AppealToHypocrisy,
  AppealToTime,
  AppealToValues,
  Bandwagon,
  CausalOversimplification,
  ConversationKiller,
  Doubt,
  ExaggerationOrMinimisation,
  FalseDilemma,
  FlagWaving,
  GuiltByAssociation,
  Labeling,
  LoadedLanguage,
  Obfuscation,
  QuestioningTheReputation,
  RedHerring,
  Repetition,
  SlipperySlope,
  Slogans,
  StrawMan,
  Whataboutism,
};

inline constexpr std::size_t kAttackCount = 23;

constexpr std::size_t index_of(AttackType t) noexcept { return static_cast<std::size_t>(t); }
constexpr AttackType attack_at(std::size_t i) noexcept { return static_cast<AttackType>(i); }

/// Stable snake_case identifier, e.g. "appeal_to_fear".
std::string_view id_of(AttackType t) noexcept;
/// Canonical label, e.g. "Appeal to Fear". Does not require a loaded taxonomy.
std::string_view display_name_of(AttackType t) noexcept;
std::optional<AttackType> from_id(std::string_view id) noexcept;

struct AttackInfo {
  AttackType type;
  std::string id;
  std::string display_name;
  std::string description;
  std::vector<std::string> aliases;
};

/// Immutable registry of attack types loaded from the taxonomy data file.
/// Safe to share across threads once constructed.
class Taxonomy {
 public:
  static constexpr double kDefaultFuzzThreshold = 0.2;

  /// Parses and validates a taxonomy file. Throws Error(InvalidData) if the
  /// file does not describe exactly the 23 canonical types, if a description
  /// is empty, or if an alias is claimed by two types.
  static Taxonomy load(const std::filesystem::path& path);
  static Taxonomy parse(std::string_view text, const std::string& origin = "<memory>");

  /// The taxonomy shipped in data/taxonomy.ini (path overridable through the
  /// BRIES_DATA_DIR environment variable). Loaded once.
  static const Taxonomy& builtin();

  const std::vector<AttackInfo>& canonical_attacks() const noexcept { return attacks_; }
  const AttackInfo& info(AttackType t) const noexcept { return attacks_[index_of(t)]; }
  const std::string& description(AttackType t) const noexcept { return info(t).description; }
  const std::string& display_name(AttackType t) const noexcept { return info(t).display_name; }

  /// Case, punctuation and whitespace insensitive lookup against display
  /// names and aliases. Falls back to the closest candidate when its
  /// normalized Levenshtein distance is within the fuzz threshold and the
  /// closest candidate is unique across types.
  std::optional<AttackType> normalize(std::string_view raw) const;

  double fuzz_threshold() const noexcept { return fuzz_threshold_; }
  void set_fuzz_threshold(double t) noexcept { fuzz_threshold_ = t; }

  /// Digest of the canonical content (ids, names, descriptions, aliases).
  const std::string& content_hash() const noexcept { return hash_; }

  /// Every canonicalized surface form with the type it resolves to.
  const std::vector<std::pair<std::string, AttackType>>& surface_forms() const noexcept {
    return forms_;
  }

 private:
  std::vector<AttackInfo> attacks_;
  std::vector<std::pair<std::string, AttackType>> forms_;
  std::string hash_;
  double fuzz_threshold_ = kDefaultFuzzThreshold;
};

std::filesystem::path data_dir();

}  // namespace bries::taxonomy
