#include "bries/sec_signatures.hpp"

#include <algorithm>
#include <fstream>
#include <regex>

#include "bries/error.hpp"
#include "bries/taxonomy.hpp"
#include "bries/util/hash.hpp"
#include "bries/util/kv_file.hpp"
#include "bries/util/text.hpp"

namespace bries::sec {

namespace {

constexpr std::array<MeasureInfo, kMeasureCount> kMeasures{{
    {Measure::Attitude, "Attitude", RangeKind::Signed},
    {Measure::Sentiment, "Sentiment", RangeKind::Signed},
    {Measure::EmotionAnger, "Emotion:Anger", RangeKind::Unit},
    {Measure::EmotionFear, "Emotion:Fear", RangeKind::Unit},
    {Measure::EmotionJoy, "Emotion:Joy", RangeKind::Unit},
    {Measure::EmotionSadness, "Emotion:Sadness", RangeKind::Unit},
    {Measure::IntentAgreeing, "Intent:Agreeing", RangeKind::Unit},
    {Measure::MoralAuthority, "Moral:Authority", RangeKind::Unit},
    {Measure::MoralFairness, "Moral:Fairness", RangeKind::Unit},
    {Measure::MoralHarm, "Moral:Harm", RangeKind::Unit},
    {Measure::MoralIngroup, "Moral:Ingroup", RangeKind::Unit},
    {Measure::MoralPurity, "Moral:Purity", RangeKind::Unit},
    {Measure::Morality, "Morality", RangeKind::Unit},
    {Measure::PerspectivePositive, "Perspective:Positive", RangeKind::Unit},
    {Measure::PerspectiveNeutral, "Perspective:Neutral", RangeKind::Unit},
    {Measure::PerspectiveNegative, "Perspective:Negative", RangeKind::Unit},
    {Measure::Toxicity, "Toxicity", RangeKind::Unit},
    {Measure::Subjectivity, "Subjectivity", RangeKind::Unit},
    {Measure::Empathy, "Empathy", RangeKind::Unit},
}};

// Lexicon list(s) behind each unit measure.
const char* unit_list(Measure m) {
  switch (m) {
    case Measure::EmotionAnger: return "emotion_anger.terms";
    case Measure::EmotionFear: return "emotion_fear.terms";
    case Measure::EmotionJoy: return "emotion_joy.terms";
    case Measure::EmotionSadness: return "emotion_sadness.terms";
    case Measure::IntentAgreeing: return "intent_agreeing.terms";
    case Measure::MoralAuthority: return "moral_authority.terms";
    case Measure::MoralFairness: return "moral_fairness.terms";
    case Measure::MoralHarm: return "moral_harm.terms";
    case Measure::MoralIngroup: return "moral_ingroup.terms";
    case Measure::MoralPurity: return "moral_purity.terms";
    case Measure::Toxicity: return "toxicity.terms";
    case Measure::Subjectivity: return "subjectivity.terms";
    case Measure::Empathy: return "empathy.terms";
    default: return nullptr;
  }
}

const std::vector<std::string> kMoralLists = {
    "morality.terms",      "moral_authority.terms", "moral_fairness.terms",
    "moral_harm.terms",    "moral_ingroup.terms",   "moral_purity.terms",
};
constexpr const char* kAnyMoral = "morality.any";

std::string describe(Measure m) {
  switch (m) {
    case Measure::Attitude: return "attitude (0 = strongly against the topic, 100 = strongly in favour)";
    case Measure::Sentiment: return "sentiment (0 = very negative, 100 = very positive)";
    case Measure::EmotionAnger: return "intensity of anger";
    case Measure::EmotionFear: return "intensity of fear";
    case Measure::EmotionJoy: return "intensity of joy";
    case Measure::EmotionSadness: return "intensity of sadness";
    case Measure::IntentAgreeing: return "degree to which the author expresses agreement";
    case Measure::MoralAuthority: return "appeal to the moral foundation of authority and respect";
    case Measure::MoralFairness: return "appeal to the moral foundation of fairness and justice";
    case Measure::MoralHarm: return "appeal to the moral foundation of care and harm";
    case Measure::MoralIngroup: return "appeal to the moral foundation of ingroup loyalty";
    case Measure::MoralPurity: return "appeal to the moral foundation of purity and sanctity";
    case Measure::Morality: return "overall moral content";
    case Measure::Toxicity: return "toxicity";
    case Measure::Subjectivity: return "subjectivity";
    case Measure::Empathy: return "empathy expressed toward others";
    default: return std::string(name_of(m));
  }
}

}  // namespace

const std::array<MeasureInfo, kMeasureCount>& canonical_measures() noexcept { return kMeasures; }
const MeasureInfo& info(Measure m) noexcept { return kMeasures[static_cast<std::size_t>(m)]; }
std::string_view name_of(Measure m) noexcept { return info(m).name; }

std::optional<Measure> measure_from_name(std::string_view name) noexcept {
  for (const auto& mi : kMeasures)
    if (mi.name == name) return mi.measure;
  return std::nullopt;
}

bool is_perspective(Measure m) noexcept {
  return m == Measure::PerspectivePositive || m == Measure::PerspectiveNeutral ||
         m == Measure::PerspectiveNegative;
}

// ---------------------------------------------------------------------------

Lexicon Lexicon::load(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error(ErrorCode::FileNotFound, dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".txt") files.push_back(entry.path());
  std::sort(files.begin(), files.end());

  std::map<std::string, std::vector<std::string>> lists;
  for (const auto& f : files) {
    auto& terms = lists[f.stem().string()];
    for (auto& line : util::split(util::read_file(f), '\n')) {
      auto t = util::trim(line);
      if (t.empty() || t[0] == '#') continue;
      terms.push_back(util::to_lower(t));
    }
  }
  return from_lists(std::move(lists));
}

Lexicon Lexicon::from_lists(std::map<std::string, std::vector<std::string>> lists) {
  Lexicon lex;
  std::string dump;
  for (auto& [name, terms] : lists) {
    std::sort(terms.begin(), terms.end());
    terms.erase(std::unique(terms.begin(), terms.end()), terms.end());
    dump += name + '\x1d' + util::join(terms, "\x1e") + '\x1f';
    lex.lists[name] = std::unordered_set<std::string>(terms.begin(), terms.end());
  }
  lex.hash = util::digest(dump);
  return lex;
}

std::size_t LexiconEvidence::hit(const std::string& list) const {
  auto it = hits.find(list);
  return it == hits.end() ? 0 : it->second;
}

LexiconScorer::LexiconScorer(Lexicon lexicon) : lexicon_(std::move(lexicon)) {}

std::shared_ptr<const LexiconScorer> LexiconScorer::builtin() {
  static const auto instance =
      std::make_shared<const LexiconScorer>(Lexicon::load(taxonomy::data_dir() / "lexicons"));
  return instance;
}

std::string LexiconScorer::id() const { return "lexicon@" + lexicon_.hash; }

std::vector<Measure> LexiconScorer::measures() const {
  std::vector<Measure> out;
  for (const auto& mi : kMeasures) out.push_back(mi.measure);
  return out;
}

LexiconEvidence LexiconScorer::evidence(std::string_view text) const {
  LexiconEvidence ev;
  for (const auto& tok : util::word_tokens(text)) {
    ++ev.tokens;
    bool moral = false;
    for (const auto& [name, terms] : lexicon_.lists) {
      if (terms.count(tok)) {
        ++ev.hits[name];
        if (std::find(kMoralLists.begin(), kMoralLists.end(), name) != kMoralLists.end()) moral = true;
      }
    }
    if (moral) ++ev.hits[kAnyMoral];
  }
  return ev;
}

double LexiconScorer::score_from(const LexiconEvidence& ev, Measure m) const {
  const double n = static_cast<double>(ev.tokens);
  auto rate = [&](const std::string& list) { return n == 0 ? 0.0 : static_cast<double>(ev.hit(list)) / n; };
  auto signed_rate = [&](const std::string& stem) {
    if (n == 0) return 0.0;
    const double diff = static_cast<double>(ev.hit(stem + ".positive")) -
                        static_cast<double>(ev.hit(stem + ".negative"));
    return std::clamp(diff / n, -1.0, 1.0);
  };

  switch (m) {
    case Measure::Attitude: return signed_rate("attitude");
    case Measure::Sentiment: return signed_rate("sentiment");
    case Measure::Morality: return rate(kAnyMoral);
    case Measure::PerspectivePositive:
    case Measure::PerspectiveNeutral:
    case Measure::PerspectiveNegative: {
      const double p = static_cast<double>(ev.hit("perspective.positive"));
      const double q = static_cast<double>(ev.hit("perspective.negative"));
      const double neutral = std::max(1.0, n - p - q);
      const double total = p + q + neutral;
      if (m == Measure::PerspectivePositive) return p / total;
      if (m == Measure::PerspectiveNegative) return q / total;
      return neutral / total;
    }
    default: return rate(unit_list(m));
  }
}

ScoreBatch LexiconScorer::score(std::string_view text, const std::vector<Measure>& wanted) const {
  ScoreBatch out;
  const auto ev = evidence(text);
  for (auto m : wanted) out.scores[m] = score_from(ev, m);
  return out;
}

// ---------------------------------------------------------------------------

std::string llm_scorer_prompt(Measure measure, std::string_view text) {
  return "Rate the " + describe(measure) +
         " of the following text on a scale from 0 to 100. Respond with a single integer and "
         "nothing else.\nText: " +
         std::string(text);
}

LlmScore llm_score(const gateway::Gateway& gw, Measure measure, std::string_view text,
                   std::string_view model_id, double temperature) {
  gateway::CompletionRequest req;
  req.model_id = std::string(model_id);
  req.prompt.text = llm_scorer_prompt(measure, text);
  req.temperature = temperature;
  req.max_tokens = 16;
  req.request_id = "score/" + std::string(name_of(measure)) + "/" + util::digest(text);

  LlmScore out;
  try {
    out.raw_text = gw.complete(req).raw_text;
  } catch (const Error& e) {
    throw Error(ErrorCode::ScorerFailure, std::string(name_of(measure)) + ": " + e.what());
  }
  static const std::regex first_int(R"(-?[0-9]+)");
  std::smatch m;
  if (!std::regex_search(out.raw_text, m, first_int))
    throw Error(ErrorCode::ScorerFailure,
                std::string(name_of(measure)) + ": non-numeric reply '" + out.raw_text + "'");
  double v = 0.0;
  try {
    v = std::stod(m.str());
  } catch (const std::exception&) {
    throw Error(ErrorCode::ScorerFailure, std::string(name_of(measure)) + ": unparsable integer");
  }
  if (v < 0.0 || v > 100.0) {
    out.clamped = true;
    v = std::clamp(v, 0.0, 100.0);
  }
  out.value = info(measure).range == RangeKind::Signed ? v / 50.0 - 1.0 : v / 100.0;
  return out;
}

LlmScorer::LlmScorer(const gateway::Gateway& gw, std::string model_id, std::vector<Measure> covered)
    : gw_(gw), model_id_(std::move(model_id)), covered_(std::move(covered)) {
  for (auto m : covered_)
    if (is_perspective(m))
      throw Error(ErrorCode::InvalidConfig,
                  "the LLM scorer cannot cover perspective measures individually");
}

ScoreBatch LlmScorer::score(std::string_view text, const std::vector<Measure>& wanted) const {
  ScoreBatch out;
  for (auto m : wanted) {
    try {
      auto s = llm_score(gw_, m, text, model_id_);
      out.scores[m] = s.value;
      if (s.clamped)
        out.audit.push_back(std::string(name_of(m)) + ": clamped reply '" + s.raw_text + "'");
    } catch (const Error& e) {
      out.failures[m] = e.what();
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

void ScorerRegistry::register_scorer(std::shared_ptr<const Scorer> scorer) {
  if (!scorer) throw Error(ErrorCode::InvalidConfig, "null scorer");
  const auto covered = scorer->measures();
  if (covered.empty()) throw Error(ErrorCode::InvalidConfig, "scorer " + scorer->id() + " covers no measure");
  for (auto m : covered) by_measure_[static_cast<std::size_t>(m)] = scorer;
}

void ScorerRegistry::validate() const {
  std::vector<std::string> missing;
  for (const auto& mi : kMeasures)
    if (!by_measure_[static_cast<std::size_t>(mi.measure)]) missing.emplace_back(mi.name);
  if (!missing.empty())
    throw Error(ErrorCode::UncoveredMeasure, "no scorer for: " + util::join(missing, ", "));
  const auto* p = scorer_for(Measure::PerspectivePositive);
  if (p != scorer_for(Measure::PerspectiveNeutral) || p != scorer_for(Measure::PerspectiveNegative))
    throw Error(ErrorCode::InvalidConfig, "perspective measures must share one scorer");
}

const Scorer* ScorerRegistry::scorer_for(Measure m) const noexcept {
  return by_measure_[static_cast<std::size_t>(m)].get();
}

std::string ScorerRegistry::provenance(Measure m) const {
  const auto* s = scorer_for(m);
  return s ? s->id() : std::string();
}

ScorerRegistry ScorerRegistry::lexicon_default() {
  ScorerRegistry r;
  r.register_scorer(LexiconScorer::builtin());
  return r;
}

SecSignature score_text(std::string_view text_id, std::string_view text,
                        const ScorerRegistry& registry) {
  registry.validate();
  // Group measures by scorer so each scorer sees the text once.
  std::vector<std::pair<const Scorer*, std::vector<Measure>>> groups;
  for (const auto& mi : kMeasures) {
    const Scorer* s = registry.scorer_for(mi.measure);
    auto it = std::find_if(groups.begin(), groups.end(), [&](const auto& g) { return g.first == s; });
    if (it == groups.end()) {
      groups.push_back({s, {mi.measure}});
    } else {
      it->second.push_back(mi.measure);
    }
  }

  SecSignature sig;
  sig.text_id = std::string(text_id);
  for (const auto& [scorer, wanted] : groups) {
    ScoreBatch batch;
    try {
      batch = scorer->score(text, wanted);
    } catch (const std::exception& e) {
      for (auto m : wanted) batch.failures[m] = e.what();
    }
    for (auto m : wanted) {
      sig.scorer_provenance[m] = scorer->id();
      if (auto f = batch.failures.find(m); f != batch.failures.end()) {
        sig.failures[m] = f->second;
        continue;
      }
      auto sc = batch.scores.find(m);
      if (sc == batch.scores.end()) {
        sig.failures[m] = "scorer returned no value";
        continue;
      }
      sig.scores[m] = std::clamp(sc->second, range_low(m), range_high(m));
    }
    for (auto& a : batch.audit) sig.audit.push_back(std::move(a));
  }
  return sig;
}

}  // namespace bries::sec
