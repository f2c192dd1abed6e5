#include <doctest.h>

#include <chrono>
#include <string>

#include "bries/agents.hpp"
#include "bries/error.hpp"
#include "bries/mock_llm_server.hpp"
#include "bries/util/random.hpp"

using namespace bries;
using agents::Prediction;
using prompt::PromptStrategy;
using taxonomy::AttackType;
using taxonomy::Taxonomy;

namespace {

const Taxonomy& tax() { return Taxonomy::builtin(); }

Prediction random_prediction(util::Rng& rng, bool with_confidence) {
  Prediction p;
  for (std::size_t i = 0; i < taxonomy::kAttackCount; ++i) {
    if (rng.uniform() < 0.5) continue;
    std::optional<int> c;
    if (with_confidence) c = static_cast<int>(rng.below(10)) + 1;
    p[taxonomy::attack_at(i)] = c;
  }
  return p;
}

struct MockAgent {
  mock::MockLlmServer server;
  gateway::Gateway gw;
  agents::AgentContext ctx;

  static gateway::GatewayOptions quick() {
    gateway::GatewayOptions o;
    o.retry.max_retries = 1;
    o.retry.initial_backoff = std::chrono::milliseconds(1);
    o.timeout = std::chrono::milliseconds(2000);
    return o;
  }

  MockAgent()
      : gw(gateway::RouteTable({gateway::ModelRoute{"m", server.base_url(), "", 0.0, ""}}), quick()),
        ctx{tax(), gw, 256} {}
};

}  // namespace

TEST_CASE("confidence lines parse into scored types") {
  const auto r = agents::parse_detection(tax(), "Appeal to Fear - score: 8\nLoaded Language - score: 6",
                                         PromptStrategy::confidence());
  CHECK(r.predicted == Prediction{{AttackType::AppealToFear, 8}, {AttackType::LoadedLanguage, 6}});
  CHECK(r.unparsed_fragments.empty());
}

TEST_CASE("negative responses yield nothing") {
  for (const char* raw : {"No fallacies found.", "none", "None found", "NO LOGICAL FALLACIES were identified"}) {
    for (auto s : {PromptStrategy::base(), PromptStrategy::combined()}) {
      const auto r = agents::parse_detection(tax(), raw, s);
      CHECK(r.predicted.empty());
      CHECK(r.unparsed_fragments.empty());
    }
  }
}

TEST_CASE("numbered list under base strategy") {
  const auto r = agents::parse_detection(tax(), "1. appeal to authority\n2. strawman argument", PromptStrategy::base());
  CHECK(r.predicted == Prediction{{AttackType::AppealToAuthority, std::nullopt}});
  CHECK(r.unparsed_fragments == std::vector<std::string>{"strawman argument"});
}

TEST_CASE("segmentation handles semicolons, bullets and explanations") {
  const auto r = agents::parse_detection(
      tax(), "- Red Herring: changes the subject; * Doubt\n• Slogans - short catchy phrase\r\nFlag Waving, Bandwagon",
      PromptStrategy::descriptions());
  CHECK(r.predicted == Prediction{{AttackType::RedHerring, std::nullopt},
                                  {AttackType::Doubt, std::nullopt},
                                  {AttackType::Slogans, std::nullopt},
                                  {AttackType::FlagWaving, std::nullopt},
                                  {AttackType::Bandwagon, std::nullopt}});
  CHECK(r.unparsed_fragments.empty());
}

TEST_CASE("garbage lands in fragments") {
  const auto r = agents::parse_detection(tax(), "asdf qwer", PromptStrategy::base());
  CHECK(r.predicted.empty());
  CHECK(r.unparsed_fragments == std::vector<std::string>{"asdf qwer"});
}

TEST_CASE("confidence is never invented and never dropped silently") {
  SUBCASE("scores under a base strategy are ignored") {
    const auto r = agents::parse_detection(tax(), "Doubt - score: 7", PromptStrategy::base());
    CHECK(r.predicted == Prediction{{AttackType::Doubt, std::nullopt}});
  }
  SUBCASE("missing score under s0 is a fragment") {
    const auto r = agents::parse_detection(tax(), "Doubt\nSlogans - score: 3", PromptStrategy::confidence());
    CHECK(r.predicted == Prediction{{AttackType::Slogans, 3}});
    CHECK(r.unparsed_fragments == std::vector<std::string>{"Doubt"});
  }
  SUBCASE("score spelling variants") {
    const auto r = agents::parse_detection(
        tax(), "Doubt - Score: 4\nSlogans: score=5\nRepetition (confidence score: 6/10)\nLabeling - 2",
        PromptStrategy::confidence());
    CHECK(r.predicted == Prediction{{AttackType::Doubt, 4},
                                    {AttackType::Slogans, 5},
                                    {AttackType::Repetition, 6},
                                    {AttackType::Labeling, 2}});
    CHECK(r.unparsed_fragments.empty());
  }
}

TEST_CASE("out-of-range scores are clamped and audited") {
  const auto r = agents::parse_detection(tax(), "Doubt - score: 0\nSlogans - score: 11\nRepetition - score: 7.6",
                                         PromptStrategy::confidence());
  CHECK(r.predicted == Prediction{{AttackType::Doubt, 1}, {AttackType::Slogans, 10}, {AttackType::Repetition, 8}});
  CHECK(r.unparsed_fragments == std::vector<std::string>{"0", "11", "7.6"});
}

TEST_CASE("duplicates keep the highest confidence") {
  const auto r = agents::parse_detection(tax(), "Doubt - score: 3\ndoubt - score: 9\nDOUBT - score: 5",
                                         PromptStrategy::confidence());
  CHECK(r.predicted == Prediction{{AttackType::Doubt, 9}});
}

TEST_CASE("parse(format(S)) == S for random subsets") {
  util::Rng rng(42);
  for (int trial = 0; trial < 500; ++trial) {
    const bool conf = trial % 2 == 0;
    const auto strategy = conf ? PromptStrategy::confidence() : PromptStrategy::base();
    const auto p = random_prediction(rng, conf);
    const auto text = agents::format_detection(tax(), p);
    const auto back = agents::parse_detection(tax(), text, strategy);
    REQUIRE(back.predicted == p);
    CHECK(back.unparsed_fragments.empty());
  }
}

TEST_CASE("predicted types are always canonical") {
  util::Rng rng(7);
  const std::string pieces[] = {"Doubt", "score: 4", "foo", "\n", ";", " - ", "Red Herring", "11", "1.", ","};
  for (int trial = 0; trial < 300; ++trial) {
    std::string raw;
    for (int k = 0; k < 12; ++k) raw += pieces[rng.below(std::size(pieces))];
    for (auto s : {PromptStrategy::base(), PromptStrategy::combined()}) {
      const auto r = agents::parse_detection(tax(), raw, s);
      for (const auto& [t, c] : r.predicted) {
        CHECK(taxonomy::index_of(t) < taxonomy::kAttackCount);
        CHECK(c.has_value() == s.with_confidence);
        if (c) CHECK((*c >= 1 && *c <= 10));
      }
    }
  }
}

TEST_CASE("detect and defend through a mock endpoint") {
  MockAgent a;
  a.server.script("m", {mock::MockReply{200, "Appeal to Fear"}});
  const auto d = agents::detect(a.ctx, "doc1", "Some scary text.", "m", PromptStrategy::base(), 0.0);
  CHECK(d.predicted == Prediction{{AttackType::AppealToFear, std::nullopt}});
  CHECK(d.document_id == "doc1");
  CHECK(d.raw_text == "Appeal to Fear");

  a.server.script("m", {mock::MockReply{200, "Clean text."}});
  const auto def = agents::defend(a.ctx, "Some scary text.", d, "m", 0.0);
  CHECK(def.inoculated_text == "Clean text.");
  CHECK(def.source_detection_raw == "Appeal to Fear");
  const auto prompts = a.server.requests();
  REQUIRE(prompts.size() == 2);
  CHECK(prompts[1].prompt.ends_with("Original Text: Some scary text.\nAttack: Appeal to Fear"));
}

TEST_CASE("defender still runs when nothing was detected") {
  MockAgent a;
  a.server.script("m", {mock::MockReply{200, "No fallacies found."}, mock::MockReply{200, "Same text."}});
  const auto d = agents::detect(a.ctx, "d", "Plain.", "m", PromptStrategy::combined(), 0.7);
  CHECK(d.predicted.empty());
  const auto def = agents::defend(a.ctx, "Plain.", d, "m", 0.7);
  CHECK(def.inoculated_text == "Same text.");
  CHECK(a.server.requests()[1].prompt.ends_with("Attack: No fallacies found."));
}

TEST_CASE("agent error paths") {
  MockAgent a;
  a.server.script("m", {mock::MockReply{200, " \n\t "}});
  agents::DetectionResult d;
  d.document_id = "x";
  try {
    agents::defend(a.ctx, "Text.", d, "m", 0.0);
    FAIL("expected EmptyRewrite");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyRewrite);
  }
  try {
    agents::detect(a.ctx, "x", "Text.", "missing-model", PromptStrategy::base(), 0.0);
    FAIL("expected UnknownModel");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnknownModel);
  }
  CHECK_THROWS_AS(agents::detect(a.ctx, "x", "  ", "m", PromptStrategy::base(), 0.0), Error);
}

TEST_CASE("request ids encode the run key") {
  MockAgent a;
  const auto req = agents::detector_request(a.ctx, "doc7", "Text.", "m", PromptStrategy::descriptions(), 0.5);
  CHECK(req.request_id == "detect/doc7/m/d0/0.5");
  CHECK(req.max_tokens == 256);
  CHECK(req.prompt.strategy == PromptStrategy::descriptions());
}
