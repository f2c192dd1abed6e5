#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "bries/error.hpp"
#include "bries/experiment.hpp"
#include "bries/util/random.hpp"
#include "bries/util/kv_file.hpp"
#include "bries/util/text.hpp"

using namespace bries;
using namespace bries::experiment;
using taxonomy::AttackType;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static std::atomic<int> counter{0};
    path = fs::temp_directory_path() /
           ("bries_exp_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) { return util::read_file(p); }

void spit(const fs::path& p, std::string_view s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

template <typename F>
void expect_code(ErrorCode code, F&& f, std::string_view message_part = {}) {
  try {
    f();
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == code);
    if (!message_part.empty()) CHECK(std::string(e.what()).find(message_part) != std::string::npos);
  }
}

const char* kArticles =
    R"({"id":"x1","original":"The council approved the bus route after a public hearing.","attack":"Everyone already backs the bus route, and only fools would oppose it.","attack_types":["Bandwagon","Labeling"]})"
    "\n"
    R"({"id":"x2","original":"The factory will add two shifts next year.","attack":"Either we add shifts or the town dies; rivals will crush us.","attack_types":["False Dilemma","Appeal to Fear"]})"
    "\n";

std::string mock_config(const fs::path& data, const fs::path& out, std::string_view extra = {}) {
  return "dataset = " + data.string() + "\noutput_dir = " + out.string() +
         "\nmodels = mock-a\nstrategies = 0, s0\ntemperatures = 0\nparallelism = 3\nseed = 4\n"
         "[route:mock-a]\nbase_url = http://127.0.0.1:1\n[gateway]\nmax_retries = 0\n[mock]\nmock-a = perfect\n" +
         std::string(extra);
}

struct MockRig {
  std::unique_ptr<mock::MockLlmServer> server;
  std::unique_ptr<gateway::Gateway> gw;
  sec::ScorerRegistry registry = sec::ScorerRegistry::lexicon_default();

  explicit MockRig(const ExperimentConfig& cfg) {
    const auto& tax = taxonomy::Taxonomy::builtin();
    std::vector<mock::MockDocument> docs;
    for (const auto& a : load_dataset(cfg.dataset, tax))
      docs.push_back({a.attack, a.original, {a.attack_types.begin(), a.attack_types.end()}});
    server = std::make_unique<mock::MockLlmServer>(mock::dataset_responder(tax, docs, cfg.mock_profiles));
    auto routes = cfg.routes;
    routes.redirect_all(server->base_url());
    gw = std::make_unique<gateway::Gateway>(routes, cfg.gateway);
  }
  RunContext ctx() const { return {taxonomy::Taxonomy::builtin(), *gw, registry}; }
};

RunRecord fake_run(const std::string& article, const std::string& model, std::set<AttackType> gold,
                   std::set<AttackType> predicted, const std::string& rewritten) {
  const auto& reg = sec::ScorerRegistry::lexicon_default();
  RunRecord r;
  r.key = {article, model, prompt::PromptStrategy::base(), 0.0};
  r.gold = gold;
  agents::DetectionResult d;
  d.document_id = article;
  d.model_id = model;
  for (auto t : predicted) d.predicted[t] = std::nullopt;
  r.detection_score = eval::detection_score(d, {article, gold});
  r.detection = d;
  r.defense = agents::DefenseResult{article, model, rewritten, ""};
  r.sec_attack = sec::score_text(article, "attack: " + rewritten + " " + rewritten, reg);
  r.sec_inoculated = sec::score_text(article, rewritten, reg);
  return r;
}

}  // namespace

TEST_CASE("dataset loading") {
  const auto& tax = taxonomy::Taxonomy::builtin();
  const std::string three = std::string(kArticles) +
                            R"({"id":"x3","original":"o","attack":"a","attack_types":["appeal to fear"]})" + "\n";
  const auto recs = parse_dataset(three, tax);
  REQUIRE(recs.size() == 3);
  CHECK(recs[2].attack_types == std::set<AttackType>{AttackType::AppealToFear});
  CHECK(recs[0].attack_types == std::set<AttackType>{AttackType::Bandwagon, AttackType::Labeling});

  const std::string missing = std::string(kArticles) + R"({"id":"x3","original":"o","attack_types":[]})" + "\n";
  expect_code(ErrorCode::MalformedRecord, [&] { parse_dataset(missing, tax, "f.jsonl"); }, "f.jsonl:3");
  const std::string unknown =
      "\n" + std::string(R"({"id":"y","original":"o","attack":"a","attack_types":["Telepathy"]})");
  expect_code(ErrorCode::UnknownAttackType, [&] { parse_dataset(unknown, tax, "g"); }, "g:2");
  const std::string dup = std::string(kArticles) + R"({"id":"x1","original":"o","attack":"a","attack_types":[]})";
  expect_code(ErrorCode::MalformedRecord, [&] { parse_dataset(dup, tax); }, "duplicate");
  expect_code(ErrorCode::FileNotFound, [&] { load_dataset("/nonexistent/file.jsonl", tax); });

  const auto fixture = load_dataset(fs::path(BRIES_GOLDEN_DIR) / "../../data/fixtures/articles.jsonl", tax);
  CHECK(fixture.size() == 5);
}

TEST_CASE("config parsing") {
  TempDir dir;
  const auto cfg = load_config(fs::path(BRIES_GOLDEN_DIR) / "../../configs/mock_experiment.conf");
  CHECK(cfg.models == std::vector<std::string>{"mock-perfect", "mock-noisy"});
  CHECK(cfg.strategies.size() == 4);
  CHECK(cfg.temperatures == std::vector<double>{0.0, 0.7});
  CHECK(cfg.parallelism == 4);
  CHECK(cfg.seed == 7);
  CHECK(cfg.assessor.ate.seed == 7);
  CHECK(cfg.assessor.sem.omega == 0.3);
  CHECK(cfg.assessor.ate.forest.trees == 50);
  CHECK(cfg.dataset.filename() == "articles.jsonl");
  CHECK(cfg.mock_profiles.at("mock-noisy") == mock::MockProfile::Noisy);
  CHECK(cfg.gateway.retry.max_retries == 3);

  const auto base = mock_config("d.jsonl", "out");
  CHECK_NOTHROW(parse_config(base, dir.path));
  CHECK(parse_config(base, dir.path).dataset == dir.path / "d.jsonl");
  expect_code(ErrorCode::InvalidConfig, [&] { parse_config("colour = blue\n" + base, dir.path); }, "colour");
  expect_code(ErrorCode::InvalidConfig, [&] { parse_config(base + "[weird]\nk = v\n", dir.path); }, "weird");
  std::string no_route = base;
  no_route.replace(no_route.find("models = mock-a"), 15, "models = mock-a, mock-b");
  expect_code(ErrorCode::InvalidConfig, [&] { parse_config(no_route, dir.path); }, "mock-b");
  std::string hot = base;
  hot.replace(hot.find("temperatures = 0"), 16, "temperatures = 2.5");
  expect_code(ErrorCode::InvalidConfig, [&] { parse_config(hot, dir.path); });
  std::string zero = base;
  zero.replace(zero.find("parallelism = 3"), 15, "parallelism = 0");
  expect_code(ErrorCode::InvalidConfig, [&] { parse_config(zero, dir.path); });
  std::string no_strategy = base;
  no_strategy.replace(no_strategy.find("strategies = 0, s0"), 18, "strategies = x9");
  expect_code(ErrorCode::InvalidConfig, [&] { parse_config(no_strategy, dir.path); });
}

TEST_CASE("run records round-trip and hash without timestamps") {
  const auto& tax = taxonomy::Taxonomy::builtin();
  auto r = fake_run("a", "m", {AttackType::Doubt}, {AttackType::Doubt, AttackType::Slogans}, "calm words");
  r.detection->predicted[AttackType::Slogans] = 6;
  r.started_at = "2026-01-01T00:00:00Z";
  r.finished_at = "2026-01-01T00:00:01Z";
  const auto line = to_json_line(r);
  CHECK(line.find('\n') == std::string::npos);
  const auto back = record_from_json(line, tax);
  CHECK(to_json_line(back) == line);
  CHECK(content_hash(back) == content_hash(r));
  auto later = r;
  later.started_at = "2030-05-05T00:00:00Z";
  CHECK(content_hash(later) == content_hash(r));
  auto changed = r;
  changed.detection_score = 0.25;
  CHECK(content_hash(changed) != content_hash(r));

  RunRecord failed;
  failed.key = {"a", "m", prompt::PromptStrategy::combined(), 0.7};
  failed.error_code = "Timeout";
  failed.error_message = "no reply";
  const auto fb = record_from_json(to_json_line(failed), tax);
  CHECK_FALSE(fb.ok());
  CHECK_FALSE(fb.detection.has_value());
  CHECK(fb.key == failed.key);
}

TEST_CASE("run store skips a torn final line") {
  TempDir dir;
  const auto& tax = taxonomy::Taxonomy::builtin();
  const auto path = dir.path / "runs.jsonl";
  {
    RunStore store(path, tax);
    store.append(fake_run("a", "m", {AttackType::Doubt}, {}, "x"));
    store.append(fake_run("b", "m", {AttackType::Doubt}, {}, "y"));
  }
  std::string text = slurp(path);
  spit(path, text + text.substr(0, 40));
  RunStore reloaded(path, tax);
  CHECK(reloaded.records().size() == 2);
  CHECK(reloaded.contains(fake_run("b", "m", {}, {}, "").key.str()));

  spit(path, "garbage\n" + text);
  expect_code(ErrorCode::MalformedRecord, [&] { RunStore bad(path, tax); });
}

TEST_CASE("directory lock is exclusive") {
  TempDir dir;
  {
    DirectoryLock first(dir.path);
    expect_code(ErrorCode::LockHeld, [&] { DirectoryLock second(dir.path); });
  }
  CHECK_NOTHROW(DirectoryLock again(dir.path));
}

TEST_CASE("grid, resumability and perfect scores through the mock") {
  TempDir dir;
  spit(dir.path / "articles.jsonl", kArticles);
  const auto cfg = parse_config(mock_config("articles.jsonl", "out"), dir.path);
  MockRig rig(cfg);

  const auto first = run_experiment(cfg, rig.ctx());
  CHECK(first.runs_total == 4);
  CHECK(first.runs_new == 4);
  CHECK(first.runs_failed == 0);
  const auto requests = rig.server->request_count();
  CHECK(requests == 8);  // detect + defend per run
  CHECK(first.endpoint_requests == 8);
  REQUIRE(first.tables.size() == 2);
  for (const auto& t : first.tables) CHECK(t.macro_f1 == 1.0);

  const auto out = dir.path / "out";
  const std::vector<std::string> lines = [&] {
    std::vector<std::string> v;
    for (const auto& l : util::split(slurp(out / "runs.jsonl"), '\n'))
      if (!l.empty()) v.push_back(l);
    return v;
  }();
  CHECK(lines.size() == 4);
  for (const char* f : {"config.snapshot", "f1_tables.csv", "f1_tables.json", "summary.json"})
    CHECK(fs::exists(out / f));
  CHECK_FALSE(fs::exists(out / ".lock"));

  const auto csv = slurp(out / "f1_tables.csv");
  fs::remove(out / "f1_tables.csv");
  fs::remove(out / "f1_tables.json");
  const auto second = run_experiment(cfg, rig.ctx());
  CHECK(rig.server->request_count() == requests);
  CHECK(second.runs_new == 0);
  CHECK(second.endpoint_requests == 0);
  CHECK(slurp(out / "f1_tables.csv") == csv);
  CHECK(util::split(slurp(out / "runs.jsonl"), '\n').size() == lines.size() + 1);
}

TEST_CASE("failing endpoint yields error records, not an abort") {
  TempDir dir;
  spit(dir.path / "articles.jsonl", kArticles);
  auto cfg = parse_config(mock_config("articles.jsonl", "out"), dir.path);
  mock::MockLlmServer server([](const mock::MockRequest&) { return mock::MockReply{400, "bad"}; });
  auto routes = cfg.routes;
  routes.redirect_all(server.base_url());
  gateway::Gateway gw(routes, cfg.gateway);
  const auto reg = sec::ScorerRegistry::lexicon_default();
  const auto outcome = run_experiment(cfg, {taxonomy::Taxonomy::builtin(), gw, reg});
  CHECK(outcome.runs_total == 4);
  CHECK(outcome.runs_failed == 4);
  RunStore store(dir.path / "out" / "runs.jsonl", taxonomy::Taxonomy::builtin());
  for (const auto& r : store.records()) {
    CHECK_FALSE(r.ok());
    CHECK_FALSE(r.detection.has_value());
    CHECK_FALSE(r.defense.has_value());
  }
}

TEST_CASE("causal dataset shape on the llm axis") {
  std::vector<RunRecord> runs;
  const std::vector<std::string> texts{"calm report",  "fear danger threat", "we agree together", "they hate",
                                       "good news",    "sad loss",           "harm and hurt",     "our values",
                                       "plain facts",  "angry rage"};
  for (int i = 0; i < 10; ++i)
    runs.push_back(fake_run("a" + std::to_string(i), i % 2 ? "m2" : "m1", {AttackType::Doubt},
                            i % 3 ? std::set<AttackType>{AttackType::Doubt} : std::set<AttackType>{}, texts[static_cast<std::size_t>(i)]));
  const auto ds = build_causal_dataset(runs, TreatmentAxis::Llm, {.source_covariates = false});
  CHECK(ds.rows() == 10);
  CHECK(ds.treatments == std::vector<std::string>{"LLM:m1", "LLM:m2"});
  CHECK(ds.columns[0] == "LLM:m1");
  CHECK(ds.columns[1] == "LLM:m2");
  CHECK(ds.columns.back() == "Detection");
  for (const auto& c : ds.columns) CHECK_FALSE(c.starts_with("Source:"));
  for (int i = 0; i < 10; ++i) {
    CHECK(ds.data(i, 0) + ds.data(i, 1) == 1.0);
    CHECK(ds.data(i, static_cast<Eigen::Index>(ds.cols() - 1)) == runs[static_cast<std::size_t>(i)].detection_score);
  }
  // Every non-treatment column other than Detection is a canonical measure.
  for (std::size_t j = 2; j + 1 < ds.columns.size(); ++j) CHECK(sec::measure_from_name(ds.columns[j]).has_value());

  const auto with_source = build_causal_dataset(runs, TreatmentAxis::Llm);
  bool has_source = false;
  for (const auto& c : with_source.columns) has_source |= c.starts_with("Source:");
  CHECK(has_source);

  const auto binary = build_causal_dataset(runs, TreatmentAxis::Llm, {.source_covariates = false, .binary_detection = true});
  const auto det = binary.index_of("Detection");
  for (int i = 0; i < 10; ++i) CHECK(binary.data(i, det) == (i % 3 ? 1.0 : 0.0));
}

TEST_CASE("attack axis is multi-label one-hot") {
  std::vector<RunRecord> runs;
  const std::vector<std::string> texts{"calm report", "fear danger", "we agree", "they hate", "good news", "sad loss",
                                       "harm hurt", "our values", "plain facts", "angry rage", "happy day", "bad idea"};
  for (int i = 0; i < 12; ++i) {
    std::set<AttackType> gold{i % 2 ? AttackType::Doubt : AttackType::Slogans};
    if (i == 0) gold = {AttackType::AppealToFear, AttackType::Doubt};
    runs.push_back(fake_run("a" + std::to_string(i), "m", gold, gold, texts[static_cast<std::size_t>(i)]));
  }
  const auto ds = build_causal_dataset(runs, TreatmentAxis::Attack, {.source_covariates = false});
  const int fear = ds.index_of("Attack:Appeal to Fear");
  const int doubt = ds.index_of("Attack:Doubt");
  REQUIRE(fear >= 0);
  REQUIRE(doubt >= 0);
  CHECK(ds.data(0, fear) == 1.0);
  CHECK(ds.data(0, doubt) == 1.0);
  CHECK(ds.data(1, fear) == 0.0);
  CHECK(ds.is_treatment(fear));
}

TEST_CASE("nothing usable raises EmptyAfterFiltering") {
  std::vector<RunRecord> runs(3);
  for (auto& r : runs) {
    r.key = {"a", "m", prompt::PromptStrategy::base(), 0.0};
    r.error_code = "Timeout";
  }
  expect_code(ErrorCode::EmptyAfterFiltering, [&] { build_causal_dataset(runs, TreatmentAxis::Llm); });
}

TEST_CASE("assess writes side-by-side reports") {
  util::Rng rng(5);
  const int n = 600;
  Eigen::MatrixXd data(n, 4);
  for (int i = 0; i < n; ++i) {
    const double t = rng.uniform() < 0.5 ? 1.0 : 0.0;
    const double x = rng.normal();
    data(i, 0) = t;
    data(i, 1) = x;
    data(i, 2) = 1.5 * t + x + rng.normal();
    data(i, 3) = 0.5 * x + rng.normal();
  }
  const auto ds = notears::make_dataset({"LLM:m", "Cov", "Detection", "Toxicity"}, data, {"LLM:m"});
  AssessorSettings settings;
  settings.outcomes = {"Detection", "Toxicity"};
  settings.ate.forest.trees = 30;
  const auto report = assess(ds, settings);
  REQUIRE(report.ate.size() == 2);
  CHECK(report.ate[0].outcome == "Detection");
  CHECK(std::abs(report.ate[0].estimate->ate - 1.5) < 0.25);
  CHECK(std::abs(report.ate[1].estimate->ate) < 0.25);
  for (int i = 0; i < 4; ++i) CHECK(report.dag.weights(i, 0) == 0.0);

  TempDir dir;
  write_assessment(ds, report, dir.path);
  for (const char* f : {"sem_edges.csv", "sem_report.json", "ate_sweep.csv", "ate_sweep.json", "assessment.json"})
    CHECK(fs::exists(dir.path / f));
  const auto pairs = slurp(dir.path / "assessment.json");
  CHECK(pairs.find("\"sem_weight\"") != std::string::npos);
  CHECK(pairs.find("\"ate\"") != std::string::npos);

  settings.outcomes = {"Nope"};
  expect_code(ErrorCode::InvalidProblem, [&] { assess(ds, settings); });
}

TEST_CASE("dataset csv round trip") {
  util::Rng rng(6);
  Eigen::MatrixXd data(30, 3);
  for (int i = 0; i < 30; ++i) {
    data(i, 0) = i % 2;
    data(i, 1) = rng.normal();
    data(i, 2) = rng.normal();
  }
  const auto ds = notears::make_dataset({"LLM:a", "Toxicity", "Detection"}, data, {"LLM:a"});
  TempDir dir;
  spit(dir.path / "d.csv", dataset_csv(ds));
  const auto back = read_dataset_csv(dir.path / "d.csv");
  CHECK(back.columns == ds.columns);
  CHECK(back.treatments == ds.treatments);
  CHECK((back.data - ds.data).cwiseAbs().maxCoeff() < 1e-6);
}
