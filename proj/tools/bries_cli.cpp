#include <cstdio>
#include <iostream>
#include <memory>

#include <CLI11.hpp>
#include <json.hpp>

#include "bries/error.hpp"
#include "bries/experiment.hpp"
#include "bries/util/kv_file.hpp"
#include "bries/util/text.hpp"

namespace {

namespace fs = std::filesystem;
using namespace bries;

std::string read_input(const std::string& path) {
  if (path == "-") {
    std::string all, line;
    while (std::getline(std::cin, line)) all += line + "\n";
    return all;
  }
  return util::read_file(path);
}

prompt::PromptStrategy strategy_or_throw(const std::string& s) {
  auto st = prompt::parse_strategy(s);
  if (!st) throw Error(ErrorCode::InvalidConfig, "unknown strategy '" + s + "' (use 0, d0, s0 or d0s0)");
  return *st;
}

// Holds the in-process mock endpoint alive for the duration of a command.
struct Endpoint {
  std::unique_ptr<mock::MockLlmServer> server;
  std::unique_ptr<gateway::Gateway> gateway;
};

Endpoint make_endpoint(const experiment::ExperimentConfig& cfg, bool use_mock, bool verbose,
                       std::vector<mock::MockDocument> docs) {
  Endpoint ep;
  auto routes = cfg.routes;
  auto options = cfg.gateway;
  if (verbose)
    options.log_sink = [](std::string_view line) {
      std::fprintf(stderr, "%.*s\n", static_cast<int>(line.size()), line.data());
    };
  if (use_mock) {
    ep.server = std::make_unique<mock::MockLlmServer>(
        mock::dataset_responder(taxonomy::Taxonomy::builtin(), std::move(docs), cfg.mock_profiles));
    routes.redirect_all(ep.server->base_url());
  }
  ep.gateway = std::make_unique<gateway::Gateway>(std::move(routes), std::move(options));
  return ep;
}

std::vector<mock::MockDocument> mock_documents(const std::vector<experiment::ArticleRecord>& articles) {
  std::vector<mock::MockDocument> docs;
  for (const auto& a : articles)
    docs.push_back({a.attack, a.original, std::vector<taxonomy::AttackType>(a.attack_types.begin(), a.attack_types.end())});
  return docs;
}

nlohmann::ordered_json detection_json(const agents::DetectionResult& d) {
  nlohmann::ordered_json predicted = nlohmann::ordered_json::array();
  for (const auto& [t, c] : d.predicted)
    predicted.push_back({{"type", taxonomy::display_name_of(t)},
                         {"confidence", c ? nlohmann::json(*c) : nlohmann::json(nullptr)}});
  return {{"document_id", d.document_id},
          {"model_id", d.model_id},
          {"strategy", prompt::label(d.strategy)},
          {"temperature", d.temperature},
          {"predicted", predicted},
          {"unparsed_fragments", d.unparsed_fragments},
          {"raw_text", d.raw_text}};
}

nlohmann::ordered_json signature_json(const sec::SecSignature& s) {
  nlohmann::ordered_json scores = nlohmann::ordered_json::object();
  for (const auto& [m, v] : s.scores) scores[std::string(sec::name_of(m))] = v;
  nlohmann::ordered_json failures = nlohmann::ordered_json::object();
  for (const auto& [m, v] : s.failures) failures[std::string(sec::name_of(m))] = v;
  return {{"text_id", s.text_id}, {"scores", scores}, {"failures", failures}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Detect, defend against and assess rhetorical attacks in text"};
  app.require_subcommand(1);

  std::string config_path, input_path = "-", model, strategy = "0", out_dir, data_path, outcome = "Detection";
  std::string detection_path;
  double temperature = 0.0;
  bool use_mock = false;
  bool verbose = false;
  int parallelism = 0;
  long long seed = -1;
  std::vector<std::string> treatments;

  app.add_flag("-v,--verbose", verbose, "Log every endpoint request to stderr");

  auto* detect = app.add_subcommand("detect", "Run the detector agent on one document");
  detect->add_option("--config", config_path, "Experiment config providing routes")->required();
  detect->add_option("--input", input_path, "Document file, '-' for stdin");
  detect->add_option("--model", model, "Model id")->required();
  detect->add_option("--strategy", strategy, "0, d0, s0 or d0s0");
  detect->add_option("--temperature", temperature, "Sampling temperature")->capture_default_str();
  detect->add_flag("--mock", use_mock, "Serve the model from an in-process mock endpoint");

  auto* defend = app.add_subcommand("defend", "Rewrite a document given a detector response");
  defend->add_option("--config", config_path, "Experiment config providing routes")->required();
  defend->add_option("--input", input_path, "Attacked document file, '-' for stdin");
  defend->add_option("--detection", detection_path, "File holding the raw detector response")->required();
  defend->add_option("--model", model, "Model id")->required();
  defend->add_option("--temperature", temperature, "Sampling temperature")->capture_default_str();
  defend->add_flag("--mock", use_mock, "Serve the model from an in-process mock endpoint");

  auto* score = app.add_subcommand("score", "Compute the SEC signature of a text with the lexicon scorer");
  score->add_option("--input", input_path, "Text file, '-' for stdin");

  std::string runs_path;
  int min_confidence = 0;
  auto* evaluate = app.add_subcommand("evaluate", "Per-type F1 tables and comparisons from a runs file");
  evaluate->add_option("--runs", runs_path, "runs.jsonl")->required();
  evaluate->add_option("--out", out_dir, "Output directory")->required();
  evaluate->add_option("--min-confidence", min_confidence, "Ignore predictions below this confidence");

  double lambda1 = 0.1, omega = 0.3;
  auto* sem = app.add_subcommand("assess-sem", "Fit a NOTEARS structural equation model to a causal dataset");
  sem->add_option("--data", data_path, "CSV with a header row")->required();
  sem->add_option("--out", out_dir, "Output directory")->required();
  sem->add_option("--lambda1", lambda1, "L1 penalty")->capture_default_str();
  sem->add_option("--omega", omega, "Edge threshold on |W|")->capture_default_str();
  sem->add_option("--treatment", treatments, "Treatment columns (default: LLM:* and Attack:* columns)");

  int folds = 5;
  std::string learner = "forest";
  auto* ate = app.add_subcommand("assess-ate", "Double machine learning ATE sweep over treatments");
  ate->add_option("--data", data_path, "CSV with a header row")->required();
  ate->add_option("--out", out_dir, "Output directory")->required();
  ate->add_option("--outcome", outcome, "Outcome column")->capture_default_str();
  ate->add_option("--folds", folds, "Cross-fitting folds")->capture_default_str();
  ate->add_option("--learner", learner, "forest or ridge")->capture_default_str();
  ate->add_option("--seed", seed, "Fold and forest seed (default: library default)");
  ate->add_option("--treatment", treatments, "Treatment columns (default: LLM:* and Attack:* columns)");

  auto* run = app.add_subcommand("run", "Run a full experiment (resumable)");
  run->add_option("--config", config_path, "Experiment config")->required();
  run->add_option("--out", out_dir, "Override output_dir");
  run->add_option("--parallelism", parallelism, "Override parallelism");
  run->add_option("--seed", seed, "Override seed");
  run->add_flag("--mock", use_mock, "Route every model to an in-process mock endpoint");

  CLI11_PARSE(app, argc, argv);

  try {
    const auto& tax = taxonomy::Taxonomy::builtin();

    if (*detect) {
      const auto cfg = experiment::load_config(config_path);
      const std::string doc = read_input(input_path);
      auto ep = make_endpoint(cfg, use_mock, verbose, {{doc, doc, {}}});
      agents::AgentContext ctx{tax, *ep.gateway, cfg.max_tokens};
      const auto d = agents::detect(ctx, "cli", doc, model, strategy_or_throw(strategy), temperature);
      std::cout << detection_json(d).dump(2) << "\n";
    } else if (*defend) {
      const auto cfg = experiment::load_config(config_path);
      const std::string doc = read_input(input_path);
      agents::DetectionResult det;
      det.document_id = "cli";
      det.model_id = model;
      det.raw_text = util::read_file(detection_path);
      auto ep = make_endpoint(cfg, use_mock, verbose, {{doc, doc, {}}});
      agents::AgentContext ctx{tax, *ep.gateway, cfg.max_tokens};
      std::cout << agents::defend(ctx, doc, det, model, temperature).inoculated_text << "\n";
    } else if (*score) {
      const auto registry = sec::ScorerRegistry::lexicon_default();
      std::cout << signature_json(sec::score_text("cli", read_input(input_path), registry)).dump(2) << "\n";
    } else if (*evaluate) {
      experiment::RunStore store(runs_path, tax);
      eval::EvalOptions opt;
      if (min_confidence > 0) opt.min_confidence = min_confidence;
      fs::create_directories(out_dir);
      std::vector<std::string> notes;
      const auto tables = experiment::write_evaluation(store.records(), opt, out_dir, &notes);
      for (const auto& n : notes) std::cerr << n << "\n";
      for (const auto& t : tables)
        std::cout << t.key.model_id << " " << prompt::label(t.key.strategy) << " T=" << t.key.temperature
                  << "  macro_f1=" << t.macro_f1 << "  micro_f1=" << t.micro_f1 << "\n";
    } else if (*sem) {
      const auto dataset = experiment::read_dataset_csv(data_path, treatments);
      for (const auto& w : dataset.warnings) std::cerr << "warning: " << w << "\n";
      notears::Options opt;
      opt.lambda1 = lambda1;
      opt.omega = omega;
      const auto dag = notears::fit(dataset, opt);
      fs::create_directories(out_dir);
      experiment::write_atomic(fs::path(out_dir) / "sem_edges.csv", notears::edges_csv(dag));
      experiment::write_atomic(fs::path(out_dir) / "sem_report.json", notears::report_json(dataset, dag));
      std::cout << notears::edges_csv(dag);
    } else if (*ate) {
      const auto dataset = experiment::read_dataset_csv(data_path, treatments);
      dml::SweepConfig cfg;
      cfg.folds = folds;
      auto l = dml::parse_learner(learner);
      if (!l) throw Error(ErrorCode::InvalidConfig, "learner must be forest or ridge");
      cfg.learner = *l;
      if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
      const auto rows = dml::run_treatment_sweep(dataset, outcome, cfg);
      fs::create_directories(out_dir);
      experiment::write_atomic(fs::path(out_dir) / "ate_sweep.csv", dml::sweep_csv(rows));
      experiment::write_atomic(fs::path(out_dir) / "ate_sweep.json", dml::sweep_json(rows));
      std::cout << dml::sweep_csv(rows);
    } else if (*run) {
      auto cfg = experiment::load_config(config_path);
      if (!out_dir.empty()) cfg.output_dir = out_dir;
      if (parallelism > 0) cfg.parallelism = parallelism;
      if (seed >= 0) {
        cfg.seed = static_cast<std::uint64_t>(seed);
        cfg.assessor.ate.seed = cfg.seed;
      }
      const auto articles = experiment::load_dataset(cfg.dataset, tax);
      auto ep = make_endpoint(cfg, use_mock, verbose, mock_documents(articles));
      const auto registry = sec::ScorerRegistry::lexicon_default();
      const auto result = experiment::run_experiment(cfg, {tax, *ep.gateway, registry});
      std::cout << "runs: " << result.runs_total << " total, " << result.runs_new << " new, "
                << result.runs_failed << " failed\n"
                << "endpoint requests: " << result.endpoint_requests << "\n"
                << "output: " << result.directory.string() << "\n";
      for (const auto& n : result.notes) std::cout << "note: " << n << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
