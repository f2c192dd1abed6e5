#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "bries/agents.hpp"
#include "bries/ate_dml.hpp"
#include "bries/evaluation.hpp"
#include "bries/llm_gateway.hpp"
#include "bries/mock_llm_server.hpp"
#include "bries/notears.hpp"
#include "bries/sec_signatures.hpp"

namespace bries::experiment {

namespace fs = std::filesystem;
using taxonomy::AttackType;

struct ArticleRecord {
  std::string id;
  std::string original;
  std::string attack;
  std::set<AttackType> attack_types;
};

/// Line-delimited JSON, one object per line with fields id, original,
/// attack, attack_types (array of names; any accepted surface form).
/// Blank lines are skipped. Errors carry 1-based line numbers:
/// FileNotFound, MalformedRecord(line), UnknownAttackType(line, name).
std::vector<ArticleRecord> load_dataset(const fs::path& path, const taxonomy::Taxonomy& tax);
std::vector<ArticleRecord> parse_dataset(std::string_view text, const taxonomy::Taxonomy& tax,
                                         const std::string& origin = "<memory>");

enum class TreatmentAxis { Llm, Attack };
std::optional<TreatmentAxis> parse_treatment_axis(std::string_view s) noexcept;

struct AssessorSettings {
  TreatmentAxis axis = TreatmentAxis::Llm;
  std::vector<std::string> outcomes{"Detection"};
  notears::Options sem;
  dml::SweepConfig ate;
  bool source_covariates = true;
  bool binary_detection = false;
};

struct ExperimentConfig {
  fs::path dataset;
  gateway::RouteTable routes;
  std::vector<std::string> models;
  std::vector<prompt::PromptStrategy> strategies;
  std::vector<double> temperatures;
  int parallelism = 4;
  std::uint64_t seed = 0;
  fs::path output_dir;
  int max_tokens = 1024;
  gateway::GatewayOptions gateway;
  AssessorSettings assessor;
  eval::EvalOptions evaluation;
  std::map<std::string, mock::MockProfile> mock_profiles;
  std::string raw_text;  // the config file as read, for the snapshot
};

/// Flat key/value config (see configs/mock_experiment.conf). Relative paths
/// resolve against `base_dir`. Throws Error(InvalidConfig).
ExperimentConfig parse_config(std::string_view text, const fs::path& base_dir);
ExperimentConfig load_config(const fs::path& path);

struct RunKey {
  std::string article_id;
  std::string model_id;
  prompt::PromptStrategy strategy;
  double temperature = 0.0;

  std::string str() const;
  friend bool operator==(const RunKey&, const RunKey&) = default;
};

/// One detector run: detection, its score against gold, the defender's
/// rewrite and SEC signatures of the attacked and rewritten text. Either
/// `error` is set or the payload fields are.
struct RunRecord {
  RunKey key;
  std::set<AttackType> gold;
  std::optional<agents::DetectionResult> detection;
  double detection_score = 0.0;
  std::optional<agents::DefenseResult> defense;
  std::optional<sec::SecSignature> sec_attack;
  std::optional<sec::SecSignature> sec_inoculated;
  std::string started_at;
  std::string finished_at;
  std::optional<std::string> error_code;
  std::optional<std::string> error_message;

  bool ok() const noexcept { return !error_code.has_value(); }
};

std::string to_json_line(const RunRecord& record);
RunRecord record_from_json(std::string_view line, const taxonomy::Taxonomy& tax);
/// Digest of the record with wall-clock fields removed.
std::string content_hash(const RunRecord& record);

/// Append-only JSONL store of run records, one write per record.
class RunStore {
 public:
  RunStore(fs::path path, const taxonomy::Taxonomy& tax);
  bool contains(const std::string& key) const { return keys_.count(key) > 0; }
  void append(const RunRecord& record);
  const std::vector<RunRecord>& records() const noexcept { return records_; }

 private:
  fs::path path_;
  std::vector<RunRecord> records_;
  std::set<std::string> keys_;
};

/// Exclusive experiment-directory lock (".lock", created with O_EXCL).
class DirectoryLock {
 public:
  explicit DirectoryLock(const fs::path& dir);
  ~DirectoryLock();
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  fs::path path_;
};

struct RunContext {
  const taxonomy::Taxonomy& tax;
  const gateway::Gateway& gateway;
  const sec::ScorerRegistry& registry;
};

struct ExperimentOutcome {
  fs::path directory;
  std::size_t runs_total = 0;
  std::size_t runs_new = 0;
  std::size_t runs_failed = 0;
  std::size_t endpoint_requests = 0;
  std::vector<eval::F1Table> tables;
  std::vector<std::string> notes;
};

/// Runs articles x models x strategies x temperatures: detect, score the
/// detection, defend, compute SEC signatures of the attacked and rewritten
/// text. Records are appended as each chunk of runs completes; runs whose
/// key is already persisted are skipped. Afterwards writes F1 tables,
/// comparison reports, the causal dataset and the assessor reports into
/// config.output_dir.
ExperimentOutcome run_experiment(const ExperimentConfig& config, const RunContext& ctx);

/// Regenerates F1 tables and comparison reports from persisted records.
std::vector<eval::F1Table> write_evaluation(const std::vector<RunRecord>& records,
                                            const eval::EvalOptions& options, const fs::path& dir,
                                            std::vector<std::string>* notes = nullptr);

struct CausalOptions {
  bool source_covariates = true;
  // Detection as 1/0 (any gold type found) instead of the per-run set F1.
  bool binary_detection = false;
};

inline constexpr std::string_view kDetectionColumn = "Detection";
inline constexpr std::string_view kSourcePrefix = "Source:";

/// One row per error-free run with complete, non-partial signatures.
/// Treatment columns are one-hot indicators ("LLM:<model>" or
/// "Attack:<type>"), followed by the SEC measures of the rewritten text,
/// "Detection", and (optionally) "Source:<measure>" for the attacked text.
/// Constant columns are dropped with a warning. Throws
/// Error(EmptyAfterFiltering).
notears::CausalDataset build_causal_dataset(std::span<const RunRecord> records, TreatmentAxis axis,
                                            const CausalOptions& options = {});

std::string dataset_csv(const notears::CausalDataset& dataset);
/// Reads a dataset CSV; treatment columns are those named in `treatments`,
/// or when empty, those prefixed "LLM:" or "Attack:".
notears::CausalDataset read_dataset_csv(const fs::path& path, std::vector<std::string> treatments = {});

struct AssessmentReport {
  notears::WeightedDag dag;
  std::vector<dml::SweepRow> ate;
};

/// NOTEARS with every edge into a treatment blocked, plus one ATE sweep per
/// configured outcome.
AssessmentReport assess(const notears::CausalDataset& dataset, const AssessorSettings& settings);

/// sem_edges.csv, sem_report.json, ate_sweep.csv, ate_sweep.json and
/// assessment.json (SEM weight and ATE side by side per treatment/outcome).
void write_assessment(const notears::CausalDataset& dataset, const AssessmentReport& report,
                      const fs::path& dir);

/// Writes `content` to `path` through a temporary file and rename.
void write_atomic(const fs::path& path, std::string_view content);

}  // namespace bries::experiment
