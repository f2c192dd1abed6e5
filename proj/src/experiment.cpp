#include "bries/experiment.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <unordered_map>

#include <json.hpp>

#include "bries/error.hpp"
#include "bries/util/hash.hpp"
#include "bries/util/kv_file.hpp"
#include "bries/util/text.hpp"

namespace bries::experiment {

using nlohmann::json;
using nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// dataset

std::vector<ArticleRecord> parse_dataset(std::string_view text, const taxonomy::Taxonomy& tax,
                                         const std::string& origin) {
  std::vector<ArticleRecord> out;
  std::set<std::string> ids;
  const auto lines = util::split(text, '\n');
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string where = origin + ":" + std::to_string(i + 1);
    if (util::trim(lines[i]).empty()) continue;
    json doc = json::parse(lines[i], nullptr, false);
    if (doc.is_discarded() || !doc.is_object())
      throw Error(ErrorCode::MalformedRecord, where + ": not a JSON object");
    for (const char* field : {"id", "original", "attack"})
      if (!doc.contains(field) || !doc[field].is_string())
        throw Error(ErrorCode::MalformedRecord, where + ": missing string field '" + field + "'");
    if (!doc.contains("attack_types") || !doc["attack_types"].is_array())
      throw Error(ErrorCode::MalformedRecord, where + ": missing array field 'attack_types'");

    ArticleRecord rec;
    rec.id = doc["id"].get<std::string>();
    rec.original = doc["original"].get<std::string>();
    rec.attack = doc["attack"].get<std::string>();
    if (util::trim(rec.attack).empty()) throw Error(ErrorCode::MalformedRecord, where + ": empty 'attack'");
    if (!ids.insert(rec.id).second) throw Error(ErrorCode::MalformedRecord, where + ": duplicate id '" + rec.id + "'");
    for (const auto& name : doc["attack_types"]) {
      if (!name.is_string()) throw Error(ErrorCode::MalformedRecord, where + ": non-string attack type");
      auto t = tax.normalize(name.get<std::string>());
      if (!t) throw Error(ErrorCode::UnknownAttackType, where + ": '" + name.get<std::string>() + "'");
      rec.attack_types.insert(*t);
    }
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<ArticleRecord> load_dataset(const fs::path& path, const taxonomy::Taxonomy& tax) {
  if (!fs::exists(path)) throw Error(ErrorCode::FileNotFound, path.string());
  return parse_dataset(util::read_file(path), tax, path.string());
}

std::optional<TreatmentAxis> parse_treatment_axis(std::string_view s) noexcept {
  if (s == "llm") return TreatmentAxis::Llm;
  if (s == "attack") return TreatmentAxis::Attack;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// config

namespace {

std::vector<std::string> list_value(const std::string& v) {
  std::vector<std::string> out;
  for (auto& p : util::split(v, ',')) {
    auto t = util::trim(p);
    if (!t.empty()) out.push_back(std::move(t));
  }
  return out;
}

double number(const util::KvEntry& e) {
  try {
    std::size_t used = 0;
    double v = std::stod(e.value, &used);
    if (used != e.value.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::InvalidConfig, "line " + std::to_string(e.line) + ": '" + e.key +
                                              "' expects a number, got '" + e.value + "'");
  }
}

int integer(const util::KvEntry& e) {
  const double v = number(e);
  if (v != static_cast<double>(static_cast<long long>(v)))
    throw Error(ErrorCode::InvalidConfig, "line " + std::to_string(e.line) + ": '" + e.key + "' expects an integer");
  return static_cast<int>(v);
}

bool boolean(const util::KvEntry& e) {
  const auto v = util::to_lower(e.value);
  if (v == "true" || v == "yes" || v == "1" || v == "on") return true;
  if (v == "false" || v == "no" || v == "0" || v == "off") return false;
  throw Error(ErrorCode::InvalidConfig, "line " + std::to_string(e.line) + ": '" + e.key + "' expects a boolean");
}

[[noreturn]] void unknown_key(const util::KvEntry& e) {
  throw Error(ErrorCode::InvalidConfig, "line " + std::to_string(e.line) + ": unknown key '" + e.key +
                                            "'" + (e.section.empty() ? "" : " in [" + e.section + "]"));
}

}  // namespace

ExperimentConfig parse_config(std::string_view text, const fs::path& base_dir) {
  const auto file = util::KvFile::parse(text, "config");
  ExperimentConfig cfg;
  cfg.raw_text = std::string(text);
  cfg.gateway.retry.initial_backoff = std::chrono::milliseconds(500);
  std::vector<gateway::ModelRoute> routes;

  for (const auto& e : file.entries()) {
    if (e.section.empty()) {
      if (e.key == "dataset") cfg.dataset = base_dir / e.value;
      else if (e.key == "models") cfg.models = list_value(e.value);
      else if (e.key == "strategies") {
        for (const auto& s : list_value(e.value)) {
          auto st = prompt::parse_strategy(s);
          if (!st) throw Error(ErrorCode::InvalidConfig, "line " + std::to_string(e.line) + ": unknown strategy '" + s + "'");
          cfg.strategies.push_back(*st);
        }
      } else if (e.key == "temperatures") {
        for (const auto& s : list_value(e.value)) {
          util::KvEntry tmp = e;
          tmp.value = s;
          cfg.temperatures.push_back(number(tmp));
        }
      } else if (e.key == "parallelism") cfg.parallelism = integer(e);
      else if (e.key == "seed") cfg.seed = static_cast<std::uint64_t>(integer(e));
      else if (e.key == "output_dir") cfg.output_dir = base_dir / e.value;
      else if (e.key == "max_tokens") cfg.max_tokens = integer(e);
      else unknown_key(e);
    } else if (e.section.rfind("route:", 0) == 0) {
      const std::string id = util::trim(e.section.substr(6));
      auto it = std::find_if(routes.begin(), routes.end(), [&](const auto& r) { return r.model_id == id; });
      if (it == routes.end()) {
        routes.push_back(gateway::ModelRoute{id, "", "", 0.0, ""});
        it = routes.end() - 1;
      }
      if (e.key == "base_url") it->base_url = e.value;
      else if (e.key == "api_key_env") it->api_key_env = e.value;
      else if (e.key == "default_temperature") it->default_temperature = number(e);
      else if (e.key == "endpoint_model") it->endpoint_model = e.value;
      else unknown_key(e);
    } else if (e.section == "gateway") {
      if (e.key == "max_retries") cfg.gateway.retry.max_retries = integer(e);
      else if (e.key == "timeout_s") cfg.gateway.timeout = std::chrono::milliseconds(static_cast<long long>(number(e) * 1000));
      else if (e.key == "initial_backoff_ms") cfg.gateway.retry.initial_backoff = std::chrono::milliseconds(integer(e));
      else if (e.key == "backoff_multiplier") cfg.gateway.retry.multiplier = number(e);
      else if (e.key == "max_backoff_ms") cfg.gateway.retry.max_backoff = std::chrono::milliseconds(integer(e));
      else unknown_key(e);
    } else if (e.section == "assess") {
      auto& a = cfg.assessor;
      if (e.key == "axis") {
        auto ax = parse_treatment_axis(e.value);
        if (!ax) throw Error(ErrorCode::InvalidConfig, "assess.axis must be llm or attack");
        a.axis = *ax;
      } else if (e.key == "outcomes") a.outcomes = list_value(e.value);
      else if (e.key == "lambda1") a.sem.lambda1 = number(e);
      else if (e.key == "omega") a.sem.omega = number(e);
      else if (e.key == "h_tol") a.sem.h_tol = number(e);
      else if (e.key == "rho_max") a.sem.rho_max = number(e);
      else if (e.key == "inner_max_iter") a.sem.inner_max_iter = integer(e);
      else if (e.key == "folds") a.ate.folds = integer(e);
      else if (e.key == "learner") {
        auto l = dml::parse_learner(e.value);
        if (!l) throw Error(ErrorCode::InvalidConfig, "assess.learner must be forest or ridge");
        a.ate.learner = *l;
      } else if (e.key == "trees") a.ate.forest.trees = integer(e);
      else if (e.key == "max_depth") a.ate.forest.max_depth = integer(e);
      else if (e.key == "min_leaf") a.ate.forest.min_leaf = integer(e);
      else if (e.key == "ridge_penalty") a.ate.ridge_penalty = number(e);
      else if (e.key == "source_covariates") a.source_covariates = boolean(e);
      else if (e.key == "binary_detection") a.binary_detection = boolean(e);
      else unknown_key(e);
    } else if (e.section == "evaluate") {
      if (e.key == "min_confidence") cfg.evaluation.min_confidence = integer(e);
      else unknown_key(e);
    } else if (e.section == "mock") {
      const auto v = util::to_lower(e.value);
      if (v == "perfect") cfg.mock_profiles[e.key] = mock::MockProfile::Perfect;
      else if (v == "noisy") cfg.mock_profiles[e.key] = mock::MockProfile::Noisy;
      else if (v == "echo") cfg.mock_profiles[e.key] = mock::MockProfile::Echo;
      else throw Error(ErrorCode::InvalidConfig, "line " + std::to_string(e.line) + ": mock profile must be perfect, noisy or echo");
    } else {
      throw Error(ErrorCode::InvalidConfig, "line " + std::to_string(e.line) + ": unknown section [" + e.section + "]");
    }
  }

  for (auto& r : routes) cfg.routes.add(std::move(r));
  cfg.assessor.ate.seed = cfg.seed;

  if (cfg.dataset.empty()) throw Error(ErrorCode::InvalidConfig, "'dataset' is required");
  if (cfg.output_dir.empty()) throw Error(ErrorCode::InvalidConfig, "'output_dir' is required");
  if (cfg.models.empty() || cfg.strategies.empty() || cfg.temperatures.empty())
    throw Error(ErrorCode::InvalidConfig, "need at least one model, strategy and temperature");
  for (const auto& m : cfg.models)
    if (!cfg.routes.find(m)) throw Error(ErrorCode::InvalidConfig, "model '" + m + "' has no [route:" + m + "] section");
  for (double t : cfg.temperatures)
    if (!(t >= 0.0 && t <= 2.0)) throw Error(ErrorCode::InvalidConfig, "temperature out of [0, 2]");
  if (cfg.parallelism < 1) throw Error(ErrorCode::InvalidConfig, "parallelism must be >= 1");
  if (cfg.max_tokens < 1) throw Error(ErrorCode::InvalidConfig, "max_tokens must be >= 1");
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::FileNotFound, path.string());
  return parse_config(util::read_file(path), path.parent_path());
}

// ---------------------------------------------------------------------------
// run records

std::string RunKey::str() const {
  return article_id + "|" + model_id + "|" + std::string(prompt::label(strategy)) + "|" +
         util::format_double(temperature);
}

namespace {

ordered_json signature_json(const sec::SecSignature& s) {
  ordered_json scores = ordered_json::object(), prov = ordered_json::object(), fail = ordered_json::object();
  for (const auto& [m, v] : s.scores) scores[std::string(sec::name_of(m))] = v;
  for (const auto& [m, v] : s.scorer_provenance) prov[std::string(sec::name_of(m))] = v;
  for (const auto& [m, v] : s.failures) fail[std::string(sec::name_of(m))] = v;
  return {{"text_id", s.text_id}, {"scores", scores}, {"provenance", prov}, {"failures", fail}, {"audit", s.audit}};
}

sec::SecSignature signature_from(const json& j) {
  sec::SecSignature s;
  s.text_id = j.value("text_id", "");
  auto measure = [](const std::string& name) {
    auto m = sec::measure_from_name(name);
    if (!m) throw Error(ErrorCode::MalformedRecord, "unknown SEC measure '" + name + "'");
    return *m;
  };
  for (const auto& [k, v] : j.at("scores").items()) s.scores[measure(k)] = v.get<double>();
  for (const auto& [k, v] : j.at("provenance").items()) s.scorer_provenance[measure(k)] = v.get<std::string>();
  for (const auto& [k, v] : j.at("failures").items()) s.failures[measure(k)] = v.get<std::string>();
  if (j.contains("audit")) s.audit = j["audit"].get<std::vector<std::string>>();
  return s;
}

ordered_json record_json(const RunRecord& r, bool with_clock) {
  ordered_json gold = ordered_json::array();
  for (auto t : r.gold) gold.push_back(taxonomy::display_name_of(t));
  ordered_json out = {
      {"key",
       {{"article_id", r.key.article_id},
        {"model_id", r.key.model_id},
        {"strategy", prompt::label(r.key.strategy)},
        {"temperature", r.key.temperature}}},
      {"gold", gold},
  };
  if (r.detection) {
    ordered_json predicted = ordered_json::array();
    for (const auto& [t, c] : r.detection->predicted)
      predicted.push_back({{"type", taxonomy::display_name_of(t)}, {"confidence", c ? json(*c) : json(nullptr)}});
    out["detection"] = {{"predicted", predicted},
                        {"unparsed_fragments", r.detection->unparsed_fragments},
                        {"raw_text", r.detection->raw_text}};
    out["detection_score"] = r.detection_score;
  }
  if (r.defense) out["defense"] = {{"inoculated_text", r.defense->inoculated_text}};
  if (r.sec_attack) out["sec_attack"] = signature_json(*r.sec_attack);
  if (r.sec_inoculated) out["sec_inoculated"] = signature_json(*r.sec_inoculated);
  if (r.error_code) out["error"] = {{"code", *r.error_code}, {"message", r.error_message.value_or("")}};
  if (with_clock) {
    out["started_at"] = r.started_at;
    out["finished_at"] = r.finished_at;
  }
  return out;
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

std::string to_json_line(const RunRecord& record) { return record_json(record, true).dump(); }

std::string content_hash(const RunRecord& record) { return util::digest(record_json(record, false).dump()); }

RunRecord record_from_json(std::string_view line, const taxonomy::Taxonomy& tax) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object() || !j.contains("key"))
    throw Error(ErrorCode::MalformedRecord, "run record is not a JSON object with a key");
  try {
    RunRecord r;
    const auto& k = j.at("key");
    r.key.article_id = k.at("article_id").get<std::string>();
    r.key.model_id = k.at("model_id").get<std::string>();
    auto st = prompt::parse_strategy(k.at("strategy").get<std::string>());
    if (!st) throw Error(ErrorCode::MalformedRecord, "unknown strategy in run record");
    r.key.strategy = *st;
    r.key.temperature = k.at("temperature").get<double>();
    for (const auto& g : j.at("gold")) {
      auto t = tax.normalize(g.get<std::string>());
      if (!t) throw Error(ErrorCode::UnknownAttackType, g.get<std::string>());
      r.gold.insert(*t);
    }
    if (j.contains("detection")) {
      const auto& d = j["detection"];
      agents::DetectionResult det;
      det.document_id = r.key.article_id;
      det.model_id = r.key.model_id;
      det.strategy = r.key.strategy;
      det.temperature = r.key.temperature;
      for (const auto& p : d.at("predicted")) {
        auto t = tax.normalize(p.at("type").get<std::string>());
        if (!t) throw Error(ErrorCode::UnknownAttackType, p.at("type").get<std::string>());
        std::optional<int> c;
        if (!p.at("confidence").is_null()) c = p["confidence"].get<int>();
        det.predicted[*t] = c;
      }
      det.unparsed_fragments = d.at("unparsed_fragments").get<std::vector<std::string>>();
      det.raw_text = d.at("raw_text").get<std::string>();
      r.detection = std::move(det);
      r.detection_score = j.at("detection_score").get<double>();
    }
    if (j.contains("defense")) {
      r.defense = agents::DefenseResult{r.key.article_id, r.key.model_id,
                                        j["defense"].at("inoculated_text").get<std::string>(),
                                        r.detection ? r.detection->raw_text : ""};
    }
    if (j.contains("sec_attack")) r.sec_attack = signature_from(j["sec_attack"]);
    if (j.contains("sec_inoculated")) r.sec_inoculated = signature_from(j["sec_inoculated"]);
    if (j.contains("error")) {
      r.error_code = j["error"].at("code").get<std::string>();
      r.error_message = j["error"].value("message", "");
    }
    r.started_at = j.value("started_at", "");
    r.finished_at = j.value("finished_at", "");
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedRecord, std::string("run record: ") + e.what());
  }
}

RunStore::RunStore(fs::path path, const taxonomy::Taxonomy& tax) : path_(std::move(path)) {
  if (!fs::exists(path_)) return;
  const auto lines = util::split(util::read_file(path_), '\n');
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (util::trim(lines[i]).empty()) continue;
    RunRecord r;
    try {
      r = record_from_json(lines[i], tax);
    } catch (const Error& e) {
      // A torn final line from an interrupted run is dropped and redone.
      if (i + 1 >= lines.size() - 1) break;
      throw Error(ErrorCode::MalformedRecord, path_.string() + ":" + std::to_string(i + 1) + ": " + e.what());
    }
    if (!keys_.insert(r.key.str()).second) continue;
    records_.push_back(std::move(r));
  }
}

void RunStore::append(const RunRecord& record) {
  const auto key = record.key.str();
  if (keys_.count(key)) throw Error(ErrorCode::InvalidData, "run key persisted twice: " + key);
  const std::string line = to_json_line(record) + "\n";
  const int fd = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  if (fd < 0) throw Error(ErrorCode::FileNotFound, "cannot open " + path_.string());
  const auto written = ::write(fd, line.data(), line.size());
  ::fsync(fd);
  ::close(fd);
  if (written != static_cast<ssize_t>(line.size()))
    throw Error(ErrorCode::InvalidData, "short write to " + path_.string());
  keys_.insert(key);
  records_.push_back(record);
}

DirectoryLock::DirectoryLock(const fs::path& dir) : path_(dir / ".lock") {
  fs::create_directories(dir);
  const int fd = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_EXCL, 0644);
  if (fd < 0)
    throw Error(ErrorCode::LockHeld, path_.string() + " exists; another run owns this directory");
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

DirectoryLock::~DirectoryLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

void write_atomic(const fs::path& path, std::string_view content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::FileNotFound, "cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
  }
  fs::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// evaluation output

std::vector<eval::F1Table> write_evaluation(const std::vector<RunRecord>& records,
                                            const eval::EvalOptions& options, const fs::path& dir,
                                            std::vector<std::string>* notes) {
  std::vector<agents::DetectionResult> detections;
  std::vector<eval::GoldLabel> gold;
  std::set<std::string> seen;
  for (const auto& r : records) {
    if (!r.ok() || !r.detection) continue;
    detections.push_back(*r.detection);
    if (seen.insert(r.key.article_id).second) gold.push_back({r.key.article_id, r.gold});
  }
  auto tables = eval::group_f1(detections, gold, options);
  write_atomic(dir / "f1_tables.csv", eval::to_csv(tables));
  write_atomic(dir / "f1_tables.json", eval::to_json(tables));
  for (auto axis : {eval::Axis::Strategy, eval::Axis::Confidence, eval::Axis::Temperature}) {
    const fs::path out = dir / ("compare_" + std::string(eval::to_string(axis)) + ".json");
    try {
      write_atomic(out, eval::to_json(eval::compare_groups(tables, axis)));
    } catch (const Error& e) {
      std::error_code ec;
      fs::remove(out, ec);
      if (notes) notes->push_back("no " + std::string(eval::to_string(axis)) + " comparison: " + e.what());
    }
  }
  return tables;
}

// ---------------------------------------------------------------------------
// experiment

ExperimentOutcome run_experiment(const ExperimentConfig& config, const RunContext& ctx) {
  const auto articles = load_dataset(config.dataset, ctx.tax);
  fs::create_directories(config.output_dir);
  DirectoryLock lock(config.output_dir);
  write_atomic(config.output_dir / "config.snapshot", config.raw_text);

  ExperimentOutcome outcome;
  outcome.directory = config.output_dir;
  RunStore store(config.output_dir / "runs.jsonl", ctx.tax);
  agents::AgentContext agent{ctx.tax, ctx.gateway, config.max_tokens};

  struct Pending {
    RunKey key;
    const ArticleRecord* article;
  };
  std::vector<Pending> pending;
  for (const auto& a : articles)
    for (const auto& m : config.models)
      for (const auto& s : config.strategies)
        for (double t : config.temperatures) {
          RunKey key{a.id, m, s, t};
          if (!store.contains(key.str())) pending.push_back({std::move(key), &a});
        }

  std::unordered_map<std::string, sec::SecSignature> source_sigs;
  auto source_signature = [&](const ArticleRecord& a) -> const sec::SecSignature& {
    auto it = source_sigs.find(a.id);
    if (it == source_sigs.end())
      it = source_sigs.emplace(a.id, sec::score_text(a.id + "/attack", a.attack, ctx.registry)).first;
    return it->second;
  };

  const std::size_t chunk = static_cast<std::size_t>(std::max(8, config.parallelism * 4));
  for (std::size_t begin = 0; begin < pending.size(); begin += chunk) {
    const std::size_t end = std::min(pending.size(), begin + chunk);
    const std::string started = utc_now();

    std::vector<gateway::CompletionRequest> detect_reqs;
    for (std::size_t i = begin; i < end; ++i) {
      const auto& p = pending[i];
      detect_reqs.push_back(agents::detector_request(agent, p.article->id, p.article->attack, p.key.model_id,
                                                     p.key.strategy, p.key.temperature));
    }
    const auto detect_res = ctx.gateway.complete_batch(detect_reqs, config.parallelism);
    outcome.endpoint_requests += detect_reqs.size();

    std::vector<RunRecord> records(end - begin);
    std::vector<gateway::CompletionRequest> defend_reqs;
    std::vector<std::size_t> defend_slots;
    for (std::size_t j = 0; j < records.size(); ++j) {
      const auto& p = pending[begin + j];
      auto& r = records[j];
      r.key = p.key;
      r.gold = p.article->attack_types;
      r.started_at = started;
      if (!detect_res[j].ok()) {
        r.error_code = std::string(to_string(detect_res[j].error->code()));
        r.error_message = detect_res[j].error->what();
        continue;
      }
      r.detection = agents::detection_from_completion(agent, p.article->id, p.key.model_id, p.key.strategy,
                                                      p.key.temperature, detect_res[j].result->raw_text);
      r.detection_score = eval::detection_score(*r.detection, {p.article->id, p.article->attack_types});
      defend_reqs.push_back(agents::defender_request(agent, p.article->attack, *r.detection, p.key.model_id,
                                                     p.key.temperature));
      defend_slots.push_back(j);
    }

    const auto defend_res = ctx.gateway.complete_batch(defend_reqs, config.parallelism);
    outcome.endpoint_requests += defend_reqs.size();
    for (std::size_t k = 0; k < defend_slots.size(); ++k) {
      auto& r = records[defend_slots[k]];
      const auto& p = pending[begin + defend_slots[k]];
      try {
        if (!defend_res[k].ok()) throw *defend_res[k].error;
        r.defense = agents::defense_from_completion(*r.detection, p.key.model_id, defend_res[k].result->raw_text);
        r.sec_attack = source_signature(*p.article);
        r.sec_inoculated = sec::score_text(p.key.str() + "/inoculated", r.defense->inoculated_text, ctx.registry);
      } catch (const Error& e) {
        r.error_code = std::string(to_string(e.code()));
        r.error_message = e.what();
        r.detection.reset();
        r.defense.reset();
        r.sec_attack.reset();
        r.sec_inoculated.reset();
        r.detection_score = 0.0;
      }
    }

    const std::string finished = utc_now();
    for (auto& r : records) {
      r.finished_at = finished;
      store.append(r);
      ++outcome.runs_new;
      if (!r.ok()) ++outcome.runs_failed;
    }
  }

  const auto& all = store.records();
  outcome.runs_total = all.size();
  outcome.tables = write_evaluation(all, config.evaluation, config.output_dir, &outcome.notes);

  ordered_json assessment_status;
  try {
    CausalOptions copt{config.assessor.source_covariates, config.assessor.binary_detection};
    const auto dataset = build_causal_dataset(all, config.assessor.axis, copt);
    write_atomic(config.output_dir / "causal_dataset.csv", dataset_csv(dataset));
    for (const auto& w : dataset.warnings) outcome.notes.push_back(w);
    const auto report = assess(dataset, config.assessor);
    write_assessment(dataset, report, config.output_dir);
    assessment_status = "ok";
  } catch (const Error& e) {
    outcome.notes.push_back(std::string("assessment skipped: ") + e.what());
    assessment_status = e.what();
  }

  std::string hashes;
  for (const auto& r : all) hashes += content_hash(r);
  ordered_json groups = ordered_json::array();
  for (const auto& t : outcome.tables)
    groups.push_back({{"model", t.key.model_id},
                      {"strategy", prompt::label(t.key.strategy)},
                      {"temperature", t.key.temperature},
                      {"macro_f1", t.macro_f1},
                      {"micro_f1", t.micro_f1}});
  ordered_json files = ordered_json::object();
  for (const char* name : {"f1_tables.csv", "causal_dataset.csv", "sem_edges.csv", "ate_sweep.csv"}) {
    const auto path = config.output_dir / name;
    if (fs::exists(path)) files[name] = util::digest(util::read_file(path));
  }
  ordered_json summary = {
      {"runs_total", outcome.runs_total},
      {"runs_new", outcome.runs_new},
      {"runs_failed", outcome.runs_failed},
      {"endpoint_requests", outcome.endpoint_requests},
      {"taxonomy_hash", ctx.tax.content_hash()},
      {"runs_content_hash", util::digest(hashes)},
      {"groups", groups},
      {"files", files},
      {"assessment", assessment_status},
      {"notes", outcome.notes},
  };
  write_atomic(config.output_dir / "summary.json", summary.dump(2) + "\n");
  return outcome;
}

// ---------------------------------------------------------------------------
// causal dataset

namespace {

bool any_gold_found(const RunRecord& r) {
  for (const auto& [t, c] : r.detection->predicted)
    if (r.gold.count(t)) return true;
  return false;
}

}  // namespace

notears::CausalDataset build_causal_dataset(std::span<const RunRecord> records, TreatmentAxis axis,
                                            const CausalOptions& options) {
  std::vector<const RunRecord*> rows;
  for (const auto& r : records)
    if (r.ok() && r.detection && r.defense && r.sec_inoculated && !r.sec_inoculated->partial() &&
        (!options.source_covariates || (r.sec_attack && !r.sec_attack->partial())))
      rows.push_back(&r);
  if (rows.empty()) throw Error(ErrorCode::EmptyAfterFiltering, "no error-free runs with complete signatures");

  std::vector<std::string> treatment_names;
  std::vector<std::string> columns;
  std::vector<std::string> models;
  std::vector<AttackType> types;
  if (axis == TreatmentAxis::Llm) {
    std::set<std::string> seen;
    for (const auto* r : rows) seen.insert(r->key.model_id);
    models.assign(seen.begin(), seen.end());
    for (const auto& m : models) treatment_names.push_back("LLM:" + m);
  } else {
    std::set<AttackType> seen;
    for (const auto* r : rows) seen.insert(r->gold.begin(), r->gold.end());
    types.assign(seen.begin(), seen.end());
    for (auto t : types) treatment_names.push_back("Attack:" + std::string(taxonomy::display_name_of(t)));
  }
  columns = treatment_names;
  for (const auto& mi : sec::canonical_measures()) columns.emplace_back(mi.name);
  columns.emplace_back(kDetectionColumn);
  if (options.source_covariates)
    for (const auto& mi : sec::canonical_measures()) columns.push_back(std::string(kSourcePrefix) + std::string(mi.name));

  const auto n = static_cast<Eigen::Index>(rows.size());
  notears::MatrixXd data = notears::MatrixXd::Zero(n, static_cast<Eigen::Index>(columns.size()));
  for (Eigen::Index i = 0; i < n; ++i) {
    const RunRecord& r = *rows[static_cast<std::size_t>(i)];
    Eigen::Index c = 0;
    for (const auto& m : models) data(i, c++) = m == r.key.model_id ? 1.0 : 0.0;
    for (auto t : types) data(i, c++) = r.gold.count(t) ? 1.0 : 0.0;
    for (const auto& mi : sec::canonical_measures()) data(i, c++) = r.sec_inoculated->scores.at(mi.measure);
    data(i, c++) = options.binary_detection ? (any_gold_found(r) ? 1.0 : 0.0) : r.detection_score;
    if (options.source_covariates)
      for (const auto& mi : sec::canonical_measures()) data(i, c++) = r.sec_attack->scores.at(mi.measure);
  }

  std::vector<std::string> warnings;
  std::vector<int> keep;
  for (Eigen::Index j = 0; j < data.cols(); ++j) {
    if (data.col(j).minCoeff() == data.col(j).maxCoeff()) {
      warnings.push_back("dropped constant column '" + columns[static_cast<std::size_t>(j)] + "'");
    } else {
      keep.push_back(static_cast<int>(j));
    }
  }
  std::vector<std::string> kept_columns, kept_treatments;
  for (int j : keep) {
    kept_columns.push_back(columns[static_cast<std::size_t>(j)]);
    if (std::find(treatment_names.begin(), treatment_names.end(), kept_columns.back()) != treatment_names.end())
      kept_treatments.push_back(kept_columns.back());
  }
  auto ds = notears::make_dataset(std::move(kept_columns), data(Eigen::all, keep), std::move(kept_treatments));
  ds.warnings.insert(ds.warnings.begin(), warnings.begin(), warnings.end());
  return ds;
}

std::string dataset_csv(const notears::CausalDataset& dataset) {
  std::string out = util::join(dataset.columns, ",") + "\n";
  for (Eigen::Index i = 0; i < dataset.rows(); ++i) {
    for (Eigen::Index j = 0; j < dataset.cols(); ++j) {
      if (j) out += ',';
      out += util::format_double(dataset.data(i, j));
    }
    out += '\n';
  }
  return out;
}

notears::CausalDataset read_dataset_csv(const fs::path& path, std::vector<std::string> treatments) {
  if (!fs::exists(path)) throw Error(ErrorCode::FileNotFound, path.string());
  std::vector<std::string> lines;
  for (auto& l : util::split(util::read_file(path), '\n'))
    if (!util::trim(l).empty()) lines.push_back(util::trim(l));
  if (lines.empty()) throw Error(ErrorCode::MalformedRecord, path.string() + ": empty file");
  auto columns = util::split(lines[0], ',');
  for (auto& c : columns) c = util::trim(c);
  notears::MatrixXd data(static_cast<Eigen::Index>(lines.size() - 1), static_cast<Eigen::Index>(columns.size()));
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto cells = util::split(lines[i], ',');
    if (cells.size() != columns.size())
      throw Error(ErrorCode::MalformedRecord, path.string() + ":" + std::to_string(i + 1) + ": wrong number of cells");
    for (std::size_t j = 0; j < cells.size(); ++j) {
      try {
        data(static_cast<Eigen::Index>(i - 1), static_cast<Eigen::Index>(j)) = std::stod(cells[j]);
      } catch (const std::exception&) {
        throw Error(ErrorCode::MalformedRecord, path.string() + ":" + std::to_string(i + 1) + ": non-numeric cell");
      }
    }
  }
  if (treatments.empty())
    for (const auto& c : columns)
      if (c.rfind("LLM:", 0) == 0 || c.rfind("Attack:", 0) == 0) treatments.push_back(c);
  return notears::make_dataset(std::move(columns), std::move(data), std::move(treatments));
}

// ---------------------------------------------------------------------------
// assessor

AssessmentReport assess(const notears::CausalDataset& dataset, const AssessorSettings& settings) {
  AssessmentReport report;
  report.dag = notears::fit(dataset, settings.sem);
  for (const auto& outcome : settings.outcomes) {
    if (dataset.index_of(outcome) < 0)
      throw Error(ErrorCode::InvalidProblem, "outcome '" + outcome + "' is not a column of the causal dataset");
    auto rows = dml::run_treatment_sweep(dataset, outcome, settings.ate);
    for (auto& r : rows) report.ate.push_back(std::move(r));
  }
  return report;
}

void write_assessment(const notears::CausalDataset& dataset, const AssessmentReport& report, const fs::path& dir) {
  fs::create_directories(dir);
  write_atomic(dir / "sem_edges.csv", notears::edges_csv(report.dag));
  write_atomic(dir / "sem_report.json", notears::report_json(dataset, report.dag));
  write_atomic(dir / "ate_sweep.csv", dml::sweep_csv(report.ate));
  write_atomic(dir / "ate_sweep.json", dml::sweep_json(report.ate));

  ordered_json rows = ordered_json::array();
  for (const auto& r : report.ate) {
    const int i = dataset.index_of(r.treatment);
    const int j = dataset.index_of(r.outcome);
    ordered_json row = {{"treatment", r.treatment},
                        {"outcome", r.outcome},
                        {"sem_weight", report.dag.weights(i, j)},
                        {"sem_edge", std::abs(report.dag.weights(i, j)) > report.dag.omega_used}};
    if (r.estimate) {
      row["ate"] = r.estimate->ate;
      row["ate_ci"] = {r.estimate->ci_low, r.estimate->ci_high};
      row["ate_significant"] = r.estimate->ci_low > 0.0 || r.estimate->ci_high < 0.0;
    } else {
      row["ate_error"] = r.error ? r.error->what() : "";
    }
    rows.push_back(std::move(row));
  }
  write_atomic(dir / "assessment.json", ordered_json{{"pairs", rows}}.dump(2) + "\n");
}

}  // namespace bries::experiment
