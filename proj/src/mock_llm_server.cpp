#include "bries/mock_llm_server.hpp"

#include <algorithm>
#include <stdexcept>

#include <httplib.h>
#include <json.hpp>

#include "bries/prompt_engine.hpp"
#include "bries/util/hash.hpp"
#include "bries/util/random.hpp"
#include "bries/util/text.hpp"

namespace bries::mock {

using nlohmann::json;

MockLlmServer::MockLlmServer(Responder responder, int worker_threads)
    : server_(std::make_unique<httplib::Server>()), responder_(std::move(responder)) {
  server_->new_task_queue = [worker_threads] {
    return new httplib::ThreadPool(static_cast<std::size_t>(worker_threads));
  };
  server_->Post(R"(.*/v1/chat/completions)", [this](const httplib::Request& http_req,
                                                    httplib::Response& http_res) {
    const int now = in_flight_.fetch_add(1) + 1;
    int seen = max_in_flight_.load();
    while (now > seen && !max_in_flight_.compare_exchange_weak(seen, now)) {
    }
    Arrival arrival;
    arrival.started = std::chrono::steady_clock::now();
    arrival.sequence = count_.fetch_add(1);

    MockRequest req;
    req.authorization = http_req.get_header_value("Authorization");
    json body = json::parse(http_req.body, nullptr, false);
    MockReply reply;
    if (body.is_discarded() || !body.contains("messages") || !body["messages"].is_array() ||
        body["messages"].empty()) {
      reply.status = 400;
      reply.content = "bad request";
    } else {
      req.model = body.value("model", "");
      req.temperature = body.value("temperature", 0.0);
      req.max_tokens = body.value("max_tokens", 0);
      req.prompt = body["messages"].back().value("content", "");
      reply = next_reply(req);
    }
    if (reply.delay.count() > 0) std::this_thread::sleep_for(reply.delay);

    if (reply.status != 200) {
      http_res.status = reply.status;
      http_res.set_content(json{{"error", {{"message", reply.content}}}}.dump(), "application/json");
    } else if (reply.malformed) {
      http_res.set_content(json{{"id", "mock"}, {"choices", json::array()}}.dump(), "application/json");
    } else {
      json out = {
          {"id", "mock-" + std::to_string(arrival.sequence)},
          {"object", "chat.completion"},
          {"model", req.model},
          {"choices", json::array({{{"index", 0},
                                    {"message", {{"role", "assistant"}, {"content", reply.content}}},
                                    {"finish_reason", "stop"}}})},
      };
      http_res.set_content(out.dump(), "application/json");
    }

    arrival.model = req.model;
    arrival.prompt = req.prompt;
    arrival.finished = std::chrono::steady_clock::now();
    {
      std::lock_guard lock(mu_);
      arrivals_.push_back(std::move(arrival));
      requests_.push_back(std::move(req));
    }
    in_flight_.fetch_sub(1);
  });

  port_ = server_->bind_to_any_port("127.0.0.1");
  if (port_ <= 0) throw std::runtime_error("mock server: cannot bind");
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

MockLlmServer::~MockLlmServer() {
  server_->stop();
  if (thread_.joinable()) thread_.join();
}

std::string MockLlmServer::base_url() const { return "http://127.0.0.1:" + std::to_string(port_); }

void MockLlmServer::script(const std::string& model, std::vector<MockReply> replies) {
  std::lock_guard lock(mu_);
  auto& q = scripts_[model];
  for (auto& r : replies) q.push_back(std::move(r));
}

void MockLlmServer::set_responder(Responder responder) {
  std::lock_guard lock(mu_);
  responder_ = std::move(responder);
}

std::vector<Arrival> MockLlmServer::arrivals() const {
  std::lock_guard lock(mu_);
  auto out = arrivals_;
  std::sort(out.begin(), out.end(),
            [](const Arrival& a, const Arrival& b) { return a.sequence < b.sequence; });
  return out;
}

std::vector<MockRequest> MockLlmServer::requests() const {
  std::lock_guard lock(mu_);
  return requests_;
}

void MockLlmServer::reset_stats() {
  std::lock_guard lock(mu_);
  arrivals_.clear();
  requests_.clear();
  count_ = 0;
  max_in_flight_ = 0;
}

MockReply MockLlmServer::next_reply(const MockRequest& req) {
  Responder responder;
  {
    std::lock_guard lock(mu_);
    for (const std::string& key : {req.model, std::string("*")}) {
      auto it = scripts_.find(key);
      if (it != scripts_.end() && !it->second.empty()) {
        MockReply r = std::move(it->second.front());
        it->second.pop_front();
        return r;
      }
    }
    responder = responder_;
  }
  if (responder) return responder(req);
  return MockReply{200, "", {}, false};
}

namespace {

double unit_hash(std::string_view a, std::string_view b, std::string_view c, std::string_view d) {
  std::uint64_t h = util::fnv1a64(a);
  h = util::fnv1a64("\x1f", h);
  h = util::fnv1a64(b, h);
  h = util::fnv1a64("\x1f", h);
  h = util::fnv1a64(c, h);
  h = util::fnv1a64("\x1f", h);
  h = util::fnv1a64(d, h);
  return static_cast<double>(util::splitmix64(h) >> 11) * 0x1.0p-53;
}

const MockDocument* find_document(const std::vector<MockDocument>& docs, std::string_view prompt,
                                  std::string_view marker) {
  const auto pos = prompt.rfind(marker);
  if (pos == std::string_view::npos) return nullptr;
  const std::string_view tail = prompt.substr(pos + marker.size());
  const MockDocument* best = nullptr;
  for (const auto& d : docs) {
    if (tail.substr(0, d.attack_text.size()) == d.attack_text &&
        (!best || d.attack_text.size() > best->attack_text.size()))
      best = &d;
  }
  return best;
}

std::string drop_sentences(const std::string& text, std::string_view key) {
  std::vector<std::string> sentences;
  std::string cur;
  for (char c : text) {
    cur.push_back(c);
    if (c == '.' || c == '!' || c == '?') {
      sentences.push_back(util::trim(cur));
      cur.clear();
    }
  }
  if (!util::trim(cur).empty()) sentences.push_back(util::trim(cur));
  std::vector<std::string> kept;
  for (std::size_t i = 0; i < sentences.size(); ++i)
    if (i == 0 || unit_hash(key, sentences[i], "defend", std::to_string(i)) >= 0.3)
      kept.push_back(sentences[i]);
  return util::join(kept, " ");
}

}  // namespace

MockLlmServer::Responder dataset_responder(const taxonomy::Taxonomy& tax,
                                           std::vector<MockDocument> documents,
                                           std::map<std::string, MockProfile> profiles,
                                           MockProfile fallback) {
  auto docs = std::make_shared<const std::vector<MockDocument>>(std::move(documents));
  return [&tax, docs, profiles = std::move(profiles), fallback](const MockRequest& req) {
    const auto pit = profiles.find(req.model);
    const MockProfile profile = pit == profiles.end() ? fallback : pit->second;
    const std::string temp = util::format_double(req.temperature);
    const std::string_view prompt = req.prompt;
    MockReply reply;

    if (profile == MockProfile::Echo) {
      const auto nl = prompt.rfind('\n');
      reply.content = std::string(nl == std::string_view::npos ? prompt : prompt.substr(nl + 1));
      return reply;
    }

    if (prompt.substr(0, prompt::kDetectorLead.size()) == prompt::kDetectorLead) {
      const bool confidence = prompt.find(prompt::kConfidenceFormat) != std::string_view::npos;
      const MockDocument* doc = find_document(*docs, prompt, " Text: ");
      std::vector<taxonomy::AttackType> predicted;
      if (doc) {
        for (auto t : doc->gold) {
          if (profile == MockProfile::Perfect ||
              unit_hash(req.model, temp, doc->attack_text, taxonomy::id_of(t)) < 0.7)
            predicted.push_back(t);
        }
        if (profile == MockProfile::Noisy &&
            unit_hash(req.model, temp, doc->attack_text, "spurious") < 0.15) {
          auto extra = taxonomy::attack_at(static_cast<std::size_t>(
              unit_hash(req.model, temp, doc->attack_text, "which") * taxonomy::kAttackCount));
          if (std::find(predicted.begin(), predicted.end(), extra) == predicted.end())
            predicted.push_back(extra);
        }
      }
      if (predicted.empty()) {
        reply.content = "No fallacies found.";
        return reply;
      }
      std::sort(predicted.begin(), predicted.end());
      std::vector<std::string> lines;
      for (auto t : predicted) {
        std::string line = tax.display_name(t);
        if (confidence) {
          const int score = 6 + static_cast<int>(unit_hash(req.model, temp, line, "score") * 5);
          line += " - score: " + std::to_string(score);
        }
        lines.push_back(std::move(line));
      }
      reply.content = util::join(lines, "\n");
      return reply;
    }

    if (prompt.substr(0, prompt::kDefenderInstruction.size()) == prompt::kDefenderInstruction) {
      const MockDocument* doc = find_document(*docs, prompt, "\nOriginal Text: ");
      if (!doc) {
        const auto pos = prompt.rfind("\nOriginal Text: ");
        const auto end = prompt.rfind("\nAttack: ");
        reply.content = pos == std::string_view::npos
                            ? std::string("Rewritten text.")
                            : std::string(prompt.substr(pos + 16, end - pos - 16));
        return reply;
      }
      reply.content = profile == MockProfile::Perfect
                          ? doc->original_text
                          : drop_sentences(doc->attack_text, req.model + temp);
      return reply;
    }

    reply.content = std::to_string(
        static_cast<int>(unit_hash(req.model, temp, prompt, "scale") * 101.0));
    return reply;
  };
}

}  // namespace bries::mock
