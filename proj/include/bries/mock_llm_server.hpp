#pragma once

#include <atomic>
#include <chrono>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "bries/taxonomy.hpp"

namespace httplib {
class Server;
}

namespace bries::mock {

struct MockRequest {
  std::string model;
  std::string prompt;
  double temperature = 0.0;
  int max_tokens = 0;
  std::string authorization;
};

struct MockReply {
  int status = 200;
  std::string content;
  std::chrono::milliseconds delay{0};
  /// Respond 200 with a body that has no choices[0].message.content.
  bool malformed = false;
};

struct Arrival {
  std::size_t sequence = 0;
  std::string model;
  std::string prompt;
  std::chrono::steady_clock::time_point started;
  std::chrono::steady_clock::time_point finished;
};

/// In-process HTTP server speaking the chat-completion wire protocol on
/// 127.0.0.1 with an ephemeral port. Replies come from per-model scripted
/// queues first, then from the responder callback. Tracks arrivals and the
/// in-flight high-water mark for concurrency assertions.
class MockLlmServer {
 public:
  using Responder = std::function<MockReply(const MockRequest&)>;

  explicit MockLlmServer(Responder responder = {}, int worker_threads = 16);
  ~MockLlmServer();
  MockLlmServer(const MockLlmServer&) = delete;
  MockLlmServer& operator=(const MockLlmServer&) = delete;

  int port() const noexcept { return port_; }
  std::string base_url() const;

  /// Queue replies for `model` (or "*" for any model), consumed in order.
  void script(const std::string& model, std::vector<MockReply> replies);
  void set_responder(Responder responder);

  std::size_t request_count() const noexcept { return count_.load(); }
  int max_in_flight() const noexcept { return max_in_flight_.load(); }
  std::vector<Arrival> arrivals() const;
  std::vector<MockRequest> requests() const;
  void reset_stats();

 private:
  MockReply next_reply(const MockRequest& req);

  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;

  mutable std::mutex mu_;
  Responder responder_;
  std::map<std::string, std::deque<MockReply>> scripts_;
  std::vector<Arrival> arrivals_;
  std::vector<MockRequest> requests_;
  std::atomic<std::size_t> count_{0};
  std::atomic<int> in_flight_{0};
  std::atomic<int> max_in_flight_{0};
};

/// A document the dataset-backed responder knows about.
struct MockDocument {
  std::string attack_text;
  std::string original_text;
  std::vector<taxonomy::AttackType> gold;
};

/// Behaviour of a simulated model.
///  perfect: detector returns exactly the gold types; defender returns the
///           clean original text.
///  noisy:   detector keeps each gold type with probability 0.7 and adds a
///           spurious type with probability 0.15 per document, decided by a
///           stable hash of (model, temperature, document, type); defender
///           returns the attacked text with hashed sentence drops.
///  echo:    returns the last line of the prompt.
enum class MockProfile { Perfect, Noisy, Echo };

/// Deterministic responder that recognizes detector and defender prompts
/// and answers them from the document table according to each model's
/// profile (models not listed use `fallback`). Confidence scores are emitted
/// when the prompt requests the "attack - score: #" format. Prompts that
/// are neither (e.g. scorer prompts) get a hashed integer in [0, 100].
MockLlmServer::Responder dataset_responder(const taxonomy::Taxonomy& tax,
                                           std::vector<MockDocument> documents,
                                           std::map<std::string, MockProfile> profiles,
                                           MockProfile fallback = MockProfile::Noisy);

}  // namespace bries::mock
