#pragma once

#include <chrono>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bries/error.hpp"
#include "bries/prompt_engine.hpp"

namespace bries::gateway {

struct ModelRoute {
  std::string model_id;
  std::string base_url;
  /// Name of the environment variable holding the API key; empty for local
  /// endpoints that need no credential.
  std::string api_key_env;
  double default_temperature = 0.0;
  /// Model name sent on the wire. Defaults to model_id when empty.
  std::string endpoint_model;
};

struct ParsedUrl {
  std::string scheme;  // "http" or "https"
  std::string host;
  int port = 0;
  std::string path_prefix;  // without trailing slash, may be empty
};

/// Throws Error(InvalidConfig) for anything that is not
/// http(s)://host[:port][/path].
ParsedUrl parse_base_url(std::string_view url);

class RouteTable {
 public:
  RouteTable() = default;
  explicit RouteTable(std::vector<ModelRoute> routes);

  /// Throws Error(InvalidConfig) on duplicate model ids, invalid urls or a
  /// default temperature outside [0, 2].
  void add(ModelRoute route);
  const ModelRoute* find(std::string_view model_id) const noexcept;
  const std::vector<ModelRoute>& routes() const noexcept { return routes_; }

  /// Points every route at `base_url`; used by the mock-endpoint mode.
  void redirect_all(const std::string& base_url);

 private:
  std::vector<ModelRoute> routes_;
};

struct CompletionRequest {
  std::string model_id;
  prompt::RenderedPrompt prompt;
  double temperature = 0.0;
  int max_tokens = 1024;
  std::string request_id;
};

struct CompletionResult {
  std::string request_id;
  std::string raw_text;
  double latency_ms = 0.0;
  int attempt_count = 1;
  std::string endpoint_model_name;
  /// Sleep applied before each retry, in order.
  std::vector<double> backoff_ms;
};

struct RetryPolicy {
  int max_retries = 3;
  std::chrono::milliseconds initial_backoff{500};
  double multiplier = 2.0;
  std::chrono::milliseconds max_backoff{20000};

  /// Delay before retry number `retry` (0-based). Nondecreasing in `retry`.
  std::chrono::milliseconds delay_for(int retry) const;
};

struct GatewayOptions {
  RetryPolicy retry;
  std::chrono::milliseconds timeout{120000};
  std::function<void(std::chrono::milliseconds)> sleeper;  // defaults to sleep_for
  std::function<void(std::string_view)> log_sink;         // optional
};

struct BatchEntry {
  std::string request_id;
  std::optional<CompletionResult> result;
  std::optional<Error> error;

  bool ok() const noexcept { return result.has_value(); }
};

/// Blocking OpenAI-compatible chat-completion client. `complete` is
/// thread-safe; `complete_batch` runs at most `parallelism` requests at once
/// and returns entries in request order.
class Gateway {
 public:
  explicit Gateway(RouteTable routes, GatewayOptions options = {});

  CompletionResult complete(const CompletionRequest& request) const;
  std::vector<BatchEntry> complete_batch(std::span<const CompletionRequest> requests,
                                         int parallelism) const;

  const RouteTable& routes() const noexcept { return routes_; }
  const GatewayOptions& options() const noexcept { return options_; }

 private:
  void log(std::string_view line) const;

  RouteTable routes_;
  GatewayOptions options_;
};

/// The JSON request body sent for `request` to the model named `wire_model`.
std::string request_body(const CompletionRequest& request, std::string_view wire_model);

}  // namespace bries::gateway
