#include "bries/llm_gateway.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <regex>
#include <thread>

#include <httplib.h>
#include <json.hpp>

namespace bries::gateway {

using nlohmann::json;

ParsedUrl parse_base_url(std::string_view url) {
  static const std::regex re(R"(^(https?)://([A-Za-z0-9._\-]+|\[[0-9A-Fa-f:]+\])(?::([0-9]{1,5}))?(/[^\s?#]*)?$)");
  std::cmatch m;
  if (!std::regex_match(url.data(), url.data() + url.size(), m, re))
    throw Error(ErrorCode::InvalidConfig, "invalid base_url '" + std::string(url) + "'");
  ParsedUrl out;
  out.scheme = m[1].str();
  out.host = m[2].str();
  out.port = m[3].matched ? std::stoi(m[3].str()) : (out.scheme == "https" ? 443 : 80);
  if (out.port <= 0 || out.port > 65535)
    throw Error(ErrorCode::InvalidConfig, "invalid port in base_url '" + std::string(url) + "'");
  out.path_prefix = m[4].matched ? m[4].str() : "";
  while (!out.path_prefix.empty() && out.path_prefix.back() == '/') out.path_prefix.pop_back();
  return out;
}

RouteTable::RouteTable(std::vector<ModelRoute> routes) {
  for (auto& r : routes) add(std::move(r));
}

void RouteTable::add(ModelRoute route) {
  if (route.model_id.empty()) throw Error(ErrorCode::InvalidConfig, "route without model_id");
  if (find(route.model_id))
    throw Error(ErrorCode::InvalidConfig, "duplicate route for model '" + route.model_id + "'");
  parse_base_url(route.base_url);
  if (!(route.default_temperature >= 0.0 && route.default_temperature <= 2.0))
    throw Error(ErrorCode::InvalidConfig, "default_temperature out of [0, 2] for '" + route.model_id + "'");
  routes_.push_back(std::move(route));
}

const ModelRoute* RouteTable::find(std::string_view model_id) const noexcept {
  auto it = std::find_if(routes_.begin(), routes_.end(),
                         [&](const ModelRoute& r) { return r.model_id == model_id; });
  return it == routes_.end() ? nullptr : &*it;
}

void RouteTable::redirect_all(const std::string& base_url) {
  parse_base_url(base_url);
  for (auto& r : routes_) r.base_url = base_url;
}

std::chrono::milliseconds RetryPolicy::delay_for(int retry) const {
  const double raw = static_cast<double>(initial_backoff.count()) * std::pow(multiplier, retry);
  const double capped = std::min(raw, static_cast<double>(max_backoff.count()));
  return std::chrono::milliseconds(static_cast<long long>(std::max(0.0, capped)));
}

std::string request_body(const CompletionRequest& request, std::string_view wire_model) {
  json body = {
      {"model", wire_model},
      {"messages", json::array({{{"role", "user"}, {"content", request.prompt.text}}})},
      {"temperature", request.temperature},
      {"max_tokens", request.max_tokens},
  };
  return body.dump();
}

Gateway::Gateway(RouteTable routes, GatewayOptions options)
    : routes_(std::move(routes)), options_(std::move(options)) {
  if (!options_.sleeper)
    options_.sleeper = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

void Gateway::log(std::string_view line) const {
  if (options_.log_sink) options_.log_sink(line);
}

namespace {

enum class Outcome { Ok, Transient, Fatal };

struct Attempt {
  Outcome outcome = Outcome::Fatal;
  std::string content;
  std::string model_name;
  std::string detail;
  ErrorCode fatal_code = ErrorCode::EndpointRejected;
};

Attempt parse_response(const std::string& body, const std::string& fallback_model) {
  Attempt a;
  json doc = json::parse(body, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) {
    a.fatal_code = ErrorCode::MalformedResponse;
    a.detail = "response body is not a JSON object";
    return a;
  }
  const json* content = nullptr;
  if (auto ch = doc.find("choices"); ch != doc.end() && ch->is_array() && !ch->empty()) {
    const json& first = (*ch)[0];
    if (auto msg = first.find("message"); msg != first.end() && msg->is_object()) {
      if (auto c = msg->find("content"); c != msg->end() && c->is_string()) content = &*c;
    }
  }
  if (!content) {
    a.fatal_code = ErrorCode::MalformedResponse;
    a.detail = "response lacks choices[0].message.content";
    return a;
  }
  a.outcome = Outcome::Ok;
  a.content = content->get<std::string>();
  auto m = doc.find("model");
  a.model_name = (m != doc.end() && m->is_string()) ? m->get<std::string>() : fallback_model;
  return a;
}

}  // namespace

CompletionResult Gateway::complete(const CompletionRequest& request) const {
  const ModelRoute* route = routes_.find(request.model_id);
  if (!route) throw Error(ErrorCode::UnknownModel, "no route for model '" + request.model_id + "'");
  if (!(request.temperature >= 0.0 && request.temperature <= 2.0))
    throw Error(ErrorCode::InvalidConfig, "temperature out of [0, 2]");
  if (request.max_tokens < 1) throw Error(ErrorCode::InvalidConfig, "max_tokens must be >= 1");

  std::string api_key;
  if (!route->api_key_env.empty()) {
    const char* v = std::getenv(route->api_key_env.c_str());
    if (!v || !*v)
      throw Error(ErrorCode::AuthMissing,
                  "environment variable " + route->api_key_env + " is not set");
    api_key = v;
  }

  const ParsedUrl url = parse_base_url(route->base_url);
  const std::string wire_model = route->endpoint_model.empty() ? route->model_id : route->endpoint_model;
  const std::string body = request_body(request, wire_model);
  const std::string path = url.path_prefix + "/v1/chat/completions";

  httplib::Headers headers;
  if (!api_key.empty()) headers.emplace("Authorization", "Bearer " + api_key);

  CompletionResult result;
  result.request_id = request.request_id;
  const auto started = std::chrono::steady_clock::now();
  const int max_attempts = options_.retry.max_retries + 1;
  std::string last_detail;

  for (int attempt = 1; attempt <= max_attempts; ++attempt) {
    if (attempt > 1) {
      const auto delay = options_.retry.delay_for(attempt - 2);
      result.backoff_ms.push_back(static_cast<double>(delay.count()));
      options_.sleeper(delay);
    }
    result.attempt_count = attempt;

    Attempt outcome;
    {
      const std::string origin = url.scheme + "://" + url.host + ":" + std::to_string(url.port);
      httplib::Client client(origin);
      const auto secs = options_.timeout.count() / 1000;
      const auto usecs = (options_.timeout.count() % 1000) * 1000;
      client.set_connection_timeout(secs, usecs);
      client.set_read_timeout(secs, usecs);
      client.set_write_timeout(secs, usecs);
      auto res = client.Post(path, headers, body, "application/json");
      if (!res) {
        outcome.outcome = Outcome::Transient;
        outcome.detail = "transport error: " + httplib::to_string(res.error());
      } else if (res->status == 429 || res->status >= 500) {
        outcome.outcome = Outcome::Transient;
        outcome.detail = "HTTP " + std::to_string(res->status);
      } else if (res->status < 200 || res->status >= 300) {
        outcome.outcome = Outcome::Fatal;
        outcome.fatal_code = ErrorCode::EndpointRejected;
        outcome.detail = "HTTP " + std::to_string(res->status);
      } else {
        outcome = parse_response(res->body, wire_model);
      }
    }

    log("request " + request.request_id + " model=" + request.model_id + " attempt=" +
        std::to_string(attempt) + " " +
        (outcome.outcome == Outcome::Ok ? std::string("ok") : outcome.detail));

    if (outcome.outcome == Outcome::Ok) {
      result.raw_text = std::move(outcome.content);
      result.endpoint_model_name = std::move(outcome.model_name);
      result.latency_ms = std::chrono::duration<double, std::milli>(
                              std::chrono::steady_clock::now() - started)
                              .count();
      return result;
    }
    if (outcome.outcome == Outcome::Fatal)
      throw Error(outcome.fatal_code, "model '" + request.model_id + "': " + outcome.detail);
    last_detail = outcome.detail;
  }
  throw Error(ErrorCode::EndpointUnreachable,
              "model '" + request.model_id + "' after " + std::to_string(max_attempts) +
                  " attempts: " + last_detail);
}

std::vector<BatchEntry> Gateway::complete_batch(std::span<const CompletionRequest> requests,
                                                int parallelism) const {
  if (parallelism < 1) throw Error(ErrorCode::InvalidConfig, "parallelism must be >= 1");
  std::vector<BatchEntry> entries(requests.size());
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < requests.size(); i = next.fetch_add(1)) {
      entries[i].request_id = requests[i].request_id;
      try {
        entries[i].result = complete(requests[i]);
      } catch (const Error& e) {
        entries[i].error = e;
      } catch (const std::exception& e) {
        entries[i].error = Error(ErrorCode::EndpointUnreachable, e.what());
      }
    }
  };

  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(parallelism), requests.size());
  if (workers <= 1) {
    worker();
    return entries;
  }
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  pool.clear();
  return entries;
}

}  // namespace bries::gateway
