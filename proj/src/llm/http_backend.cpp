#include <cstdlib>
#include <nlohmann/json.hpp>
#include <regex>
#include <thread>

#include "httplib.h"
#include "nlq/llm/gateway.hpp"

namespace nlq::llm {

struct HttpBackend::Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

HttpBackend::HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {
  static const std::regex kUrl(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(config_.url, m, kUrl)) {
    throw std::invalid_argument("backend.url is not an http(s) URL: '" + config_.url + "'");
  }
  endpoint_ = std::make_unique<Endpoint>(Endpoint{m[1].str(), m[2].matched ? m[2].str() : "/"});
  if (config_.retry_max < 0) throw std::invalid_argument("retry_max must be >= 0");
}

HttpBackend::~HttpBackend() = default;

Completion HttpBackend::complete(const CompletionRequest& request) {
  std::string model = config_.model;
  if (auto it = config_.model_per_template.find(request.template_id);
      it != config_.model_per_template.end()) {
    model = it->second;
  }
  nlohmann::json body = {
      {"model", model},
      {"messages", nlohmann::json::array({{{"role", "user"}, {"content", request.rendered_prompt}}})},
      {"temperature", request.temperature},
      {"max_tokens", request.max_output_tokens}};
  httplib::Headers headers;
  if (!config_.auth_env_var.empty()) {
    if (const char* token = std::getenv(config_.auth_env_var.c_str()); token && *token) {
      headers.emplace("Authorization", std::string("Bearer ") + token);
    }
  }

  const auto start = std::chrono::steady_clock::now();
  const auto deadline = start + config_.timeout;
  auto backoff = config_.initial_backoff;
  std::string last_error;
  bool timed_out = false;

  for (int attempt = 0; attempt <= config_.retry_max; ++attempt) {
    auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    if (remaining.count() <= 0) break;

    httplib::Client client(endpoint_->origin);
    client.set_connection_timeout(std::chrono::duration_cast<std::chrono::seconds>(remaining).count(),
                                  0);
    auto secs = std::chrono::duration_cast<std::chrono::seconds>(remaining);
    auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(remaining - secs);
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());

    auto res = client.Post(endpoint_->path, headers, body.dump(), "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      // A read that gave up at the deadline is a timeout, not an outage.
      if (std::chrono::steady_clock::now() + std::chrono::milliseconds(20) >= deadline) {
        timed_out = true;
        break;
      }
    } else if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
    } else if (res->status != 200) {
      throw BackendUnavailable("HTTP " + std::to_string(res->status) + ": " + res->body);
    } else {
      auto doc = nlohmann::json::parse(res->body, nullptr, false);
      if (doc.is_discarded()) throw BackendUnavailable("malformed JSON response from backend");
      try {
        auto text = doc.at("choices").at(0).at("message").at("content").get<std::string>();
        auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
            std::chrono::steady_clock::now() - start);
        return Completion{std::move(text), id(), elapsed.count()};
      } catch (const nlohmann::json::exception& e) {
        throw BackendUnavailable(std::string("unexpected response shape: ") + e.what());
      }
    }
    if (attempt < config_.retry_max) {
      auto left = deadline - std::chrono::steady_clock::now();
      if (left <= backoff) break;
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
  }
  if (timed_out || std::chrono::steady_clock::now() >= deadline) {
    throw Timeout("completion exceeded " + std::to_string(config_.timeout.count()) + " ms" +
                  (last_error.empty() ? "" : " (" + last_error + ")"));
  }
  throw BackendUnavailable("backend unavailable after " + std::to_string(config_.retry_max + 1) +
                           " attempts: " + last_error);
}

}  // namespace nlq::llm
