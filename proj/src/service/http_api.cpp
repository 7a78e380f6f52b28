#include "nlq/service/http_api.hpp"

#include <httplib.h>

namespace nlq::service {

using nlohmann::json;

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
  send_json(res, status, {{"error_code", code}, {"message", message}});
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  json doc;
  try {
    doc = json::parse(req.body);
  } catch (const json::exception&) {
    throw ServiceError(400, "invalid_json", "request body is not valid JSON");
  }
  if (!doc.is_object()) throw ServiceError(400, "invalid_json", "request body must be a JSON object");
  return doc;
}

std::string required_string(const json& body, const char* key) {
  if (!body.contains(key)) throw ServiceError(422, "missing_field", std::string("missing field '") + key + "'");
  if (!body[key].is_string()) throw ServiceError(422, "invalid_field", std::string("field '") + key + "' must be a string");
  return body[key].get<std::string>();
}

using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

}  // namespace

std::pair<std::string, int> split_listen_address(const std::string& address) {
  auto colon = address.rfind(':');
  if (colon == std::string::npos || colon == 0) throw ConfigError("listen_address must be host:port");
  int port = 0;
  try {
    std::size_t used = 0;
    port = std::stoi(address.substr(colon + 1), &used);
    if (used != address.size() - colon - 1) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw ConfigError("listen_address has an invalid port: " + address);
  }
  if (port < 0 || port > 65535) throw ConfigError("listen_address port out of range: " + address);
  return {address.substr(0, colon), port};
}

HttpApi::HttpApi(Service& service, std::string bearer_token)
    : service_(service), token_(std::move(bearer_token)), server_(std::make_unique<httplib::Server>()) {
  auto& srv = *server_;

  // Every handler runs behind auth and error mapping.
  auto wrap = [this](Handler h) {
    return [this, h](const httplib::Request& req, httplib::Response& res) {
      if (!token_.empty() && req.get_header_value("Authorization") != "Bearer " + token_) {
        send_error(res, 401, "unauthorized", "missing or invalid bearer token");
        return;
      }
      try {
        h(req, res);
      } catch (const ServiceError& e) {
        send_error(res, e.status(), e.code(), e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, "internal_error", e.what());
      }
    };
  };

  srv.Get("/health", wrap([](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, {{"status", "ok"}});
  }));

  srv.Get("/databases", wrap([this](const httplib::Request&, httplib::Response& res) {
    json out = json::array();
    for (const auto& p : service_.config().databases) {
      out.push_back({{"name", p.name}, {"kind", db::to_string(p.kind)}});
    }
    send_json(res, 200, {{"databases", out}});
  }));

  srv.Post("/sessions", wrap([this](const httplib::Request& req, httplib::Response& res) {
    auto body = parse_body(req);
    auto database = required_string(body, "database");
    auto id = service_.create_session(database);
    send_json(res, 201, {{"session_id", id}, {"database", database}});
  }));

  srv.Get("/sessions", wrap([this](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, {{"sessions", service_.session_ids()}});
  }));

  srv.Get(R"(/sessions/([^/]+))", wrap([this](const httplib::Request& req, httplib::Response& res) {
    send_json(res, 200, service_.session_json(req.matches[1]));
  }));

  srv.Post(R"(/sessions/([^/]+)/ask)", wrap([this](const httplib::Request& req, httplib::Response& res) {
    std::string session_id = req.matches[1];
    service_.session_json(session_id);  // 404 before body checks
    auto body = parse_body(req);
    auto question = required_string(body, "question");
    auto [envelope, trace] = service_.ask(session_id, question);
    send_json(res, 200, pipeline::to_json(envelope));
  }));

  srv.Get(R"(/traces/([^/]+))", wrap([this](const httplib::Request& req, httplib::Response& res) {
    send_json(res, 200, service_.trace_json(req.matches[1]));
  }));

  srv.Post("/rules", wrap([this](const httplib::Request& req, httplib::Response& res) {
    auto body = parse_body(req);
    auto text = required_string(body, "text");
    std::string scope_text = body.contains("scope") ? required_string(body, "scope") : "global";
    pipeline::RuleScope scope;
    if (scope_text == "global") {
      scope = pipeline::RuleScope::kGlobal;
    } else if (scope_text == "session") {
      scope = pipeline::RuleScope::kSession;
    } else {
      throw ServiceError(422, "invalid_field", "scope must be global or session");
    }
    std::optional<std::string> session_id;
    if (body.contains("session_id") && !body["session_id"].is_null()) session_id = required_string(body, "session_id");
    auto rule = service_.add_rule(text, scope, session_id);
    auto out = pipeline::to_json(rule);
    out["scope"] = scope_text;
    if (session_id) out["session_id"] = *session_id;
    send_json(res, 201, out);
  }));

  srv.Get("/rules", wrap([this](const httplib::Request& req, httplib::Response& res) {
    bool all = req.get_param_value("include_inactive") == "true";
    json out = json::array();
    for (const auto& r : service_.list_rules(all)) out.push_back(pipeline::to_json(r));
    send_json(res, 200, {{"rules", out}});
  }));

  srv.Delete(R"(/rules/([^/]+))", wrap([this](const httplib::Request& req, httplib::Response& res) {
    send_json(res, 200, pipeline::to_json(service_.delete_rule(req.matches[1])));
  }));

  srv.Post("/scan", wrap([this](const httplib::Request& req, httplib::Response& res) {
    auto body = parse_body(req);
    send_json(res, 200, to_json(service_.scan(required_string(body, "database"))));
  }));

  srv.Get(R"(/schema/([^/]+))", wrap([this](const httplib::Request& req, httplib::Response& res) {
    send_json(res, 200, schema::to_json(service_.schema(req.matches[1])));
  }));

  // Unmatched routes and methods.
  srv.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return;
    if (res.status == 404) {
      send_error(res, 404, "no_route", "no such endpoint");
    } else if (res.status == 405) {
      send_error(res, 405, "method_not_allowed", "method not allowed");
    }
  });
}

HttpApi::~HttpApi() { stop(); }

int HttpApi::bind(const std::string& host, int port) {
  if (port == 0) return server_->bind_to_any_port(host);
  return server_->bind_to_port(host, port) ? port : -1;
}

bool HttpApi::listen_after_bind() { return server_->listen_after_bind(); }

void HttpApi::stop() {
  if (server_) server_->stop();
}

void HttpApi::wait_until_ready() const { server_->wait_until_ready(); }

}  // namespace nlq::service
