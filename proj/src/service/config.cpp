#include <cstdlib>
#include <fstream>
#include <set>

#include <httplib.h>
#include <toml.hpp>

#include "nlq/service/config.hpp"
#include "nlq/util/files.hpp"

namespace nlq::service {

namespace fs = std::filesystem;

const db::ConnectionProfile* ServiceConfig::find_database(const std::string& name) const {
  for (const auto& p : databases) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

EnvLookup process_env() {
  return [](const std::string& name) -> std::optional<std::string> {
    const char* v = std::getenv(name.c_str());
    if (!v) return std::nullopt;
    return std::string(v);
  };
}

namespace {

class Reader {
 public:
  Reader(const toml::table& root, fs::path base, const EnvLookup& env)
      : root_(root), base_(std::move(base)), env_(env) {}

  const toml::table* section(const char* name) const {
    const auto* node = root_.get(name);
    if (!node) return nullptr;
    if (!node->is_table()) throw ConfigError(std::string("[") + name + "] must be a table");
    return node->as_table();
  }

  std::optional<std::string> str(const toml::table* t, const std::string& where, const char* key) const {
    if (!t) return std::nullopt;
    const auto* node = t->get(key);
    if (!node) return std::nullopt;
    if (!node->is_string()) throw ConfigError(where + key + " must be a string");
    return interpolate(node->as_string()->get(), where + key);
  }

  std::optional<std::int64_t> integer(const toml::table* t, const std::string& where, const char* key,
                                      std::int64_t lo, std::int64_t hi) const {
    if (!t) return std::nullopt;
    const auto* node = t->get(key);
    if (!node) return std::nullopt;
    if (!node->is_integer()) throw ConfigError(where + key + " must be an integer");
    auto v = node->as_integer()->get();
    if (v < lo || v > hi) {
      throw ConfigError(where + key + " must be in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    }
    return v;
  }

  std::optional<double> number(const toml::table* t, const std::string& where, const char* key, double lo,
                               double hi) const {
    if (!t) return std::nullopt;
    const auto* node = t->get(key);
    if (!node) return std::nullopt;
    double v;
    if (node->is_integer()) {
      v = static_cast<double>(node->as_integer()->get());
    } else if (node->is_floating_point()) {
      v = node->as_floating_point()->get();
    } else {
      throw ConfigError(where + key + " must be a number");
    }
    if (v < lo || v > hi) throw ConfigError(where + key + " is out of range");
    return v;
  }

  fs::path path(const std::string& value) const {
    fs::path p(value);
    if (p.is_relative() && !base_.empty()) p = base_ / p;
    return p.lexically_normal();
  }

  void reject_unknown(const toml::table* t, const std::string& where, std::set<std::string> known) const {
    if (!t) return;
    for (const auto& [k, v] : *t) {
      std::string key(k.str());
      if (known.count(key)) continue;
      if (key.find("key") != std::string::npos || key.find("secret") != std::string::npos ||
          key.find("password") != std::string::npos || key == "token") {
        throw ConfigError(where + key +
                          ": secrets are not read from the config file; name an environment "
                          "variable instead");
      }
      throw ConfigError("unknown setting " + where + key);
    }
  }

 private:
  std::string interpolate(const std::string& value, const std::string& key) const {
    std::string out;
    std::size_t pos = 0;
    while (pos < value.size()) {
      auto start = value.find("${", pos);
      if (start == std::string::npos) {
        out.append(value, pos);
        break;
      }
      out.append(value, pos, start - pos);
      auto end = value.find('}', start + 2);
      if (end == std::string::npos) throw ConfigError(key + ": unterminated ${ in value");
      auto name = value.substr(start + 2, end - start - 2);
      auto v = env_(name);
      if (!v) throw ConfigError(key + ": environment variable " + name + " is not set");
      out += *v;
      pos = end + 1;
    }
    return out;
  }

  const toml::table& root_;
  fs::path base_;
  const EnvLookup& env_;
};

}  // namespace

ServiceConfig parse_config(std::string_view text, const fs::path& base_dir, const EnvLookup& env) {
  toml::table root;
  try {
    root = toml::parse(text);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << "config syntax error at line " << e.source().begin.line << ": " << e.description();
    throw ConfigError(msg.str());
  }
  Reader r(root, base_dir, env);
  ServiceConfig cfg;

  r.reject_unknown(&root, "",
                   {"storage_dir", "listen_address", "auth_token_env", "databases", "llm", "embedder",
                    "pipeline", "scan"});
  auto storage = r.str(&root, "", "storage_dir");
  if (!storage || storage->empty()) throw ConfigError("storage_dir is required");
  cfg.storage_dir = r.path(*storage);
  if (auto v = r.str(&root, "", "listen_address")) cfg.listen_address = *v;
  if (auto v = r.str(&root, "", "auth_token_env")) cfg.auth_token_env = *v;

  const auto* dbs = root.get("databases");
  if (!dbs || !dbs->is_array_of_tables() || dbs->as_array()->empty()) {
    throw ConfigError("at least one [[databases]] entry is required");
  }
  std::size_t i = 0;
  for (const auto& node : *dbs->as_array()) {
    const auto* t = node.as_table();
    std::string where = "databases[" + std::to_string(i++) + "].";
    r.reject_unknown(t, where, {"name", "kind", "location", "row_cap"});
    db::ConnectionProfile p;
    auto name = r.str(t, where, "name");
    if (!name || name->empty()) throw ConfigError(where + "name is required");
    p.name = *name;
    if (p.name.find_first_of("/\\") != std::string::npos || p.name == "." || p.name == "..") {
      throw ConfigError(where + "name must not contain path separators");
    }
    if (cfg.find_database(p.name)) throw ConfigError("duplicate database name '" + p.name + "'");
    auto kind = r.str(t, where, "kind").value_or("embedded-file");
    auto parsed = db::parse_connection_kind(kind);
    if (!parsed) throw ConfigError(where + "kind must be embedded-file or network");
    p.kind = *parsed;
    auto location = r.str(t, where, "location");
    if (!location || location->empty()) throw ConfigError(where + "location is required");
    p.location = p.kind == db::ConnectionKind::kEmbeddedFile ? r.path(*location).string() : *location;
    if (auto v = r.integer(t, where, "row_cap", 1, 10'000'000)) p.default_row_cap = *v;
    cfg.databases.push_back(std::move(p));
  }

  const auto* llm_t = r.section("llm");
  r.reject_unknown(llm_t, "llm.",
                   {"backend", "script_file", "url", "model", "models", "auth_env", "retry_max", "timeout_ms",
                    "initial_backoff_ms", "requests_per_minute", "prompt_dir"});
  if (auto v = r.str(llm_t, "llm.", "backend")) cfg.llm.backend = *v;
  if (cfg.llm.backend != "scripted" && cfg.llm.backend != "http") {
    throw ConfigError("llm.backend must be scripted or http");
  }
  if (auto v = r.str(llm_t, "llm.", "script_file")) cfg.llm.script_file = r.path(*v);
  if (auto v = r.str(llm_t, "llm.", "url")) cfg.llm.http.url = *v;
  if (auto v = r.str(llm_t, "llm.", "model")) cfg.llm.http.model = *v;
  if (auto v = r.str(llm_t, "llm.", "auth_env")) cfg.llm.http.auth_env_var = *v;
  if (auto v = r.integer(llm_t, "llm.", "retry_max", 0, 10)) cfg.llm.http.retry_max = static_cast<int>(*v);
  if (auto v = r.integer(llm_t, "llm.", "timeout_ms", 1, 3'600'000)) cfg.llm.http.timeout = std::chrono::milliseconds(*v);
  if (auto v = r.integer(llm_t, "llm.", "initial_backoff_ms", 0, 60'000)) {
    cfg.llm.http.initial_backoff = std::chrono::milliseconds(*v);
  }
  if (auto v = r.number(llm_t, "llm.", "requests_per_minute", 0, 1e6)) cfg.llm.requests_per_minute = *v;
  if (auto v = r.str(llm_t, "llm.", "prompt_dir")) cfg.llm.prompt_dir = r.path(*v);
  if (llm_t) {
    if (const auto* models = llm_t->get("models")) {
      if (!models->is_table()) throw ConfigError("llm.models must be a table");
      for (const auto& [k, v] : *models->as_table()) {
        auto id = llm::parse_template_id(k.str());
        if (!id) throw ConfigError("llm.models: unknown template '" + std::string(k.str()) + "'");
        if (!v.is_string()) throw ConfigError("llm.models values must be strings");
        cfg.llm.http.model_per_template[*id] = v.as_string()->get();
      }
    }
  }
  if (cfg.llm.backend == "http" && (cfg.llm.http.url.empty() || cfg.llm.http.model.empty())) {
    throw ConfigError("llm.url and llm.model are required for the http backend");
  }

  const auto* emb = r.section("embedder");
  r.reject_unknown(emb, "embedder.", {"kind", "dimension", "url", "model", "auth_env"});
  if (auto v = r.str(emb, "embedder.", "kind")) cfg.embedder.kind = *v;
  if (cfg.embedder.kind != "builtin" && cfg.embedder.kind != "remote") {
    throw ConfigError("embedder.kind must be builtin or remote");
  }
  if (auto v = r.integer(emb, "embedder.", "dimension", 8, 8192)) cfg.embedder.dimension = static_cast<std::size_t>(*v);
  if (auto v = r.str(emb, "embedder.", "url")) cfg.embedder.url = *v;
  if (auto v = r.str(emb, "embedder.", "model")) cfg.embedder.model = *v;
  if (auto v = r.str(emb, "embedder.", "auth_env")) cfg.embedder.auth_env = *v;
  if (cfg.embedder.kind == "remote" && (cfg.embedder.url.empty() || cfg.embedder.model.empty())) {
    throw ConfigError("embedder.url and embedder.model are required for the remote embedder");
  }

  const auto* pl = r.section("pipeline");
  r.reject_unknown(pl, "pipeline.",
                   {"max_iterations", "k_tables", "k_rules", "char_budget", "probe_row_cap", "full_row_cap",
                    "rows_in_prompt", "max_history", "max_output_tokens", "ask_timeout_ms", "dialect"});
  auto& p = cfg.pipeline;
  if (auto v = r.integer(pl, "pipeline.", "max_iterations", 1, 10)) p.max_iterations = static_cast<int>(*v);
  if (auto v = r.integer(pl, "pipeline.", "k_tables", 1, 100)) p.k_tables = static_cast<std::size_t>(*v);
  if (auto v = r.integer(pl, "pipeline.", "k_rules", 0, 100)) p.k_rules = static_cast<std::size_t>(*v);
  if (auto v = r.integer(pl, "pipeline.", "char_budget", 100, 1'000'000)) p.char_budget = static_cast<std::size_t>(*v);
  if (auto v = r.integer(pl, "pipeline.", "probe_row_cap", 1, 1000)) p.probe_row_cap = *v;
  if (auto v = r.integer(pl, "pipeline.", "full_row_cap", 1, 1'000'000)) p.full_row_cap = *v;
  if (auto v = r.integer(pl, "pipeline.", "rows_in_prompt", 1, 10'000)) p.rows_in_prompt = static_cast<std::size_t>(*v);
  if (auto v = r.integer(pl, "pipeline.", "max_history", 0, 100)) p.max_history = static_cast<std::size_t>(*v);
  if (auto v = r.integer(pl, "pipeline.", "max_output_tokens", 16, 1'000'000)) p.max_output_tokens = *v;
  if (auto v = r.integer(pl, "pipeline.", "ask_timeout_ms", 1, 86'400'000)) p.ask_timeout = std::chrono::milliseconds(*v);
  if (auto v = r.str(pl, "pipeline.", "dialect")) p.dialect = *v;
  if (p.rows_in_prompt > static_cast<std::size_t>(p.full_row_cap)) {
    throw ConfigError("pipeline.rows_in_prompt must not exceed pipeline.full_row_cap");
  }

  const auto* sc = r.section("scan");
  r.reject_unknown(sc, "scan.", {"categorical_max_distinct", "query_budget_ms", "max_tables"});
  if (auto v = r.integer(sc, "scan.", "categorical_max_distinct", 0, 10'000)) cfg.scan.categorical_max_distinct = *v;
  if (auto v = r.integer(sc, "scan.", "query_budget_ms", 1, 3'600'000)) cfg.scan.query_budget = std::chrono::milliseconds(*v);
  if (auto v = r.integer(sc, "scan.", "max_tables", 1, 1'000'000)) cfg.scan.max_tables = *v;

  return cfg;
}

ServiceConfig load_config(const fs::path& path, const EnvLookup& env) {
  if (!fs::is_regular_file(path)) throw ConfigError("config file not found: " + path.string());
  auto base = fs::absolute(path).parent_path();
  return parse_config(util::read_file(path), base, env);
}

std::shared_ptr<llm::Backend> make_backend(const LlmSettings& settings) {
  if (settings.backend == "http") return std::make_shared<llm::HttpBackend>(settings.http);
  if (settings.script_file.empty()) throw ConfigError("llm.script_file is required for the scripted backend");
  try {
    return llm::ScriptedBackend::from_file(settings.script_file);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("cannot load script: ") + e.what());
  }
}

std::shared_ptr<index::Embedder> make_embedder(const EmbedderSettings& settings, const fs::path& cache_file) {
  if (settings.kind == "builtin") return std::make_shared<index::BuiltinEmbedder>(settings.dimension);
  auto url = settings.url;
  auto model = settings.model;
  auto auth_env = settings.auth_env;
  auto scheme_end = url.find("://");
  auto path_start = url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  std::string origin = path_start == std::string::npos ? url : url.substr(0, path_start);
  std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);
  auto transport = [origin, path, model, auth_env](std::string_view text) {
    httplib::Client client(origin);
    httplib::Headers headers;
    if (!auth_env.empty()) {
      if (const char* token = std::getenv(auth_env.c_str())) {
        headers.emplace("Authorization", std::string("Bearer ") + token);
      }
    }
    nlohmann::json body = {{"model", model}, {"input", std::string(text)}};
    auto res = client.Post(path, headers, body.dump(), "application/json");
    if (!res) throw std::runtime_error("embedding request failed: " + httplib::to_string(res.error()));
    if (res->status != 200) throw std::runtime_error("embedding request failed: HTTP " + std::to_string(res->status));
    auto doc = nlohmann::json::parse(res->body);
    return doc.at("data").at(0).at("embedding").get<std::vector<double>>();
  };
  return std::make_shared<index::RemoteEmbedder>(model, settings.dimension, transport, cache_file);
}

}  // namespace nlq::service
