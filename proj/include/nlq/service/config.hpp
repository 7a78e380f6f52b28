#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "nlq/db/connection.hpp"
#include "nlq/index/embedding.hpp"
#include "nlq/llm/gateway.hpp"
#include "nlq/pipeline/pipeline.hpp"
#include "nlq/schema/snapshot.hpp"

namespace nlq::service {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LlmSettings {
  std::string backend = "scripted";  // scripted | http
  std::filesystem::path script_file;
  llm::HttpBackendConfig http;
  double requests_per_minute = 0.0;
  std::filesystem::path prompt_dir;  // default prompts when empty
};

struct EmbedderSettings {
  std::string kind = "builtin";  // builtin | remote
  std::size_t dimension = index::kDefaultDimension;
  std::string url;    // remote only
  std::string model;  // remote only
  std::string auth_env;
};

struct ServiceConfig {
  std::vector<db::ConnectionProfile> databases;
  LlmSettings llm;
  EmbedderSettings embedder;
  pipeline::PipelineConfig pipeline;
  schema::ScanOptions scan;
  std::filesystem::path storage_dir;
  std::string listen_address = "127.0.0.1:8080";
  std::string auth_token_env;  // bearer token variable; no auth when empty or unset

  const db::ConnectionProfile* find_database(const std::string& name) const;
};

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

EnvLookup process_env();

// TOML document. String values may reference ${VAR}; relative paths resolve
// against `base_dir`. Throws ConfigError.
ServiceConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {},
                           const EnvLookup& env = process_env());
ServiceConfig load_config(const std::filesystem::path& path, const EnvLookup& env = process_env());

std::shared_ptr<llm::Backend> make_backend(const LlmSettings& settings);
std::shared_ptr<index::Embedder> make_embedder(const EmbedderSettings& settings,
                                               const std::filesystem::path& cache_file = {});

}  // namespace nlq::service
