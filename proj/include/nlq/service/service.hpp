#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nlq/service/config.hpp"

namespace nlq::service {

// Carries the HTTP status and error_code used by the API.
class ServiceError : public std::runtime_error {
 public:
  ServiceError(int status, std::string code, const std::string& message)
      : std::runtime_error(message), status_(status), code_(std::move(code)) {}
  int status() const { return status_; }
  const std::string& code() const { return code_; }

 private:
  int status_;
  std::string code_;
};

struct ScanSummary {
  std::string database;
  std::vector<std::string> tables;
  std::size_t column_count = 0;
  std::size_t foreign_key_count = 0;
  std::string scanned_at;
};

nlohmann::json to_json(const ScanSummary& summary);

// Sessions, rules, snapshots and indexes over one storage directory:
//   rules.json, snapshots/<db>.json, index/<db>.jsonl, sessions.jsonl
// Construction restores whatever a previous process left there.
class Service {
 public:
  Service(ServiceConfig config, std::shared_ptr<llm::Backend> backend,
          std::shared_ptr<index::Embedder> embedder = nullptr);
  ~Service();

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  const ServiceConfig& config() const { return config_; }

  std::string create_session(const std::string& database);
  // 404 unknown session, 422 empty question, 409 ask already running.
  std::pair<pipeline::AnswerEnvelope, pipeline::PipelineTrace> ask(const std::string& session_id,
                                                                   const std::string& question);
  nlohmann::json session_json(const std::string& session_id) const;
  std::vector<std::string> session_ids() const;
  nlohmann::json trace_json(const std::string& trace_id) const;

  pipeline::BusinessRule add_rule(const std::string& text, pipeline::RuleScope scope,
                                  const std::optional<std::string>& session_id = std::nullopt);
  std::vector<pipeline::BusinessRule> list_rules(bool include_inactive = false) const;
  pipeline::BusinessRule delete_rule(const std::string& rule_id);

  // 404 unknown database, 502 scan failure.
  ScanSummary scan(const std::string& database);
  // 404 when unknown or never scanned.
  schema::SchemaSnapshot schema(const std::string& database) const;

  std::size_t active_chunks(const std::string& database, index::ChunkKind kind) const;

 private:
  struct DbState;
  struct SessionEntry;

  DbState& db_state(const std::string& database) const;
  SessionEntry& session_entry(const std::string& session_id) const;
  ScanSummary scan_locked(DbState& state);
  void restore_sessions();
  void log(const nlohmann::json& record);
  void save_index(DbState& state);

  ServiceConfig config_;
  std::filesystem::path storage_;
  std::shared_ptr<index::Embedder> embedder_;
  std::unique_ptr<llm::Gateway> gateway_;
  std::unique_ptr<pipeline::RuleStore> rules_;
  std::map<std::string, std::unique_ptr<DbState>> dbs_;

  mutable std::mutex rules_mu_;
  mutable std::mutex sessions_mu_;
  std::map<std::string, std::unique_ptr<SessionEntry>> sessions_;
  int next_session_ = 1;
  mutable std::mutex traces_mu_;
  std::map<std::string, pipeline::PipelineTrace> traces_;
  std::mutex log_mu_;
};

}  // namespace nlq::service
