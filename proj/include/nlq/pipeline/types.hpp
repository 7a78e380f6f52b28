#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nlq/db/connection.hpp"
#include "nlq/index/vector_index.hpp"

namespace nlq::pipeline {

enum class QueryIntent { kStructureQuery, kDataQuery };
enum class IntentSource { kModel, kFallback };

const char* to_string(QueryIntent intent);
const char* to_string(IntentSource source);

struct BusinessRule {
  std::string rule_id;
  std::string text;
  std::vector<std::string> tags;
  std::string created_at;
  std::string updated_at;
  bool active = true;
};

struct ContextBundle {
  std::vector<index::SearchHit> schema_hits;  // kind = table_doc, score order
  std::vector<index::SearchHit> rule_hits;    // kind = rule, score order
  std::vector<std::string> session_rules;     // always included, ahead of rule hits
  std::string rendered_schema;
  std::string rendered_rules;
  std::size_t char_budget_used = 0;
  bool top_schema_truncated = false;
};

enum class ValidationStatus { kPass, kGuardFail, kExecFail, kSemanticFail };

const char* to_string(ValidationStatus status);

// One step of the validation sequence, in execution order.
struct CheckRecord {
  std::string stage;  // "extract" | "guard" | "dry_run" | "introspect"
  bool ok = false;
  std::string detail;
};

struct ValidationOutcome {
  ValidationStatus status = ValidationStatus::kGuardFail;
  std::string detail;
  std::optional<db::ResultTable> sample_rows;  // present on pass
  std::vector<CheckRecord> checks;
};

struct SqlCandidate {
  int iteration = 1;
  std::string sql;  // empty when nothing could be extracted
  ValidationOutcome outcome;
};

// Every statement sent to the database during an ask, in order.
struct DbCall {
  int iteration = 0;  // candidate the call belongs to
  std::string purpose;  // "probe" | "full"
  std::string sql;
  bool ok = false;
};

enum class FinalStatus { kAnswered, kExhausted, kStructureAnswered };

const char* to_string(FinalStatus status);

struct ContextRef {
  std::string id;
  index::ChunkKind kind;
  std::string source_ref;
  double score = 0.0;
};

struct PipelineTrace {
  std::string trace_id;
  std::string session_id;
  std::string question;
  QueryIntent intent = QueryIntent::kDataQuery;
  IntentSource intent_source = IntentSource::kModel;
  std::vector<ContextRef> context;
  std::vector<std::string> session_rules;
  std::vector<SqlCandidate> candidates;
  std::vector<DbCall> db_calls;
  FinalStatus final_status = FinalStatus::kExhausted;
  std::string failure_detail;
  std::string started_at;
  std::map<std::string, std::int64_t> timings_ms;
};

enum class ChartKind { kBar, kLine };

struct ChartSpec {
  ChartKind kind = ChartKind::kBar;
  std::string x_column;
  std::string y_column;
  bool operator==(const ChartSpec&) const = default;
};

struct AnswerEnvelope {
  std::string text;
  std::optional<db::ResultTable> table;
  std::optional<ChartSpec> chart;
  std::optional<std::string> sql;
  std::string trace_id;
};

struct Turn {
  std::string question;
  AnswerEnvelope answer;
};

// Conversation state. Turns are append-only; one ask at a time.
struct Session {
  std::string session_id;
  std::string database;
  std::vector<Turn> turns;
  std::vector<BusinessRule> session_rules;

  std::mutex in_flight;  // held for the duration of an ask
};

// JSON shapes shared by the service, the console and the harness; see
// docs/api_schema.json.
nlohmann::json to_json(const db::ResultTable& table);
db::ResultTable table_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const AnswerEnvelope& envelope);
AnswerEnvelope envelope_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const PipelineTrace& trace);
PipelineTrace trace_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const BusinessRule& rule);
BusinessRule rule_from_json(const nlohmann::json& doc);

// Drops wall-clock fields (started_at, timings_ms) so runs can be compared.
nlohmann::json strip_volatile(nlohmann::json trace_json);

}  // namespace nlq::pipeline
