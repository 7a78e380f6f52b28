#pragma once

#include <chrono>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "nlq/llm/gateway.hpp"
#include "nlq/pipeline/types.hpp"
#include "nlq/schema/snapshot.hpp"

namespace nlq::pipeline {

struct PipelineConfig {
  int max_iterations = 3;
  std::size_t k_tables = 5;
  std::size_t k_rules = 5;
  std::size_t char_budget = 8000;
  std::int64_t probe_row_cap = db::kProbeRowCap;
  std::int64_t full_row_cap = db::kDefaultRowCap;
  std::size_t rows_in_prompt = 50;
  std::size_t max_history = 4;
  std::string dialect = "SQLite";
  std::int64_t max_output_tokens = 1024;
  // Per-ask wall-clock limit; unset means unbounded.
  std::optional<std::chrono::milliseconds> ask_timeout;
};

// Everything an ask needs. The connection is used by one ask at a time.
struct PipelineDeps {
  db::Connection& conn;
  const index::VectorIndex& index;
  const schema::SchemaSnapshot& snapshot;
  llm::Gateway& gateway;
  PipelineConfig config;
};

class EmptyIndex : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EmptyRule : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class PreconditionViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct IntentDecision {
  QueryIntent intent;
  IntentSource source;
};

// Keyword fallback used when the model's answer is not STRUCTURE/DATA.
QueryIntent heuristic_intent(std::string_view question);

IntentDecision classify_intent(const std::string& question, const Session& session,
                               llm::Gateway& gateway, const PipelineConfig& config = {});

ContextBundle build_context(const std::string& question, const index::VectorIndex& index,
                            const std::vector<std::string>& session_rules = {},
                            std::size_t k_tables = 5, std::size_t k_rules = 5,
                            std::size_t char_budget = 8000);

// Last `max_history` turns as prompt text, or "(none)".
std::string render_history(const Session& session, std::size_t max_history);

// Header, dashed rule, then one line per row (at most max_rows), padded to
// column width.
std::string render_table_text(const db::ResultTable& table, std::size_t max_rows);

struct GenerationFailure {
  std::string detail;    // why no SQL was produced
  std::string raw_text;  // model output, when there was one
};

using GeneratedSql = Expected<std::string, GenerationFailure>;

GeneratedSql generate_sql(const std::string& question, const ContextBundle& bundle,
                          llm::Gateway& gateway, const std::string& history = "(none)",
                          const PipelineConfig& config = {});

// guard_check, then the limit probe, then model introspection. Every
// failure is an outcome, never an exception.
ValidationOutcome validate(const std::string& candidate_sql, const std::string& question,
                           const ContextBundle& bundle, db::Connection& conn,
                           llm::Gateway& gateway, const PipelineConfig& config = {});

// Throws PreconditionViolation for a passing candidate.
GeneratedSql refine(const SqlCandidate& prior, const std::string& question,
                    const ContextBundle& bundle, llm::Gateway& gateway,
                    const std::string& history = "(none)", const PipelineConfig& config = {});

// Parses "CHART: bar|line, x=<col>, y=<col>" lines. Directive lines are
// removed from the returned text; the chart is kept only if both columns
// exist in `table`.
std::pair<std::string, std::optional<ChartSpec>> split_chart_directive(
    const std::string& answer_text, const db::ResultTable& table);

struct DataAnswer {
  AnswerEnvelope envelope;
  bool ok = false;  // false when the full execution failed
  std::string failure_detail;
};

DataAnswer answer_data(const std::string& question, const std::string& sql, db::Connection& conn,
                       llm::Gateway& gateway, const std::string& history = "(none)",
                       const PipelineConfig& config = {});

AnswerEnvelope answer_structure(const std::string& question,
                                const schema::SchemaSnapshot& snapshot, llm::Gateway& gateway,
                                const std::string& history = "(none)",
                                const PipelineConfig& config = {});

// Runs one question end to end and appends the turn to the session. The
// caller holds session.in_flight. Failures come back as an envelope plus a
// trace with final_status = exhausted.
std::pair<AnswerEnvelope, PipelineTrace> ask(Session& session, const std::string& question,
                                             const PipelineDeps& deps);

// Global rules are numbered rule-0001, rule-0002, ... and optionally
// persisted to one JSON file.
class RuleStore {
 public:
  explicit RuleStore(std::filesystem::path file = {});

  BusinessRule add(std::string text, std::vector<std::string> tags = {});
  // Keeps the rule for audit; throws index::NotFound.
  BusinessRule deactivate(const std::string& rule_id);
  std::vector<BusinessRule> list(bool include_inactive = false) const;
  std::optional<BusinessRule> get(const std::string& rule_id) const;

 private:
  void save_locked() const;

  std::filesystem::path file_;
  mutable std::mutex mu_;
  std::vector<BusinessRule> rules_;
  int next_number_ = 1;
};

enum class RuleScope { kSession, kGlobal };

index::ContextChunk rule_chunk(const BusinessRule& rule, const index::Embedder& embedder);
std::string rule_chunk_id(const std::string& rule_id);

// Session scope appends to the session (context-injected, never indexed).
// Global scope stores the rule and upserts it into every given index.
// Throws EmptyRule.
BusinessRule add_rule(RuleScope scope, std::string text, Session* session, RuleStore* store,
                      const std::vector<index::VectorIndex*>& indexes);

}  // namespace nlq::pipeline
