#include <stdexcept>

#include "nlq/pipeline/types.hpp"

namespace nlq::pipeline {

using nlohmann::json;

const char* to_string(QueryIntent intent) {
  return intent == QueryIntent::kStructureQuery ? "structure_query" : "data_query";
}

const char* to_string(IntentSource source) {
  return source == IntentSource::kModel ? "model" : "fallback";
}

const char* to_string(ValidationStatus status) {
  switch (status) {
    case ValidationStatus::kPass: return "pass";
    case ValidationStatus::kGuardFail: return "guard_fail";
    case ValidationStatus::kExecFail: return "exec_fail";
    case ValidationStatus::kSemanticFail: return "semantic_fail";
  }
  return "?";
}

const char* to_string(FinalStatus status) {
  switch (status) {
    case FinalStatus::kAnswered: return "answered";
    case FinalStatus::kExhausted: return "exhausted";
    case FinalStatus::kStructureAnswered: return "structure_answered";
  }
  return "?";
}

namespace {

template <class Enum, std::size_t N>
Enum parse_enum(const std::string& text, const Enum (&values)[N], const char* what) {
  for (auto v : values) {
    if (text == to_string(v)) return v;
  }
  throw std::invalid_argument(std::string("unknown ") + what + " '" + text + "'");
}

constexpr QueryIntent kIntents[] = {QueryIntent::kStructureQuery, QueryIntent::kDataQuery};
constexpr IntentSource kSources[] = {IntentSource::kModel, IntentSource::kFallback};
constexpr ValidationStatus kStatuses[] = {ValidationStatus::kPass, ValidationStatus::kGuardFail,
                                          ValidationStatus::kExecFail,
                                          ValidationStatus::kSemanticFail};
constexpr FinalStatus kFinal[] = {FinalStatus::kAnswered, FinalStatus::kExhausted,
                                  FinalStatus::kStructureAnswered};

json cell_to_json(const db::Cell& cell) {
  struct Visitor {
    json operator()(std::monostate) const { return nullptr; }
    json operator()(std::int64_t v) const { return v; }
    json operator()(double v) const { return v; }
    json operator()(const std::string& v) const { return v; }
    json operator()(const db::BlobHex& v) const { return json{{"blob_hex", v.hex}}; }
  };
  return std::visit(Visitor{}, cell);
}

db::Cell cell_from_json(const json& j) {
  if (j.is_null()) return std::monostate{};
  if (j.is_number_integer()) return j.get<std::int64_t>();
  if (j.is_number_float()) return j.get<double>();
  if (j.is_string()) return j.get<std::string>();
  if (j.is_object() && j.contains("blob_hex")) return db::BlobHex{j.at("blob_hex").get<std::string>()};
  throw std::invalid_argument("unsupported cell JSON: " + j.dump());
}

json candidate_to_json(const SqlCandidate& c) {
  json checks = json::array();
  for (const auto& ck : c.outcome.checks) {
    checks.push_back({{"stage", ck.stage}, {"ok", ck.ok}, {"detail", ck.detail}});
  }
  return {{"iteration", c.iteration},
          {"sql", c.sql},
          {"status", to_string(c.outcome.status)},
          {"detail", c.outcome.detail},
          {"checks", checks},
          {"sample_rows", c.outcome.sample_rows ? to_json(*c.outcome.sample_rows) : json(nullptr)}};
}

SqlCandidate candidate_from_json(const json& j) {
  SqlCandidate c;
  c.iteration = j.at("iteration").get<int>();
  c.sql = j.at("sql").get<std::string>();
  c.outcome.status = parse_enum(j.at("status").get<std::string>(), kStatuses, "status");
  c.outcome.detail = j.at("detail").get<std::string>();
  for (const auto& ck : j.at("checks")) {
    c.outcome.checks.push_back(
        {ck.at("stage").get<std::string>(), ck.at("ok").get<bool>(), ck.at("detail").get<std::string>()});
  }
  if (!j.at("sample_rows").is_null()) c.outcome.sample_rows = table_from_json(j.at("sample_rows"));
  return c;
}

}  // namespace

json to_json(const db::ResultTable& table) {
  json cols = json::array();
  for (const auto& c : table.columns) cols.push_back({{"name", c.name}, {"declared_type", c.declared_type}});
  json rows = json::array();
  for (const auto& r : table.rows) {
    json row = json::array();
    for (const auto& cell : r) row.push_back(cell_to_json(cell));
    rows.push_back(std::move(row));
  }
  return {{"columns", cols}, {"rows", rows}, {"truncated", table.truncated}};
}

db::ResultTable table_from_json(const json& doc) {
  db::ResultTable t;
  for (const auto& c : doc.at("columns")) {
    t.columns.push_back({c.at("name").get<std::string>(), c.value("declared_type", std::string())});
  }
  for (const auto& r : doc.at("rows")) {
    std::vector<db::Cell> row;
    for (const auto& cell : r) row.push_back(cell_from_json(cell));
    if (row.size() != t.columns.size()) throw std::invalid_argument("row width differs from column count");
    t.rows.push_back(std::move(row));
  }
  t.truncated = doc.value("truncated", false);
  return t;
}

json to_json(const AnswerEnvelope& e) {
  json chart = nullptr;
  if (e.chart) {
    chart = {{"kind", e.chart->kind == ChartKind::kBar ? "bar" : "line"},
             {"x_column", e.chart->x_column},
             {"y_column", e.chart->y_column}};
  }
  return {{"text", e.text},
          {"table", e.table ? to_json(*e.table) : json(nullptr)},
          {"chart", chart},
          {"sql", e.sql ? json(*e.sql) : json(nullptr)},
          {"trace_id", e.trace_id}};
}

AnswerEnvelope envelope_from_json(const json& doc) {
  AnswerEnvelope e;
  e.text = doc.at("text").get<std::string>();
  if (!doc.at("table").is_null()) e.table = table_from_json(doc.at("table"));
  if (!doc.at("chart").is_null()) {
    const auto& c = doc.at("chart");
    e.chart = ChartSpec{c.at("kind").get<std::string>() == "bar" ? ChartKind::kBar : ChartKind::kLine,
                        c.at("x_column").get<std::string>(), c.at("y_column").get<std::string>()};
  }
  if (!doc.at("sql").is_null()) e.sql = doc.at("sql").get<std::string>();
  e.trace_id = doc.at("trace_id").get<std::string>();
  return e;
}

json to_json(const PipelineTrace& t) {
  json context = json::array();
  for (const auto& c : t.context) {
    context.push_back({{"id", c.id},
                       {"kind", index::to_string(c.kind)},
                       {"source_ref", c.source_ref},
                       {"score", c.score}});
  }
  json candidates = json::array();
  for (const auto& c : t.candidates) candidates.push_back(candidate_to_json(c));
  json calls = json::array();
  for (const auto& c : t.db_calls) {
    calls.push_back({{"iteration", c.iteration}, {"purpose", c.purpose}, {"sql", c.sql}, {"ok", c.ok}});
  }
  return {{"trace_id", t.trace_id},
          {"session_id", t.session_id},
          {"question", t.question},
          {"intent", to_string(t.intent)},
          {"intent_source", to_string(t.intent_source)},
          {"context", context},
          {"session_rules", t.session_rules},
          {"candidates", candidates},
          {"db_calls", calls},
          {"final_status", to_string(t.final_status)},
          {"failure_detail", t.failure_detail},
          {"started_at", t.started_at},
          {"timings_ms", t.timings_ms}};
}

PipelineTrace trace_from_json(const json& doc) {
  PipelineTrace t;
  t.trace_id = doc.at("trace_id").get<std::string>();
  t.session_id = doc.at("session_id").get<std::string>();
  t.question = doc.at("question").get<std::string>();
  t.intent = parse_enum(doc.at("intent").get<std::string>(), kIntents, "intent");
  t.intent_source = parse_enum(doc.at("intent_source").get<std::string>(), kSources, "intent source");
  for (const auto& c : doc.at("context")) {
    auto kind = index::parse_chunk_kind(c.at("kind").get<std::string>());
    if (!kind) throw std::invalid_argument("bad context kind");
    t.context.push_back({c.at("id").get<std::string>(), *kind, c.at("source_ref").get<std::string>(),
                         c.at("score").get<double>()});
  }
  t.session_rules = doc.at("session_rules").get<std::vector<std::string>>();
  for (const auto& c : doc.at("candidates")) t.candidates.push_back(candidate_from_json(c));
  for (const auto& c : doc.at("db_calls")) {
    t.db_calls.push_back({c.at("iteration").get<int>(), c.at("purpose").get<std::string>(),
                          c.at("sql").get<std::string>(), c.at("ok").get<bool>()});
  }
  t.final_status = parse_enum(doc.at("final_status").get<std::string>(), kFinal, "final status");
  t.failure_detail = doc.at("failure_detail").get<std::string>();
  t.started_at = doc.value("started_at", std::string());
  if (doc.contains("timings_ms")) t.timings_ms = doc.at("timings_ms").get<std::map<std::string, std::int64_t>>();
  return t;
}

json to_json(const BusinessRule& r) {
  return {{"rule_id", r.rule_id},     {"text", r.text},           {"tags", r.tags},
          {"created_at", r.created_at}, {"updated_at", r.updated_at}, {"active", r.active}};
}

BusinessRule rule_from_json(const json& doc) {
  BusinessRule r;
  r.rule_id = doc.at("rule_id").get<std::string>();
  r.text = doc.at("text").get<std::string>();
  r.tags = doc.value("tags", std::vector<std::string>{});
  r.created_at = doc.value("created_at", std::string());
  r.updated_at = doc.value("updated_at", r.created_at);
  r.active = doc.value("active", true);
  return r;
}

json strip_volatile(json trace_json) {
  trace_json.erase("started_at");
  trace_json.erase("timings_ms");
  return trace_json;
}

}  // namespace nlq::pipeline
