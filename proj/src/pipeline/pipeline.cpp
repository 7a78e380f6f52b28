#include "nlq/pipeline/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cstring>
#include <iomanip>
#include <regex>
#include <set>
#include <sstream>

#include "nlq/guard/sql_guard.hpp"

namespace nlq::pipeline {

namespace {

using Clock = std::chrono::steady_clock;

constexpr const char* kTruncationMarker = "\n[... truncated to fit the context budget]";

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string or_none(const std::string& s) { return s.empty() ? "(none)" : s; }

// Forwards to the real connection and records every statement it is given.
class AuditedConnection final : public db::Connection {
 public:
  AuditedConnection(db::Connection& inner, std::vector<DbCall>& log) : inner_(inner), log_(log) {}

  void tag(int iteration, std::string purpose) {
    iteration_ = iteration;
    purpose_ = std::move(purpose);
  }

  const db::ConnectionProfile& profile() const override { return inner_.profile(); }

  db::ExecResult execute(const std::string& sql, std::optional<std::int64_t> row_cap) override {
    auto result = inner_.execute(sql, row_cap);
    log_.push_back(DbCall{iteration_, purpose_, sql, result.has_value()});
    return result;
  }

  Expected<db::Catalog, db::ExecError> catalog() override { return inner_.catalog(); }

  void set_deadline(std::optional<Clock::time_point> deadline) override {
    inner_.set_deadline(deadline);
  }

 private:
  db::Connection& inner_;
  std::vector<DbCall>& log_;
  int iteration_ = 0;
  std::string purpose_;
};

class StageTimer {
 public:
  StageTimer(std::map<std::string, std::int64_t>& sink, std::string stage)
      : sink_(sink), stage_(std::move(stage)), start_(Clock::now()) {}
  ~StageTimer() {
    sink_[stage_] +=
        std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - start_).count();
  }

 private:
  std::map<std::string, std::int64_t>& sink_;
  std::string stage_;
  Clock::time_point start_;
};

struct DeadlineScope {
  db::Connection& conn;
  ~DeadlineScope() { conn.set_deadline(std::nullopt); }
};

std::string pad4(std::size_t n) {
  std::ostringstream ss;
  ss << std::setw(4) << std::setfill('0') << n;
  return ss.str();
}

std::string join_lines(const std::vector<std::string>& items, std::string_view prefix) {
  std::string out;
  for (const auto& item : items) {
    if (!out.empty()) out.push_back('\n');
    out += prefix;
    out += item;
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Intent

QueryIntent heuristic_intent(std::string_view question) {
  static const std::set<std::string> kStructureWords = {
      "table",  "tables",  "column", "columns", "schema",       "schemas",       "field",
      "fields", "structure", "foreign", "primary", "relationship", "relationships", "datatype",
      "datatypes"};
  for (const auto& token : index::tokenize(question)) {
    if (kStructureWords.count(token)) return QueryIntent::kStructureQuery;
  }
  return QueryIntent::kDataQuery;
}

IntentDecision classify_intent(const std::string& question, const Session& session,
                               llm::Gateway& gateway, const PipelineConfig& config) {
  if (trim(question).empty()) throw std::invalid_argument("question must not be empty");
  try {
    auto prompt = gateway.render(llm::TemplateId::kClassifyIntent,
                                 {{"question", question},
                                  {"history", render_history(session, config.max_history)}});
    auto completion = gateway.complete({llm::TemplateId::kClassifyIntent, prompt, 8, 0.0});
    std::string word;
    for (char c : completion.text) {
      if (std::isalpha(static_cast<unsigned char>(c))) {
        word.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
      } else if (!word.empty()) {
        break;
      }
    }
    if (word == "STRUCTURE") return {QueryIntent::kStructureQuery, IntentSource::kModel};
    if (word == "DATA") return {QueryIntent::kDataQuery, IntentSource::kModel};
  } catch (const std::exception&) {
    // Fall through to the keyword heuristic.
  }
  return {heuristic_intent(question), IntentSource::kFallback};
}

// ---------------------------------------------------------------------------
// Context

ContextBundle build_context(const std::string& question, const index::VectorIndex& index,
                            const std::vector<std::string>& session_rules, std::size_t k_tables,
                            std::size_t k_rules, std::size_t char_budget) {
  if (index.active_count(index::ChunkKind::kTableDoc) == 0) {
    throw EmptyIndex("the index holds no schema documents; scan the database first");
  }
  ContextBundle bundle;
  bundle.session_rules = session_rules;

  std::vector<std::string> rule_lines;
  for (const auto& r : session_rules) rule_lines.push_back(r);
  auto used = [&] {
    return bundle.rendered_schema.size() + join_lines(rule_lines, "- ").size();
  };

  auto schema_hits = index.search(question, std::max<std::size_t>(k_tables, 1),
                                  index::ChunkKind::kTableDoc);
  for (std::size_t i = 0; i < schema_hits.size(); ++i) {
    auto& hit = schema_hits[i];
    std::string piece = (bundle.rendered_schema.empty() ? "" : "\n") + hit.chunk.text;
    if (used() + piece.size() <= char_budget) {
      bundle.rendered_schema += piece;
      bundle.schema_hits.push_back(hit);
    } else if (i == 0) {
      std::size_t room = char_budget > used() + std::strlen(kTruncationMarker)
                             ? char_budget - used() - std::strlen(kTruncationMarker)
                             : 0;
      bundle.rendered_schema = hit.chunk.text.substr(0, room) + kTruncationMarker;
      bundle.top_schema_truncated = true;
      bundle.schema_hits.push_back(hit);
    } else {
      break;
    }
    if (i + 1 >= k_tables) break;
  }

  if (k_rules > 0) {
    for (auto& hit : index.search(question, k_rules, index::ChunkKind::kRule)) {
      auto candidate = rule_lines;
      candidate.push_back(hit.chunk.text);
      if (bundle.rendered_schema.size() + join_lines(candidate, "- ").size() > char_budget) break;
      rule_lines = std::move(candidate);
      bundle.rule_hits.push_back(std::move(hit));
    }
  }
  bundle.rendered_rules = join_lines(rule_lines, "- ");
  bundle.char_budget_used = bundle.rendered_schema.size() + bundle.rendered_rules.size();
  return bundle;
}

std::string render_history(const Session& session, std::size_t max_history) {
  if (session.turns.empty() || max_history == 0) return "(none)";
  std::size_t first = session.turns.size() > max_history ? session.turns.size() - max_history : 0;
  std::string out;
  for (std::size_t i = first; i < session.turns.size(); ++i) {
    const auto& t = session.turns[i];
    if (!out.empty()) out.push_back('\n');
    out += "User: " + t.question + "\nAssistant: " + t.answer.text + "\n";
    if (t.answer.sql) out += "SQL used: " + *t.answer.sql + "\n";
  }
  return out;
}

std::string render_table_text(const db::ResultTable& table, std::size_t max_rows) {
  if (table.columns.empty()) return "(no columns)";
  const std::size_t shown = std::min(max_rows, table.rows.size());
  std::vector<std::size_t> width(table.columns.size());
  std::vector<std::vector<std::string>> cells(shown);
  for (std::size_t c = 0; c < table.columns.size(); ++c) width[c] = table.columns[c].name.size();
  for (std::size_t r = 0; r < shown; ++r) {
    for (std::size_t c = 0; c < table.columns.size(); ++c) {
      auto text = db::cell_to_text(table.rows[r][c]);
      std::replace(text.begin(), text.end(), '\n', ' ');
      width[c] = std::max(width[c], text.size());
      cells[r].push_back(std::move(text));
    }
  }
  auto line = [&](const std::vector<std::string>& values) {
    std::string out;
    for (std::size_t c = 0; c < values.size(); ++c) {
      if (c) out += " | ";
      out += values[c];
      if (c + 1 < values.size()) out.append(width[c] - values[c].size(), ' ');
    }
    return out;
  };
  std::vector<std::string> header;
  for (const auto& col : table.columns) header.push_back(col.name);
  std::string out = line(header) + "\n";
  std::size_t total = 0;
  for (auto w : width) total += w;
  out.append(total + 3 * (width.size() - 1), '-');
  out.push_back('\n');
  for (const auto& row : cells) out += line(row) + "\n";
  if (shown == 0) out += "(0 rows)\n";
  return out;
}

// ---------------------------------------------------------------------------
// Generation, validation, refinement

namespace {

llm::Bindings sql_bindings(const std::string& question, const ContextBundle& bundle,
                           const std::string& history, const PipelineConfig& config) {
  return {{"question", question},
          {"schema", bundle.rendered_schema},
          {"rules", or_none(bundle.rendered_rules)},
          {"history", history},
          {"dialect", config.dialect}};
}

GeneratedSql complete_and_extract(llm::TemplateId id, const llm::Bindings& bindings,
                                  llm::Gateway& gateway, const PipelineConfig& config) {
  std::string text;
  try {
    auto prompt = gateway.render(id, bindings);
    text = gateway.complete({id, prompt, config.max_output_tokens, 0.0}).text;
  } catch (const std::exception& e) {
    return unexpected(GenerationFailure{std::string("model call failed: ") + e.what(), ""});
  }
  auto sql = llm::extract_sql(text);
  if (!sql) {
    return unexpected(GenerationFailure{sql.error().message + "; model output: " + trim(text), text});
  }
  return std::move(sql).value();
}

}  // namespace

GeneratedSql generate_sql(const std::string& question, const ContextBundle& bundle,
                          llm::Gateway& gateway, const std::string& history,
                          const PipelineConfig& config) {
  return complete_and_extract(llm::TemplateId::kGenerateSql,
                              sql_bindings(question, bundle, history, config), gateway, config);
}

ValidationOutcome validate(const std::string& candidate_sql, const std::string& question,
                           const ContextBundle& bundle, db::Connection& conn,
                           llm::Gateway& gateway, const PipelineConfig& config) {
  ValidationOutcome out;

  auto verdict = guard::guard_check(candidate_sql);
  if (!verdict.ok()) {
    out.status = ValidationStatus::kGuardFail;
    out.detail = std::string(guard::to_string(verdict.status)) + ": " + verdict.detail;
    out.checks.push_back({"guard", false, out.detail});
    return out;
  }
  out.checks.push_back({"guard", true, "ok"});

  auto sample = guard::dry_run(conn, candidate_sql, config.probe_row_cap);
  if (!sample) {
    out.status = ValidationStatus::kExecFail;
    out.detail = sample.error().message;
    out.checks.push_back({"dry_run", false, out.detail});
    return out;
  }
  out.checks.push_back(
      {"dry_run", true, std::to_string(sample->rows.size()) + " sample row(s)"});

  std::string critique;
  llm::Verdict decision = llm::Verdict::kFail;
  try {
    auto prompt = gateway.render(
        llm::TemplateId::kIntrospect,
        {{"question", question},
         {"rules", or_none(bundle.rendered_rules)},
         {"sql", candidate_sql},
         {"sample_rows", render_table_text(*sample, static_cast<std::size_t>(config.probe_row_cap))}});
    auto completion =
        gateway.complete({llm::TemplateId::kIntrospect, prompt, config.max_output_tokens, 0.0});
    auto parsed = llm::extract_verdict(completion.text);
    decision = parsed.verdict;
    critique = parsed.critique;
  } catch (const std::exception& e) {
    critique = std::string("introspection unavailable: ") + e.what();
  }
  if (decision == llm::Verdict::kFail) {
    out.status = ValidationStatus::kSemanticFail;
    out.detail = critique.empty() ? "introspection rejected the query" : critique;
    out.checks.push_back({"introspect", false, out.detail});
    return out;
  }
  out.status = ValidationStatus::kPass;
  out.detail = critique;
  out.sample_rows = std::move(sample).value();
  out.checks.push_back({"introspect", true, critique.empty() ? "PASS" : critique});
  return out;
}

GeneratedSql refine(const SqlCandidate& prior, const std::string& question,
                    const ContextBundle& bundle, llm::Gateway& gateway, const std::string& history,
                    const PipelineConfig& config) {
  if (prior.outcome.status == ValidationStatus::kPass) {
    throw PreconditionViolation("refine called on a candidate that passed validation");
  }
  auto bindings = sql_bindings(question, bundle, history, config);
  bindings["sql"] = or_none(prior.sql);
  bindings["error"] = std::string(to_string(prior.outcome.status)) + ": " + prior.outcome.detail;
  return complete_and_extract(llm::TemplateId::kRefineSql, bindings, gateway, config);
}

// ---------------------------------------------------------------------------
// Answers

std::pair<std::string, std::optional<ChartSpec>> split_chart_directive(
    const std::string& answer_text, const db::ResultTable& table) {
  static const std::regex kDirective(
      R"(^\s*CHART\s*:\s*(bar|line)\s*,\s*x\s*=\s*([^,]+?)\s*,\s*y\s*=\s*(.+?)\s*$)",
      std::regex::icase);
  static const std::regex kDirectivePrefix(R"(^\s*CHART\s*:)", std::regex::icase);

  std::optional<ChartSpec> chart;
  std::string kept;
  std::istringstream in(answer_text);
  std::string line;
  while (std::getline(in, line)) {
    if (!std::regex_search(line, kDirectivePrefix)) {
      kept += line;
      kept.push_back('\n');
      continue;
    }
    std::smatch m;
    if (chart || !std::regex_match(line, m, kDirective)) continue;
    ChartSpec spec;
    spec.kind = std::tolower(static_cast<unsigned char>(m[1].str()[0])) == 'b' ? ChartKind::kBar
                                                                                : ChartKind::kLine;
    spec.x_column = m[2].str();
    spec.y_column = m[3].str();
    auto has = [&](const std::string& name) {
      return std::any_of(table.columns.begin(), table.columns.end(),
                         [&](const auto& c) { return c.name == name; });
    };
    if (has(spec.x_column) && has(spec.y_column)) chart = spec;
  }
  return {trim(kept), chart};
}

DataAnswer answer_data(const std::string& question, const std::string& sql, db::Connection& conn,
                       llm::Gateway& gateway, const std::string& history,
                       const PipelineConfig& config) {
  DataAnswer out;
  out.envelope.sql = sql;
  auto full = conn.execute(sql, config.full_row_cap);
  if (!full) {
    out.failure_detail = full.error().message;
    out.envelope.text =
        "The query passed validation but retrieving the full result failed: " + out.failure_detail;
    return out;
  }
  const auto& table = full.value();
  std::string note;
  if (table.rows.size() > config.rows_in_prompt || table.truncated) {
    note = "Note: the result above shows " +
           std::to_string(std::min(config.rows_in_prompt, table.rows.size())) + " of " +
           std::to_string(table.rows.size()) + " retrieved rows";
    if (table.truncated) {
      note += "; retrieval stopped at the cap of " + std::to_string(config.full_row_cap) + " rows";
    }
    note += ".";
  }
  std::string text;
  try {
    auto prompt = gateway.render(llm::TemplateId::kAnswer,
                                 {{"history", history},
                                  {"question", question},
                                  {"context_kind", "result"},
                                  {"context", render_table_text(table, config.rows_in_prompt)},
                                  {"note", note}});
    text = gateway.complete({llm::TemplateId::kAnswer, prompt, config.max_output_tokens, 0.0}).text;
  } catch (const std::exception& e) {
    text = "Retrieved " + std::to_string(table.rows.size()) +
           " row(s); a written answer could not be generated (" + e.what() + ").";
  }
  auto [shown, chart] = split_chart_directive(text, table);
  out.envelope.text = std::move(shown);
  out.envelope.chart = chart;
  out.envelope.table = std::move(full).value();
  out.ok = true;
  return out;
}

AnswerEnvelope answer_structure(const std::string& question,
                                const schema::SchemaSnapshot& snapshot, llm::Gateway& gateway,
                                const std::string& history, const PipelineConfig& config) {
  std::string context;
  for (const auto& t : snapshot.tables) {
    if (!context.empty()) context.push_back('\n');
    context += schema::render_table_doc(t);
  }
  if (context.empty()) context = "(the database has no tables)";
  AnswerEnvelope env;
  try {
    auto prompt = gateway.render(llm::TemplateId::kAnswer, {{"history", history},
                                                            {"question", question},
                                                            {"context_kind", "schema"},
                                                            {"context", context},
                                                            {"note", ""}});
    env.text = trim(
        gateway.complete({llm::TemplateId::kAnswer, prompt, config.max_output_tokens, 0.0}).text);
  } catch (const std::exception&) {
    std::vector<std::string> names;
    for (const auto& t : snapshot.tables) names.push_back(t.name);
    env.text = names.empty() ? "The database has no tables."
                             : "The database has these tables: " + join_lines(names, "") + ".";
    std::replace(env.text.begin(), env.text.end(), '\n', ' ');
  }
  return env;
}

// ---------------------------------------------------------------------------
// Orchestration

std::pair<AnswerEnvelope, PipelineTrace> ask(Session& session, const std::string& question,
                                             const PipelineDeps& deps) {
  const auto& config = deps.config;
  PipelineTrace trace;
  trace.trace_id = session.session_id + "-t" + pad4(session.turns.size() + 1);
  trace.session_id = session.session_id;
  trace.question = question;
  trace.started_at = schema::utc_now_iso8601();

  std::optional<Clock::time_point> deadline;
  if (config.ask_timeout) deadline = Clock::now() + *config.ask_timeout;
  deps.conn.set_deadline(deadline);
  DeadlineScope reset_deadline{deps.conn};
  auto expired = [&] { return deadline && Clock::now() >= *deadline; };

  AuditedConnection conn(deps.conn, trace.db_calls);
  for (const auto& r : session.session_rules) {
    if (r.active) trace.session_rules.push_back(r.text);
  }
  const std::string history = render_history(session, config.max_history);
  AnswerEnvelope envelope;

  auto finish = [&]() -> std::pair<AnswerEnvelope, PipelineTrace> {
    envelope.trace_id = trace.trace_id;
    session.turns.push_back(Turn{question, envelope});
    return {envelope, trace};
  };

  {
    StageTimer timer(trace.timings_ms, "classify");
    auto decision = classify_intent(question, session, deps.gateway, config);
    trace.intent = decision.intent;
    trace.intent_source = decision.source;
  }

  if (trace.intent == QueryIntent::kStructureQuery) {
    StageTimer timer(trace.timings_ms, "answer");
    envelope = answer_structure(question, deps.snapshot, deps.gateway, history, config);
    trace.final_status = FinalStatus::kStructureAnswered;
    return finish();
  }

  ContextBundle bundle;
  try {
    StageTimer timer(trace.timings_ms, "context");
    bundle = build_context(question, deps.index, trace.session_rules, config.k_tables,
                           config.k_rules, config.char_budget);
    for (const auto* hits : {&bundle.schema_hits, &bundle.rule_hits}) {
      for (const auto& h : *hits) {
        trace.context.push_back({h.chunk.id, h.chunk.kind, h.chunk.source_ref, h.score});
      }
    }
  } catch (const EmptyIndex& e) {
    SqlCandidate c{1, "", {ValidationStatus::kGuardFail, e.what(), std::nullopt, {}}};
    c.outcome.checks.push_back({"extract", false, e.what()});
    trace.candidates.push_back(std::move(c));
  }

  std::string failure;
  if (trace.candidates.empty()) {
    for (int iteration = 1; iteration <= config.max_iterations; ++iteration) {
      if (expired()) {
        failure = "the question timed out before a query could be validated";
        if (trace.candidates.empty()) {
          SqlCandidate c{iteration, "", {ValidationStatus::kGuardFail, failure, std::nullopt, {}}};
          c.outcome.checks.push_back({"extract", false, failure});
          trace.candidates.push_back(std::move(c));
        }
        break;
      }
      GeneratedSql sql = [&] {
        StageTimer timer(trace.timings_ms, iteration == 1 ? "generate" : "refine");
        return iteration == 1 ? generate_sql(question, bundle, deps.gateway, history, config)
                              : refine(trace.candidates.back(), question, bundle, deps.gateway,
                                       history, config);
      }();

      SqlCandidate candidate;
      candidate.iteration = iteration;
      if (!sql) {
        candidate.outcome.status = ValidationStatus::kGuardFail;
        candidate.outcome.detail = sql.error().detail;
        candidate.outcome.checks.push_back({"extract", false, sql.error().detail});
      } else {
        candidate.sql = sql.value();
        candidate.outcome.checks.push_back({"extract", true, "ok"});
        StageTimer timer(trace.timings_ms, "validate");
        conn.tag(iteration, "probe");
        auto outcome = validate(candidate.sql, question, bundle, conn, deps.gateway, config);
        outcome.checks.insert(outcome.checks.begin(), candidate.outcome.checks.begin(),
                              candidate.outcome.checks.end());
        candidate.outcome = std::move(outcome);
      }
      trace.candidates.push_back(candidate);
      if (candidate.outcome.status != ValidationStatus::kPass) continue;

      StageTimer timer(trace.timings_ms, "answer");
      conn.tag(iteration, "full");
      auto answer = answer_data(question, candidate.sql, conn, deps.gateway, history, config);
      envelope = std::move(answer.envelope);
      if (answer.ok) {
        trace.final_status = FinalStatus::kAnswered;
        return finish();
      }
      trace.final_status = FinalStatus::kExhausted;
      trace.failure_detail = answer.failure_detail;
      return finish();
    }
  }

  if (failure.empty() && !trace.candidates.empty()) {
    failure = trace.candidates.back().outcome.detail;
  }
  trace.final_status = FinalStatus::kExhausted;
  trace.failure_detail = failure;
  envelope = AnswerEnvelope{};
  envelope.text = "Sorry, I could not produce a validated query for this question after " +
                  std::to_string(trace.candidates.size()) +
                  " attempt(s). The last problem was: " + failure;
  return finish();
}

}  // namespace nlq::pipeline
