#include "nlq/service/service.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

#include "nlq/util/files.hpp"

namespace nlq::service {

namespace fs = std::filesystem;
using nlohmann::json;

struct Service::DbState {
  db::ConnectionProfile profile;
  std::unique_ptr<index::VectorIndex> index;
  std::optional<schema::SchemaSnapshot> snapshot;
  fs::path snapshot_file;
  fs::path index_file;
  // Shared by asks and rule writes, exclusive for a scan.
  mutable std::shared_mutex mu;
};

struct Service::SessionEntry {
  std::string session_id;
  std::string database;
  std::string created_at;
  std::mutex in_flight;
  mutable std::mutex data_mu;
  std::vector<pipeline::Turn> turns;
  std::vector<pipeline::BusinessRule> session_rules;
};

namespace {

ServiceError not_found(const std::string& code, const std::string& message) {
  return ServiceError(404, code, message);
}

bool blank(const std::string& s) { return s.find_first_not_of(" \t\r\n") == std::string::npos; }

int session_number(const std::string& id) {
  if (id.rfind("sess-", 0) != 0) return 0;
  try {
    return std::stoi(id.substr(5));
  } catch (const std::exception&) {
    return 0;
  }
}

}  // namespace

json to_json(const ScanSummary& s) {
  return {{"database", s.database},
          {"tables", s.tables},
          {"table_count", s.tables.size()},
          {"column_count", s.column_count},
          {"foreign_key_count", s.foreign_key_count},
          {"scanned_at", s.scanned_at}};
}

Service::Service(ServiceConfig config, std::shared_ptr<llm::Backend> backend,
                 std::shared_ptr<index::Embedder> embedder)
    : config_(std::move(config)), storage_(config_.storage_dir), embedder_(std::move(embedder)) {
  if (config_.databases.empty()) throw ConfigError("at least one database profile is required");
  try {
    fs::create_directories(storage_ / "snapshots");
    fs::create_directories(storage_ / "index");
    util::write_file_atomic(storage_ / ".write_check", "ok\n");
    fs::remove(storage_ / ".write_check");
  } catch (const std::exception& e) {
    throw ConfigError("storage_dir is not writable: " + storage_.string() + " (" + e.what() + ")");
  }
  if (!embedder_) embedder_ = make_embedder(config_.embedder, storage_ / "embedding_cache.json");
  auto prompt_dir = config_.llm.prompt_dir.empty() ? llm::default_prompt_dir() : config_.llm.prompt_dir;
  gateway_ = std::make_unique<llm::Gateway>(std::move(backend), llm::PromptTemplates::load(prompt_dir),
                                            config_.llm.requests_per_minute);
  rules_ = std::make_unique<pipeline::RuleStore>(storage_ / "rules.json");

  for (const auto& profile : config_.databases) {
    auto st = std::make_unique<DbState>();
    st->profile = profile;
    st->snapshot_file = storage_ / "snapshots" / (profile.name + ".json");
    st->index_file = storage_ / "index" / (profile.name + ".jsonl");
    st->index = std::make_unique<index::VectorIndex>(embedder_);
    if (fs::exists(st->snapshot_file)) {
      st->snapshot = schema::snapshot_from_json(json::parse(util::read_file(st->snapshot_file)));
    }
    bool loaded = false;
    if (fs::exists(st->index_file)) {
      try {
        st->index->load(st->index_file);
        loaded = true;
      } catch (const std::exception&) {
        // Stale or foreign index file: rebuilt below from the snapshot.
      }
    }
    if (!loaded && st->snapshot) {
      for (auto& c : schema::render_chunks(*st->snapshot, *embedder_)) st->index->upsert(std::move(c));
    }
    // Bring rule chunks in line with the rule store.
    for (const auto& rule : rules_->list(true)) {
      auto id = pipeline::rule_chunk_id(rule.rule_id);
      if (rule.active) {
        auto existing = st->index->get(id);
        if (!existing || !existing->active || existing->text != rule.text) {
          st->index->upsert(pipeline::rule_chunk(rule, *embedder_));
        }
      } else if (auto existing = st->index->get(id); existing && existing->active) {
        st->index->deactivate(id);
      }
    }
    st->index->save(st->index_file);
    dbs_.emplace(profile.name, std::move(st));
  }
  restore_sessions();
}

Service::~Service() = default;

Service::DbState& Service::db_state(const std::string& database) const {
  auto it = dbs_.find(database);
  if (it == dbs_.end()) throw not_found("unknown_database", "no database named '" + database + "'");
  return *it->second;
}

Service::SessionEntry& Service::session_entry(const std::string& session_id) const {
  std::lock_guard lock(sessions_mu_);
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw not_found("unknown_session", "no session '" + session_id + "'");
  return *it->second;
}

void Service::log(const json& record) {
  std::lock_guard lock(log_mu_);
  util::append_line_durable(storage_ / "sessions.jsonl", record.dump());
}

void Service::restore_sessions() {
  auto file = storage_ / "sessions.jsonl";
  if (!fs::exists(file)) return;
  for (const auto& line : util::read_lines(file)) {
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception&) {
      continue;
    }
    auto type = rec.value("type", "");
    auto id = rec.value("session_id", "");
    if (type == "session") {
      auto e = std::make_unique<SessionEntry>();
      e->session_id = id;
      e->database = rec.value("database", "");
      e->created_at = rec.value("created_at", "");
      next_session_ = std::max(next_session_, session_number(id) + 1);
      sessions_[id] = std::move(e);
      continue;
    }
    auto it = sessions_.find(id);
    if (it == sessions_.end()) continue;
    if (type == "turn") {
      pipeline::Turn turn{rec.at("question").get<std::string>(), pipeline::envelope_from_json(rec.at("answer"))};
      it->second->turns.push_back(std::move(turn));
      if (rec.contains("trace")) {
        auto trace = pipeline::trace_from_json(rec.at("trace"));
        traces_[trace.trace_id] = std::move(trace);
      }
    } else if (type == "session_rule") {
      it->second->session_rules.push_back(pipeline::rule_from_json(rec.at("rule")));
    }
  }
}

std::string Service::create_session(const std::string& database) {
  db_state(database);
  std::lock_guard lock(sessions_mu_);
  std::ostringstream id;
  id << "sess-" << std::setw(4) << std::setfill('0') << next_session_++;
  auto e = std::make_unique<SessionEntry>();
  e->session_id = id.str();
  e->database = database;
  e->created_at = schema::utc_now_iso8601();
  log({{"type", "session"}, {"session_id", e->session_id}, {"database", database}, {"created_at", e->created_at}});
  sessions_[e->session_id] = std::move(e);
  return id.str();
}

std::vector<std::string> Service::session_ids() const {
  std::lock_guard lock(sessions_mu_);
  std::vector<std::string> out;
  for (const auto& [id, e] : sessions_) out.push_back(id);
  return out;
}

std::pair<pipeline::AnswerEnvelope, pipeline::PipelineTrace> Service::ask(const std::string& session_id,
                                                                          const std::string& question) {
  auto& entry = session_entry(session_id);
  if (blank(question)) throw ServiceError(422, "empty_question", "question must not be empty");
  std::unique_lock busy(entry.in_flight, std::try_to_lock);
  if (!busy.owns_lock()) {
    throw ServiceError(409, "session_busy", "an ask is already running for session '" + session_id + "'");
  }
  auto& st = db_state(entry.database);

  std::shared_lock read(st.mu);
  if (!st.snapshot) {
    read.unlock();
    {
      std::unique_lock write(st.mu);
      if (!st.snapshot) scan_locked(st);
    }
    read.lock();
  }

  std::unique_ptr<db::Connection> conn;
  try {
    conn = db::connect(st.profile);
  } catch (const db::ConnectFailure& e) {
    throw ServiceError(502, "database_unavailable", e.what());
  }

  pipeline::Session work;
  work.session_id = entry.session_id;
  work.database = entry.database;
  {
    std::lock_guard lock(entry.data_mu);
    work.turns = entry.turns;
    work.session_rules = entry.session_rules;
  }
  pipeline::PipelineDeps deps{*conn, *st.index, *st.snapshot, *gateway_, config_.pipeline};
  std::pair<pipeline::AnswerEnvelope, pipeline::PipelineTrace> result;
  {
    std::lock_guard lock(work.in_flight);
    result = pipeline::ask(work, question, deps);
  }
  read.unlock();

  const auto& [envelope, trace] = result;
  log({{"type", "turn"},
       {"session_id", session_id},
       {"question", question},
       {"answer", pipeline::to_json(envelope)},
       {"trace", pipeline::to_json(trace)}});
  {
    std::lock_guard lock(entry.data_mu);
    entry.turns.push_back({question, envelope});
  }
  {
    std::lock_guard lock(traces_mu_);
    traces_[trace.trace_id] = trace;
  }
  return result;
}

json Service::session_json(const std::string& session_id) const {
  auto& e = session_entry(session_id);
  std::lock_guard lock(e.data_mu);
  json turns = json::array();
  for (const auto& t : e.turns) turns.push_back({{"question", t.question}, {"answer", pipeline::to_json(t.answer)}});
  json rules = json::array();
  for (const auto& r : e.session_rules) rules.push_back(pipeline::to_json(r));
  return {{"session_id", e.session_id},
          {"database", e.database},
          {"created_at", e.created_at},
          {"turns", turns},
          {"session_rules", rules}};
}

json Service::trace_json(const std::string& trace_id) const {
  std::lock_guard lock(traces_mu_);
  auto it = traces_.find(trace_id);
  if (it == traces_.end()) throw not_found("unknown_trace", "no trace '" + trace_id + "'");
  return pipeline::to_json(it->second);
}

void Service::save_index(DbState& state) { state.index->save(state.index_file); }

pipeline::BusinessRule Service::add_rule(const std::string& text, pipeline::RuleScope scope,
                                         const std::optional<std::string>& session_id) {
  if (blank(text)) throw ServiceError(422, "empty_rule", "rule text must not be empty");
  if (scope == pipeline::RuleScope::kSession) {
    if (!session_id) throw ServiceError(422, "missing_session", "session-scoped rules need a session_id");
    auto& e = session_entry(*session_id);
    std::lock_guard lock(e.data_mu);
    pipeline::Session tmp;
    tmp.session_rules = e.session_rules;
    auto rule = pipeline::add_rule(scope, text, &tmp, nullptr, {});
    log({{"type", "session_rule"}, {"session_id", *session_id}, {"rule", pipeline::to_json(rule)}});
    e.session_rules.push_back(rule);
    return rule;
  }

  std::lock_guard rules_lock(rules_mu_);
  std::vector<std::shared_lock<std::shared_mutex>> held;
  std::vector<index::VectorIndex*> indexes;
  for (auto& [name, st] : dbs_) {
    held.emplace_back(st->mu);
    indexes.push_back(st->index.get());
  }
  auto rule = pipeline::add_rule(scope, text, nullptr, rules_.get(), indexes);
  for (auto& [name, st] : dbs_) save_index(*st);
  return rule;
}

std::vector<pipeline::BusinessRule> Service::list_rules(bool include_inactive) const {
  return rules_->list(include_inactive);
}

pipeline::BusinessRule Service::delete_rule(const std::string& rule_id) {
  std::lock_guard rules_lock(rules_mu_);
  pipeline::BusinessRule rule;
  try {
    rule = rules_->deactivate(rule_id);
  } catch (const index::NotFound&) {
    throw not_found("unknown_rule", "no active rule '" + rule_id + "'");
  }
  auto chunk_id = pipeline::rule_chunk_id(rule_id);
  for (auto& [name, st] : dbs_) {
    std::shared_lock lock(st->mu);
    if (auto c = st->index->get(chunk_id); c && c->active) st->index->deactivate(chunk_id);
    save_index(*st);
  }
  return rule;
}

ScanSummary Service::scan_locked(DbState& st) {
  std::unique_ptr<db::Connection> conn;
  try {
    conn = db::connect(st.profile);
  } catch (const db::ConnectFailure& e) {
    throw ServiceError(502, "scan_failed", e.what());
  }
  schema::SchemaSnapshot snap;
  try {
    snap = schema::scan(*conn, config_.scan);
  } catch (const schema::ScanError& e) {
    throw ServiceError(502, "scan_failed", e.what());
  }
  st.index->remove_if([](const index::ContextChunk& c) { return c.kind == index::ChunkKind::kTableDoc; });
  for (auto& c : schema::render_chunks(snap, *embedder_)) st.index->upsert(std::move(c));
  util::write_file_atomic(st.snapshot_file, schema::to_json(snap).dump(2) + "\n");
  save_index(st);

  ScanSummary s;
  s.database = st.profile.name;
  for (const auto& t : snap.tables) {
    s.tables.push_back(t.name);
    s.column_count += t.columns.size();
    s.foreign_key_count += t.foreign_keys.size();
  }
  s.scanned_at = snap.scanned_at;
  st.snapshot = std::move(snap);
  return s;
}

ScanSummary Service::scan(const std::string& database) {
  auto& st = db_state(database);
  std::unique_lock lock(st.mu);
  return scan_locked(st);
}

schema::SchemaSnapshot Service::schema(const std::string& database) const {
  auto& st = db_state(database);
  std::shared_lock lock(st.mu);
  if (!st.snapshot) throw not_found("not_scanned", "database '" + database + "' has not been scanned");
  return *st.snapshot;
}

std::size_t Service::active_chunks(const std::string& database, index::ChunkKind kind) const {
  auto& st = db_state(database);
  std::shared_lock lock(st.mu);
  return st.index->active_count(kind);
}

}  // namespace nlq::service
