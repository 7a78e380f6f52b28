#include <gtest/gtest.h>

#include <future>
#include <thread>

#include <httplib.h>

#include "fixtures.hpp"
#include "nlq/service/http_api.hpp"
#include "nlq/util/files.hpp"
#include "shop_env.hpp"

namespace nlq::service {
namespace {

namespace fs = std::filesystem;
using llm::TemplateId;
using nlohmann::json;
using nlq::testing::fenced;

EnvLookup env_of(std::map<std::string, std::string> vars) {
  return [vars](const std::string& name) -> std::optional<std::string> {
    auto it = vars.find(name);
    if (it == vars.end()) return std::nullopt;
    return it->second;
  };
}

const char* kFullConfig = R"(
storage_dir = "state"
listen_address = "0.0.0.0:9090"
auth_token_env = "NLQ_TOKEN"

[[databases]]
name = "shop"
location = "${DATA}/shop.sqlite"
row_cap = 500

[[databases]]
name = "remote"
kind = "network"
location = "db.example:5432"

[llm]
backend = "http"
url = "http://localhost:8000/v1/chat/completions"
model = "small"
auth_env = "LLM_KEY"
retry_max = 4
timeout_ms = 1500
requests_per_minute = 30

[llm.models]
generate_sql = "large"

[embedder]
dimension = 128

[pipeline]
max_iterations = 5
k_tables = 3
k_rules = 2
char_budget = 4000
rows_in_prompt = 20
ask_timeout_ms = 9000

[scan]
categorical_max_distinct = 7
)";

// ---------------------------------------------------------------------------
// Config

TEST(Config, ParsesEverySection) {
  auto cfg = parse_config(kFullConfig, "/etc/nlq", env_of({{"DATA", "/srv/data"}}));
  EXPECT_EQ(cfg.storage_dir, fs::path("/etc/nlq/state"));
  EXPECT_EQ(cfg.listen_address, "0.0.0.0:9090");
  EXPECT_EQ(cfg.auth_token_env, "NLQ_TOKEN");
  ASSERT_EQ(cfg.databases.size(), 2u);
  EXPECT_EQ(cfg.databases[0].location, "/srv/data/shop.sqlite");
  EXPECT_EQ(cfg.databases[0].default_row_cap, 500);
  EXPECT_EQ(cfg.databases[1].kind, db::ConnectionKind::kNetwork);
  EXPECT_EQ(cfg.databases[1].location, "db.example:5432");
  EXPECT_EQ(cfg.llm.backend, "http");
  EXPECT_EQ(cfg.llm.http.model, "small");
  EXPECT_EQ(cfg.llm.http.auth_env_var, "LLM_KEY");
  EXPECT_EQ(cfg.llm.http.retry_max, 4);
  EXPECT_EQ(cfg.llm.http.timeout, std::chrono::milliseconds(1500));
  EXPECT_EQ(cfg.llm.http.model_per_template.at(TemplateId::kGenerateSql), "large");
  EXPECT_DOUBLE_EQ(cfg.llm.requests_per_minute, 30.0);
  EXPECT_EQ(cfg.embedder.dimension, 128u);
  EXPECT_EQ(cfg.pipeline.max_iterations, 5);
  EXPECT_EQ(cfg.pipeline.k_tables, 3u);
  EXPECT_EQ(cfg.pipeline.k_rules, 2u);
  EXPECT_EQ(cfg.pipeline.char_budget, 4000u);
  EXPECT_EQ(cfg.pipeline.rows_in_prompt, 20u);
  EXPECT_EQ(cfg.pipeline.ask_timeout, std::chrono::milliseconds(9000));
  EXPECT_EQ(cfg.scan.categorical_max_distinct, 7);
  EXPECT_NE(cfg.find_database("shop"), nullptr);
  EXPECT_EQ(cfg.find_database("nope"), nullptr);
}

TEST(Config, DefaultsForMinimalFile) {
  auto cfg = parse_config("storage_dir = '/tmp/x'\n[[databases]]\nname = 'a'\nlocation = '/tmp/a.db'\n");
  EXPECT_EQ(cfg.llm.backend, "scripted");
  EXPECT_EQ(cfg.embedder.kind, "builtin");
  EXPECT_EQ(cfg.embedder.dimension, index::kDefaultDimension);
  EXPECT_EQ(cfg.pipeline.max_iterations, 3);
  EXPECT_EQ(cfg.pipeline.full_row_cap, db::kDefaultRowCap);
  EXPECT_FALSE(cfg.pipeline.ask_timeout.has_value());
  EXPECT_EQ(cfg.listen_address, "127.0.0.1:8080");
}

TEST(Config, RejectsBadInput) {
  const std::string db = "\n[[databases]]\nname = 'a'\nlocation = '/tmp/a.db'\n";
  auto bad = [&](const std::string& text) { EXPECT_THROW(parse_config(text, {}, env_of({})), ConfigError) << text; };
  bad("[[databases]]\nname='a'\nlocation='/x'\n");                      // no storage_dir
  bad("storage_dir = '/tmp/x'\n");                                      // no databases
  bad("storage_dir = '/tmp/x'" + db + "[pipeline]\nmax_iterations = 0\n");
  bad("storage_dir = '/tmp/x'" + db + "[pipeline]\nk_tables = 'five'\n");
  bad("storage_dir = '/tmp/x'" + db + "[llm]\nbackend = 'http'\n");      // url/model missing
  bad("storage_dir = '/tmp/x'" + db + "[llm]\nbackend = 'magic'\n");
  bad("storage_dir = '/tmp/x'" + db + "[embedder]\nkind = 'remote'\n");
  bad("storage_dir = '/tmp/x'" + db + "[[databases]]\nname = 'a'\nlocation = '/tmp/b.db'\n");
  bad("storage_dir = '/tmp/x'" + db + "colour = 'blue'\n");
  bad("storage_dir = '${MISSING}'" + db);
  bad("storage_dir = '/tmp/x'\n[[databases]]\nname = '../a'\nlocation = '/x'\n");
  bad("storage_dir = = 3");
}

TEST(Config, SecretsMustComeFromEnvironment) {
  std::string text = "storage_dir = '/tmp/x'\n[[databases]]\nname = 'a'\nlocation = '/x'\n"
                     "[llm]\nbackend = 'http'\nurl = 'http://h/v1'\nmodel = 'm'\napi_key = 'sk-123'\n";
  try {
    parse_config(text, {}, env_of({}));
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("environment variable"), std::string::npos);
  }
  auto ok = parse_config("storage_dir = '/tmp/x'\n[[databases]]\nname = 'a'\nlocation = '/x'\n"
                         "[llm]\nbackend = 'http'\nurl = '${LLM_URL}'\nmodel = 'm'\nauth_env = 'LLM_KEY'\n",
                         {}, env_of({{"LLM_URL", "http://h:1/v1/chat/completions"}}));
  EXPECT_EQ(ok.llm.http.url, "http://h:1/v1/chat/completions");
  EXPECT_EQ(ok.llm.http.auth_env_var, "LLM_KEY");
}

TEST(Config, SyntaxErrorNamesLine) {
  try {
    parse_config("storage_dir = '/tmp/x'\n\n[pipeline\n", {}, env_of({}));
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(Config, LoadFileResolvesRelativePaths) {
  auto dir = nlq::testing::make_temp_dir("cfg");
  util::write_file_atomic(dir / "nlq.toml", "storage_dir = 'state'\n[[databases]]\nname = 'a'\nlocation = 'a.db'\n");
  auto cfg = load_config(dir / "nlq.toml", env_of({}));
  EXPECT_EQ(cfg.storage_dir, (dir / "state").lexically_normal());
  EXPECT_EQ(cfg.databases[0].location, (dir / "a.db").lexically_normal().string());
  EXPECT_THROW(load_config(dir / "missing.toml"), ConfigError);
  fs::remove_all(dir);
}

TEST(Config, ListenAddress) {
  EXPECT_EQ(split_listen_address("127.0.0.1:8080"), (std::pair<std::string, int>{"127.0.0.1", 8080}));
  EXPECT_EQ(split_listen_address("localhost:0").second, 0);
  EXPECT_THROW(split_listen_address("localhost"), ConfigError);
  EXPECT_THROW(split_listen_address("h:99999"), ConfigError);
  EXPECT_THROW(split_listen_address("h:80x"), ConfigError);
}

// ---------------------------------------------------------------------------
// Service over HTTP

struct Harness {
  fs::path dir = nlq::testing::make_temp_dir("svc");
  fs::path db_file = nlq::testing::make_shop_db(dir);
  std::shared_ptr<llm::ScriptedBackend> backend = std::make_shared<llm::ScriptedBackend>();
  std::unique_ptr<Service> service;
  std::unique_ptr<HttpApi> api;
  std::thread server;
  std::unique_ptr<httplib::Client> client;
  std::string token;

  Harness() {
    backend->add({TemplateId::kClassifyIntent, "What tables are available", "STRUCTURE"});
    backend->add({TemplateId::kClassifyIntent, "", "DATA"});
    backend->add({TemplateId::kGenerateSql, "How many customers", fenced("SELECT COUNT(*) AS n FROM customer")});
    backend->add({TemplateId::kGenerateSql, "", fenced("SELECT name FROM customer ORDER BY name")});
    backend->add({TemplateId::kIntrospect, "", "VERDICT: PASS"});
    backend->add({TemplateId::kAnswer, "", "Here you go."});
    start();
  }

  ~Harness() {
    stop();
    fs::remove_all(dir);
  }

  ServiceConfig config() const {
    ServiceConfig cfg;
    cfg.databases = {nlq::testing::profile_for(db_file)};
    cfg.storage_dir = dir / "state";
    return cfg;
  }

  void start(std::shared_ptr<llm::Backend> b = nullptr) {
    service = std::make_unique<Service>(config(), b ? b : backend);
    api = std::make_unique<HttpApi>(*service, token);
    int port = api->bind("127.0.0.1", 0);
    ASSERT_GT(port, 0);
    server = std::thread([this] { api->listen_after_bind(); });
    api->wait_until_ready();
    client = std::make_unique<httplib::Client>("127.0.0.1", port);
    client->set_read_timeout(10, 0);
    if (!token.empty()) client->set_bearer_token_auth(token);
  }

  void stop() {
    if (api) api->stop();
    if (server.joinable()) server.join();
    client.reset();
    api.reset();
    service.reset();
  }

  void restart(std::shared_ptr<llm::Backend> b = nullptr) {
    stop();
    start(b);
  }

  std::pair<int, json> post(const std::string& path, const json& body) {
    auto res = client->Post(path, body.dump(), "application/json");
    if (!res) return {0, nullptr};
    return {res->status, res->body.empty() ? json() : json::parse(res->body)};
  }
  std::pair<int, json> get(const std::string& path) {
    auto res = client->Get(path);
    if (!res) return {0, nullptr};
    return {res->status, res->body.empty() ? json() : json::parse(res->body)};
  }
  std::pair<int, json> del(const std::string& path) {
    auto res = client->Delete(path);
    if (!res) return {0, nullptr};
    return {res->status, res->body.empty() ? json() : json::parse(res->body)};
  }

  std::string new_session() { return post("/sessions", {{"database", "shop"}}).second["session_id"]; }

  std::vector<std::string> prompts(TemplateId id) const {
    std::vector<std::string> out;
    for (const auto& c : backend->calls()) {
      if (c.template_id == id) out.push_back(c.rendered_prompt);
    }
    return out;
  }
};

void expect_error_body(const json& body, const std::string& code) {
  ASSERT_TRUE(body.is_object());
  EXPECT_EQ(body.size(), 2u);
  EXPECT_EQ(body.value("error_code", ""), code);
  EXPECT_TRUE(body.contains("message"));
}

TEST(Sessions, CreateAndLookup) {
  Harness h;
  auto [status, body] = h.post("/sessions", {{"database", "shop"}});
  EXPECT_EQ(status, 201);
  EXPECT_EQ(body["database"], "shop");
  auto other = h.post("/sessions", {{"database", "shop"}}).second;
  EXPECT_NE(body["session_id"], other["session_id"]);

  auto [s404, e404] = h.post("/sessions", {{"database", "warehouse"}});
  EXPECT_EQ(s404, 404);
  expect_error_body(e404, "unknown_database");

  auto [s200, session] = h.get("/sessions/" + body["session_id"].get<std::string>());
  EXPECT_EQ(s200, 200);
  EXPECT_TRUE(session["turns"].empty());
  EXPECT_EQ(h.get("/sessions/nope").first, 404);
  EXPECT_EQ(h.post("/sessions", json::object()).first, 422);
}

TEST(Ask, DataQuestionReturnsSqlAndTrace) {
  Harness h;
  auto sid = h.new_session();
  auto [status, env] = h.post("/sessions/" + sid + "/ask", {{"question", "How many customers are there?"}});
  ASSERT_EQ(status, 200) << env.dump();
  EXPECT_EQ(env["sql"], "SELECT COUNT(*) AS n FROM customer");
  EXPECT_EQ(env["table"]["rows"][0][0], 3);
  EXPECT_EQ(env["text"], "Here you go.");
  auto trace_id = env["trace_id"].get<std::string>();
  EXPECT_EQ(trace_id, sid + "-t0001");

  auto [ts, trace] = h.get("/traces/" + trace_id);
  EXPECT_EQ(ts, 200);
  EXPECT_EQ(trace["final_status"], "answered");
  EXPECT_LE(trace["candidates"].size(), 3u);
  EXPECT_EQ(trace["candidates"][0]["status"], "pass");
  EXPECT_EQ(h.get("/traces/" + sid + "-t0099").first, 404);

  auto session = h.get("/sessions/" + sid).second;
  ASSERT_EQ(session["turns"].size(), 1u);
  EXPECT_EQ(session["turns"][0]["question"], "How many customers are there?");
}

TEST(Ask, StructureQuestionHasNoSql) {
  Harness h;
  auto sid = h.new_session();
  auto [status, env] = h.post("/sessions/" + sid + "/ask", {{"question", "What tables are available?"}});
  ASSERT_EQ(status, 200);
  EXPECT_TRUE(env["sql"].is_null());
  EXPECT_TRUE(env["table"].is_null());
}

TEST(Ask, Errors) {
  Harness h;
  auto sid = h.new_session();
  auto [s422, e422] = h.post("/sessions/" + sid + "/ask", {{"question", ""}});
  EXPECT_EQ(s422, 422);
  expect_error_body(e422, "empty_question");
  EXPECT_EQ(h.post("/sessions/" + sid + "/ask", {{"question", "   "}}).first, 422);
  EXPECT_EQ(h.post("/sessions/" + sid + "/ask", json::object()).first, 422);
  auto [s404, e404] = h.post("/sessions/missing/ask", {{"question", "hi"}});
  EXPECT_EQ(s404, 404);
  expect_error_body(e404, "unknown_session");
  auto raw = h.client->Post("/sessions/" + sid + "/ask", "{oops", "application/json");
  ASSERT_TRUE(raw);
  EXPECT_EQ(raw->status, 400);
  auto unknown = h.get("/no/such/route");
  EXPECT_EQ(unknown.first, 404);
  expect_error_body(unknown.second, "no_route");
}

// Holds the first completion until released.
class GateBackend final : public llm::Backend {
 public:
  explicit GateBackend(std::shared_ptr<llm::Backend> inner) : inner_(std::move(inner)) {}
  llm::Completion complete(const llm::CompletionRequest& request) override {
    if (!first_.exchange(true)) {
      entered_.set_value();
      release_.get_future().wait();
    }
    return inner_->complete(request);
  }
  std::string id() const override { return "gate"; }
  std::future<void> entered() { return entered_.get_future(); }
  void release() { release_.set_value(); }

 private:
  std::shared_ptr<llm::Backend> inner_;
  std::atomic<bool> first_{false};
  std::promise<void> entered_;
  std::promise<void> release_;
};

TEST(Ask, ConcurrentAskOnSameSessionIsRejected) {
  Harness h;
  auto gate = std::make_shared<GateBackend>(h.backend);
  h.restart(gate);
  auto sid = h.new_session();
  auto other = h.new_session();
  auto entered = gate->entered();
  auto first = std::async(std::launch::async, [&] {
    httplib::Client c2("127.0.0.1", h.client->port());
    c2.set_read_timeout(10, 0);
    auto res = c2.Post("/sessions/" + sid + "/ask", json{{"question", "How many customers?"}}.dump(), "application/json");
    return res ? res->status : 0;
  });
  ASSERT_EQ(entered.wait_for(std::chrono::seconds(10)), std::future_status::ready);
  auto [busy, body] = h.post("/sessions/" + sid + "/ask", {{"question", "again"}});
  EXPECT_EQ(busy, 409);
  expect_error_body(body, "session_busy");
  // A different session is not blocked by the exclusion.
  std::thread release_later([&] {
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    gate->release();
  });
  EXPECT_EQ(h.post("/sessions/" + other + "/ask", {{"question", "How many customers?"}}).first, 200);
  release_later.join();
  EXPECT_EQ(first.get(), 200);
  EXPECT_EQ(h.get("/sessions/" + sid).second["turns"].size(), 1u);
}

TEST(Rules, AddListDelete) {
  Harness h;
  auto [s201, rule] = h.post("/rules", {{"text", "total revenue means quantity times price"}});
  EXPECT_EQ(s201, 201);
  EXPECT_EQ(rule["rule_id"], "rule-0001");
  EXPECT_EQ(rule["scope"], "global");
  auto list = h.get("/rules").second["rules"];
  ASSERT_EQ(list.size(), 1u);
  EXPECT_EQ(list[0]["text"], "total revenue means quantity times price");
  EXPECT_EQ(h.service->active_chunks("shop", index::ChunkKind::kRule), 1u);

  auto sid = h.new_session();
  h.post("/sessions/" + sid + "/ask", {{"question", "What is the total revenue?"}});
  EXPECT_NE(h.prompts(TemplateId::kGenerateSql).back().find("quantity times price"), std::string::npos);

  auto [sdel, deleted] = h.del("/rules/rule-0001");
  EXPECT_EQ(sdel, 200);
  EXPECT_EQ(deleted["active"], false);
  EXPECT_TRUE(h.get("/rules").second["rules"].empty());
  EXPECT_EQ(h.get("/rules?include_inactive=true").second["rules"].size(), 1u);
  EXPECT_EQ(h.service->active_chunks("shop", index::ChunkKind::kRule), 0u);
  h.post("/sessions/" + sid + "/ask", {{"question", "What is the total revenue now?"}});
  EXPECT_EQ(h.prompts(TemplateId::kGenerateSql).back().find("quantity times price"), std::string::npos);

  EXPECT_EQ(h.del("/rules/rule-0001").first, 404);
  EXPECT_EQ(h.del("/rules/rule-0042").first, 404);
  auto [s422, e422] = h.post("/rules", {{"text", "  "}});
  EXPECT_EQ(s422, 422);
  expect_error_body(e422, "empty_rule");
  EXPECT_EQ(h.post("/rules", {{"text", "x"}, {"scope", "planet"}}).first, 422);
}

TEST(Rules, SessionScopedRule) {
  Harness h;
  auto a = h.new_session();
  auto b = h.new_session();
  auto [status, rule] = h.post("/rules", {{"text", "ignore cancelled orders"}, {"scope", "session"}, {"session_id", a}});
  EXPECT_EQ(status, 201);
  EXPECT_EQ(rule["session_id"], a);
  EXPECT_TRUE(h.get("/rules").second["rules"].empty());
  EXPECT_EQ(h.get("/sessions/" + a).second["session_rules"].size(), 1u);
  h.post("/sessions/" + a + "/ask", {{"question", "list customers"}});
  h.post("/sessions/" + b + "/ask", {{"question", "list customers"}});
  auto gen = h.prompts(TemplateId::kGenerateSql);
  ASSERT_EQ(gen.size(), 2u);
  EXPECT_NE(gen[0].find("ignore cancelled orders"), std::string::npos);
  EXPECT_EQ(gen[1].find("ignore cancelled orders"), std::string::npos);
  EXPECT_EQ(h.post("/rules", {{"text", "x"}, {"scope", "session"}, {"session_id", "nope"}}).first, 404);
  EXPECT_EQ(h.post("/rules", {{"text", "x"}, {"scope", "session"}}).first, 422);
}

TEST(Scan, SummaryAndSchema) {
  Harness h;
  auto [before, err] = h.get("/schema/shop");
  EXPECT_EQ(before, 404);
  expect_error_body(err, "not_scanned");
  auto [status, summary] = h.post("/scan", {{"database", "shop"}});
  ASSERT_EQ(status, 200);
  EXPECT_EQ(summary["tables"], json::array({"customer", "orders", "product"}));
  EXPECT_EQ(summary["table_count"], 3);
  auto [s200, snap] = h.get("/schema/shop");
  EXPECT_EQ(s200, 200);
  EXPECT_EQ(snap["tables"].size(), 3u);
  EXPECT_EQ(h.post("/scan", {{"database", "warehouse"}}).first, 404);
  EXPECT_EQ(h.get("/schema/warehouse").first, 404);
}

TEST(Scan, RescanAfterDdlChangeUpdatesChunks) {
  Harness h;
  h.post("/rules", {{"text", "a standing rule"}});
  h.post("/scan", {{"database", "shop"}});
  EXPECT_EQ(h.service->active_chunks("shop", index::ChunkKind::kTableDoc), 3u);
  nlq::testing::run_script(h.db_file, "CREATE TABLE supplier (id INTEGER PRIMARY KEY, name TEXT);"
                                      "INSERT INTO supplier VALUES (1, 'Acme');");
  auto summary = h.post("/scan", {{"database", "shop"}}).second;
  EXPECT_EQ(summary["table_count"], 4);
  EXPECT_EQ(h.service->active_chunks("shop", index::ChunkKind::kTableDoc), 4u);
  EXPECT_EQ(h.service->active_chunks("shop", index::ChunkKind::kRule), 1u);
  nlq::testing::run_script(h.db_file, "DROP TABLE supplier;");
  h.post("/scan", {{"database", "shop"}});
  EXPECT_EQ(h.service->active_chunks("shop", index::ChunkKind::kTableDoc), 3u);
}

TEST(Scan, UnreadableDatabaseIs502) {
  Harness h;
  h.stop();
  util::write_file_atomic(h.db_file, std::string(4096, 'x'));
  h.start();
  auto [status, body] = h.post("/scan", {{"database", "shop"}});
  EXPECT_EQ(status, 502);
  expect_error_body(body, "scan_failed");
}

TEST(Ask, FirstAskScansOnDemand) {
  Harness h;
  auto sid = h.new_session();
  EXPECT_EQ(h.get("/schema/shop").first, 404);
  EXPECT_EQ(h.post("/sessions/" + sid + "/ask", {{"question", "How many customers?"}}).first, 200);
  EXPECT_EQ(h.get("/schema/shop").first, 200);
}

TEST(Auth, BearerTokenIsEnforced) {
  Harness h;
  h.stop();
  h.token = "s3cret";
  h.start();
  EXPECT_EQ(h.get("/rules").first, 200);
  httplib::Client anon("127.0.0.1", h.client->port());
  auto res = anon.Get("/rules");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 401);
  expect_error_body(json::parse(res->body), "unauthorized");
}

TEST(Persistence, RestartRestoresEverything) {
  Harness h;
  h.post("/scan", {{"database", "shop"}});
  h.post("/rules", {{"text", "first global rule"}});
  h.post("/rules", {{"text", "second global rule"}});
  h.del("/rules/rule-0001");
  auto sid = h.new_session();
  h.post("/rules", {{"text", "only for this session"}, {"scope", "session"}, {"session_id", sid}});
  auto env = h.post("/sessions/" + sid + "/ask", {{"question", "How many customers are there?"}}).second;
  auto trace_before = h.get("/traces/" + env["trace_id"].get<std::string>()).second;
  auto schema_before = h.get("/schema/shop").second;
  auto session_before = h.get("/sessions/" + sid).second;
  auto rules_before = h.get("/rules?include_inactive=true").second;

  h.restart();
  EXPECT_EQ(h.get("/rules?include_inactive=true").second, rules_before);
  EXPECT_EQ(h.get("/schema/shop").second, schema_before);
  EXPECT_EQ(h.get("/sessions/" + sid).second, session_before);
  EXPECT_EQ(h.get("/traces/" + env["trace_id"].get<std::string>()).second, trace_before);
  EXPECT_EQ(h.service->active_chunks("shop", index::ChunkKind::kRule), 1u);
  EXPECT_EQ(h.service->active_chunks("shop", index::ChunkKind::kTableDoc), 3u);

  h.backend->clear_calls();
  auto follow = h.post("/sessions/" + sid + "/ask", {{"question", "And their names?"}});
  EXPECT_EQ(follow.first, 200);
  EXPECT_EQ(follow.second["trace_id"], sid + "-t0002");
  auto gen = h.prompts(TemplateId::kGenerateSql).at(0);
  EXPECT_NE(gen.find("How many customers are there?"), std::string::npos);
  EXPECT_NE(gen.find("only for this session"), std::string::npos);
  EXPECT_NE(gen.find("second global rule"), std::string::npos);
  EXPECT_EQ(gen.find("first global rule"), std::string::npos);
  EXPECT_NE(h.new_session(), sid);
}

TEST(Persistence, TornLogLineAndMissingIndexAreTolerated) {
  Harness h;
  h.post("/scan", {{"database", "shop"}});
  h.post("/rules", {{"text", "kept rule"}});
  auto sid = h.new_session();
  h.post("/sessions/" + sid + "/ask", {{"question", "How many customers?"}});
  h.stop();
  {
    std::ofstream log(h.dir / "state" / "sessions.jsonl", std::ios::app);
    log << R"({"type":"turn","session_id":")" << sid << R"(","question":"half)";
  }
  fs::remove(h.dir / "state" / "index" / "shop.jsonl");
  h.start();
  EXPECT_EQ(h.get("/sessions/" + sid).second["turns"].size(), 1u);
  EXPECT_EQ(h.service->active_chunks("shop", index::ChunkKind::kTableDoc), 3u);
  EXPECT_EQ(h.service->active_chunks("shop", index::ChunkKind::kRule), 1u);
  EXPECT_EQ(h.post("/sessions/" + sid + "/ask", {{"question", "How many customers?"}}).first, 200);
}

TEST(Service, StorageMustBeWritable) {
  auto dir = nlq::testing::make_temp_dir("svc-ro");
  auto db_file = nlq::testing::make_shop_db(dir);
  util::write_file_atomic(dir / "file", "x");
  ServiceConfig cfg;
  cfg.databases = {nlq::testing::profile_for(db_file)};
  cfg.storage_dir = dir / "file" / "state";
  EXPECT_THROW(Service(cfg, std::make_shared<llm::ScriptedBackend>()), ConfigError);
  cfg.databases.clear();
  cfg.storage_dir = dir / "state";
  EXPECT_THROW(Service(cfg, std::make_shared<llm::ScriptedBackend>()), ConfigError);
  fs::remove_all(dir);
}

TEST(Service, NeverWritesToTheDatabase) {
  Harness h;
  auto before = util::read_file(h.db_file);
  auto sid = h.new_session();
  h.post("/scan", {{"database", "shop"}});
  h.post("/sessions/" + sid + "/ask", {{"question", "How many customers?"}});
  h.post("/rules", {{"text", "rule"}});
  EXPECT_EQ(util::read_file(h.db_file), before);
}

}  // namespace
}  // namespace nlq::service
