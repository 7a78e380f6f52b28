#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <pthread.h>

#include "nlq/bench/harness.hpp"
#include "nlq/service/http_api.hpp"
#include "nlq/service/service.hpp"
#include "nlq/util/files.hpp"

namespace {

using namespace nlq;
using nlohmann::json;

struct Options {
  std::string config_path = "nlq.toml";
  std::string backend;  // overrides the config when set
  bool json_output = false;
};

std::shared_ptr<llm::Backend> backend_from_flag(const std::string& flag, const service::LlmSettings& settings) {
  if (flag.empty()) return service::make_backend(settings);
  if (flag == "http") {
    auto s = settings;
    s.backend = "http";
    if (s.http.url.empty() || s.http.model.empty()) {
      throw service::ConfigError("--backend http needs llm.url and llm.model in the config");
    }
    return service::make_backend(s);
  }
  if (flag.rfind("scripted:", 0) == 0) {
    auto s = settings;
    s.backend = "scripted";
    s.script_file = flag.substr(9);
    return service::make_backend(s);
  }
  throw service::ConfigError("--backend must be scripted:<file>, http or gold-echo");
}

// Commands that never call the model still need a gateway.
std::shared_ptr<llm::Backend> idle_backend() { return std::make_shared<llm::ScriptedBackend>(); }

std::unique_ptr<service::Service> open_service(const Options& opts, bool needs_model) {
  auto cfg = service::load_config(opts.config_path);
  auto backend = needs_model ? backend_from_flag(opts.backend, cfg.llm) : idle_backend();
  return std::make_unique<service::Service>(std::move(cfg), std::move(backend));
}

void print_rule(const pipeline::BusinessRule& r) {
  std::cout << r.rule_id << (r.active ? "" : " (inactive)") << "  " << r.text << "\n";
}

int cmd_scan(const Options& opts, const std::string& database) {
  auto svc = open_service(opts, false);
  auto summary = svc->scan(database);
  if (opts.json_output) {
    std::cout << service::to_json(summary).dump(2) << "\n";
    return 0;
  }
  std::cout << "scanned " << summary.database << ": " << summary.tables.size() << " tables, "
            << summary.column_count << " columns, " << summary.foreign_key_count << " foreign keys\n";
  for (const auto& t : summary.tables) std::cout << "  " << t << "\n";
  return 0;
}

int cmd_ask(const Options& opts, const std::string& database, const std::string& question) {
  auto svc = open_service(opts, true);
  auto session = svc->create_session(database);
  auto [envelope, trace] = svc->ask(session, question);
  if (opts.json_output) {
    std::cout << json{{"answer", pipeline::to_json(envelope)}, {"trace", pipeline::to_json(trace)}}.dump(2) << "\n";
  } else {
    std::cout << envelope.text << "\n";
    if (envelope.table) std::cout << "\n" << pipeline::render_table_text(*envelope.table, 50) << "\n";
    if (envelope.sql) std::cout << "\nSQL: " << *envelope.sql << "\n";
    std::cout << "trace: " << trace.trace_id << " (" << pipeline::to_string(trace.final_status) << ", "
              << trace.candidates.size() << " candidate(s))\n";
  }
  return trace.final_status == pipeline::FinalStatus::kExhausted ? 3 : 0;
}

int cmd_bench(const Options& opts, const std::string& dataset_dir, const std::string& format_text,
              const std::string& out_path, int workers, int limit, int item_timeout_ms) {
  auto format = bench::parse_report_format(format_text);
  if (!format) throw service::ConfigError("--format must be text, json or csv");
  auto ds = bench::load_dataset(dataset_dir);
  if (limit > 0 && static_cast<std::size_t>(limit) < ds.items.size()) ds.items.resize(static_cast<std::size_t>(limit));

  bench::EvalOptions eval;
  eval.workers = workers;
  eval.item_timeout = std::chrono::milliseconds(item_timeout_ms);
  std::shared_ptr<llm::Backend> backend;
  auto prompt_dir = llm::default_prompt_dir();
  double rpm = 0.0;
  bool have_config = std::filesystem::exists(opts.config_path);
  if (have_config) {
    auto cfg = service::load_config(opts.config_path);
    eval.pipeline = cfg.pipeline;
    eval.scan = cfg.scan;
    eval.embedder = service::make_embedder(cfg.embedder);
    if (!cfg.llm.prompt_dir.empty()) prompt_dir = cfg.llm.prompt_dir;
    rpm = cfg.llm.requests_per_minute;
    if (opts.backend != "gold-echo") backend = backend_from_flag(opts.backend, cfg.llm);
  } else if (opts.backend.rfind("scripted:", 0) == 0) {
    backend = backend_from_flag(opts.backend, {});
  } else if (opts.backend != "gold-echo") {
    throw service::ConfigError("config file not found: " + opts.config_path +
                               " (use --backend gold-echo or scripted:<file> to run without one)");
  }
  if (opts.backend == "gold-echo") backend = bench::gold_echo_backend(ds.items);

  llm::Gateway gateway(backend, llm::PromptTemplates::load(prompt_dir), rpm);
  auto report = bench::evaluate(ds, gateway, eval);
  auto rendered = bench::render_report(report, opts.json_output ? bench::ReportFormat::kJson : *format);
  if (out_path.empty()) {
    std::cout << rendered;
  } else {
    util::write_file_atomic(out_path, rendered);
    std::cout << bench::render_report(report, bench::ReportFormat::kText);
  }
  return 0;
}

int cmd_serve(const Options& opts, const std::string& listen_override) {
  // Signals are taken by a dedicated thread so the server can stop cleanly.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  auto svc = open_service(opts, true);
  const auto& cfg = svc->config();
  std::string token;
  if (!cfg.auth_token_env.empty()) {
    if (const char* t = std::getenv(cfg.auth_token_env.c_str())) token = t;
  }
  auto [host, port] = service::split_listen_address(listen_override.empty() ? cfg.listen_address : listen_override);
  service::HttpApi api(*svc, token);
  int bound = api.bind(host, port);
  if (bound < 0) {
    std::cerr << "error: cannot listen on " << host << ":" << port << "\n";
    return 1;
  }
  std::thread waiter([&api, set] {
    int sig = 0;
    sigwait(&set, &sig);
    api.stop();
  });
  std::cout << "listening on " << host << ":" << bound << std::endl;
  bool ok = api.listen_after_bind();
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Natural-language questions over SQL databases"};
  app.require_subcommand(1);
  Options opts;
  app.add_option("--config", opts.config_path, "Service config file")->capture_default_str();
  app.add_option("--backend", opts.backend, "scripted:<file>, http or gold-echo (bench only)");
  app.add_flag("--json", opts.json_output, "Machine-readable output");

  std::string database, question, dataset_dir, rule_text, rule_scope = "global", rule_session, rule_id;
  auto* scan = app.add_subcommand("scan", "Scan a database and rebuild its index");
  scan->add_option("database", database)->required();

  auto* ask = app.add_subcommand("ask", "Ask one question in a fresh session");
  ask->add_option("database", database)->required();
  ask->add_option("question", question)->required();

  auto* rules = app.add_subcommand("rules", "Manage business rules");
  rules->require_subcommand(1);
  auto* rules_add = rules->add_subcommand("add", "Add a rule");
  rules_add->add_option("text", rule_text)->required();
  rules_add->add_option("--scope", rule_scope)->check(CLI::IsMember({"global", "session"}));
  rules_add->add_option("--session", rule_session, "Session id for session-scoped rules");
  bool include_inactive = false;
  auto* rules_list = rules->add_subcommand("list", "List rules");
  rules_list->add_flag("--all", include_inactive, "Include removed rules");
  auto* rules_rm = rules->add_subcommand("rm", "Remove (deactivate) a rule");
  rules_rm->add_option("rule_id", rule_id)->required();

  std::string format = "text", out_path;
  int workers = 1, limit = 0, item_timeout_ms = 120000;
  auto* benchc = app.add_subcommand("bench", "Run the benchmark over a dataset directory");
  benchc->add_option("dataset_dir", dataset_dir)->required();
  benchc->add_option("--format", format, "text, json or csv")->capture_default_str();
  benchc->add_option("--out", out_path, "Write the report to a file");
  benchc->add_option("--workers", workers)->capture_default_str()->check(CLI::Range(1, 64));
  benchc->add_option("--limit", limit, "Evaluate only the first N items");
  benchc->add_option("--item-timeout-ms", item_timeout_ms)->capture_default_str()->check(CLI::PositiveNumber);

  std::string listen;
  auto* serve = app.add_subcommand("serve", "Run the HTTP API");
  serve->add_option("--listen", listen, "host:port (port 0 picks a free port)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*scan) return cmd_scan(opts, database);
    if (*ask) return cmd_ask(opts, database, question);
    if (*benchc) return cmd_bench(opts, dataset_dir, format, out_path, workers, limit, item_timeout_ms);
    if (*serve) return cmd_serve(opts, listen);
    if (*rules) {
      auto svc = open_service(opts, false);
      if (*rules_add) {
        auto scope = rule_scope == "session" ? pipeline::RuleScope::kSession : pipeline::RuleScope::kGlobal;
        std::optional<std::string> sid;
        if (!rule_session.empty()) sid = rule_session;
        auto r = svc->add_rule(rule_text, scope, sid);
        if (opts.json_output) {
          std::cout << pipeline::to_json(r).dump(2) << "\n";
        } else {
          print_rule(r);
        }
      } else if (*rules_list) {
        auto list = svc->list_rules(include_inactive);
        if (opts.json_output) {
          json out = json::array();
          for (const auto& r : list) out.push_back(pipeline::to_json(r));
          std::cout << out.dump(2) << "\n";
        } else {
          for (const auto& r : list) print_rule(r);
        }
      } else if (*rules_rm) {
        auto r = svc->delete_rule(rule_id);
        if (opts.json_output) {
          std::cout << pipeline::to_json(r).dump(2) << "\n";
        } else {
          std::cout << "removed " << r.rule_id << "\n";
        }
      }
      return 0;
    }
  } catch (const service::ServiceError& e) {
    std::cerr << "error (" << e.code() << "): " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
