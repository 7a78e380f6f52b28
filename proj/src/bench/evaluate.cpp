#include <algorithm>
#include <atomic>
#include <limits>
#include <thread>

#include "nlq/bench/harness.hpp"
#include "nlq/guard/sql_guard.hpp"

namespace nlq::bench {

namespace {

constexpr std::int64_t kUnlimited = std::numeric_limits<std::int64_t>::max();

struct DbContext {
  std::filesystem::path path;
  schema::SchemaSnapshot snapshot;
  std::unique_ptr<index::VectorIndex> index;
  std::string setup_error;  // scan failure; every item on this db fails
};

bool same_rows(db::Connection& conn, const std::string& sql, const db::ResultTable& gold) {
  auto got = conn.execute(sql, kUnlimited);
  return got && guard::rows_equal(*got, gold);
}

bool passed_guard(const pipeline::SqlCandidate& c) {
  return std::any_of(c.outcome.checks.begin(), c.outcome.checks.end(),
                     [](const pipeline::CheckRecord& r) { return r.stage == "guard" && r.ok; });
}

ItemRecord run_item(const BenchItem& item, const DbContext& ctx, db::Connection& conn,
                    llm::Gateway& gateway, const EvalOptions& options) {
  ItemRecord rec;
  rec.question_id = item.question_id;
  rec.db_id = item.db_id;
  rec.difficulty = item.difficulty;
  rec.question = item.question;
  if (!ctx.setup_error.empty()) {
    rec.failure_detail = ctx.setup_error;
    return rec;
  }
  try {
    pipeline::Session session;
    session.session_id = "bench-" + item.question_id;
    session.database = item.db_id;
    if (item.evidence) {
      pipeline::add_rule(pipeline::RuleScope::kSession, *item.evidence, &session, nullptr, {});
    }
    auto config = options.pipeline;
    config.ask_timeout = options.item_timeout;
    pipeline::PipelineDeps deps{conn, *ctx.index, ctx.snapshot, gateway, config};
    std::unique_lock lock(session.in_flight);
    auto [envelope, trace] = pipeline::ask(session, item.question, deps);
    lock.unlock();

    rec.iterations_used = static_cast<int>(trace.candidates.size());
    rec.failure_detail = trace.failure_detail;

    auto gold = conn.execute(item.gold_sql, kUnlimited);
    if (!gold) {
      rec.failure_detail = "gold SQL failed: " + gold.error().message;
      return rec;
    }
    if (!trace.candidates.empty()) {
      const auto& first = trace.candidates.front();
      rec.first_attempt_correct = passed_guard(first) && same_rows(conn, first.sql, *gold);
    }
    if (trace.final_status == pipeline::FinalStatus::kAnswered && envelope.sql) {
      rec.predicted_sql = *envelope.sql;
      rec.final_correct = same_rows(conn, *envelope.sql, *gold);
      if (!rec.final_correct && rec.failure_detail.empty()) {
        rec.failure_detail = "result rows differ from gold";
      }
    } else if (trace.final_status == pipeline::FinalStatus::kStructureAnswered) {
      rec.failure_detail = "question was classified as a structure question";
    }
  } catch (const std::exception& e) {
    rec.failure_detail = std::string("harness error: ") + e.what();
  }
  return rec;
}

}  // namespace

double Tally::first_attempt_accuracy() const {
  return items == 0 ? 0.0 : static_cast<double>(first_attempt_correct) / items;
}

double Tally::final_accuracy() const {
  return items == 0 ? 0.0 : static_cast<double>(final_correct) / items;
}

Tally BenchReport::overall() const {
  Tally t;
  for (const auto& r : records) {
    ++t.items;
    t.first_attempt_correct += r.first_attempt_correct;
    t.final_correct += r.final_correct;
  }
  return t;
}

std::map<Difficulty, Tally> BenchReport::by_difficulty() const {
  std::map<Difficulty, Tally> out;
  for (auto d : kAllDifficulties) out[d];
  for (const auto& r : records) {
    auto& t = out[r.difficulty];
    ++t.items;
    t.first_attempt_correct += r.first_attempt_correct;
    t.final_correct += r.final_correct;
  }
  return out;
}

BenchReport evaluate(const Dataset& dataset, llm::Gateway& gateway, const EvalOptions& options) {
  BenchReport report;
  report.dataset_path = dataset.dir.string();
  report.skipped_count = static_cast<int>(dataset.skipped.size());

  std::shared_ptr<const index::Embedder> embedder = options.embedder;
  if (!embedder) embedder = std::make_shared<index::BuiltinEmbedder>();

  std::map<std::string, DbContext> contexts;
  for (const auto& item : dataset.items) {
    if (contexts.count(item.db_id)) continue;
    auto& ctx = contexts[item.db_id];
    ctx.path = item.db_path;
    ctx.index = std::make_unique<index::VectorIndex>(embedder);
    try {
      auto conn = db::connect({item.db_id, db::ConnectionKind::kEmbeddedFile, item.db_path.string()});
      ctx.snapshot = schema::scan(*conn, options.scan);
      for (auto& chunk : schema::render_chunks(ctx.snapshot, *embedder)) ctx.index->upsert(std::move(chunk));
    } catch (const std::exception& e) {
      ctx.setup_error = std::string("scan failed: ") + e.what();
    }
  }

  const auto& items = dataset.items;
  report.records.resize(items.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    std::map<std::string, std::unique_ptr<db::Connection>> conns;
    for (std::size_t i = next++; i < items.size(); i = next++) {
      const auto& item = items[i];
      const auto& ctx = contexts.at(item.db_id);
      auto& conn = conns[item.db_id];
      try {
        if (!conn) conn = db::connect({item.db_id, db::ConnectionKind::kEmbeddedFile, ctx.path.string()});
        report.records[i] = run_item(item, ctx, *conn, gateway, options);
      } catch (const std::exception& e) {
        ItemRecord rec;
        rec.question_id = item.question_id;
        rec.db_id = item.db_id;
        rec.difficulty = item.difficulty;
        rec.question = item.question;
        rec.failure_detail = std::string("harness error: ") + e.what();
        report.records[i] = std::move(rec);
      }
    }
  };

  int workers = std::clamp(options.workers, 1, 64);
  if (workers == 1 || items.size() <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (int w = 0; w < workers; ++w) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  return report;
}

std::shared_ptr<llm::ScriptedBackend> gold_echo_backend(const std::vector<BenchItem>& items) {
  std::vector<const BenchItem*> order;
  for (const auto& item : items) order.push_back(&item);
  std::stable_sort(order.begin(), order.end(), [](const BenchItem* a, const BenchItem* b) {
    return a->question.size() > b->question.size();
  });
  auto backend = std::make_shared<llm::ScriptedBackend>();
  backend->add({llm::TemplateId::kClassifyIntent, "", "DATA"});
  for (const auto* item : order) {
    auto fenced = "```sql\n" + item->gold_sql + "\n```";
    backend->add({llm::TemplateId::kGenerateSql, item->question, fenced});
    backend->add({llm::TemplateId::kRefineSql, item->question, fenced});
  }
  backend->add({llm::TemplateId::kIntrospect, "", "VERDICT: PASS"});
  backend->add({llm::TemplateId::kAnswer, "", "Here is the result."});
  return backend;
}

}  // namespace nlq::bench
