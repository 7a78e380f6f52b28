#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nlq/llm/gateway.hpp"
#include "nlq/pipeline/pipeline.hpp"

namespace nlq::bench {

enum class Difficulty { kSimple, kModerate, kChallenging };

inline constexpr Difficulty kAllDifficulties[] = {Difficulty::kSimple, Difficulty::kModerate,
                                                  Difficulty::kChallenging};

const char* to_string(Difficulty difficulty);
std::optional<Difficulty> parse_difficulty(std::string_view text);

struct BenchItem {
  std::string question_id;
  std::string db_id;
  std::string question;
  std::optional<std::string> evidence;
  std::string gold_sql;
  Difficulty difficulty = Difficulty::kSimple;
  std::filesystem::path db_path;
};

struct SkippedItem {
  std::string question_id;
  std::string reason;
};

struct Dataset {
  std::filesystem::path dir;
  std::filesystem::path questions_file;
  std::vector<BenchItem> items;
  std::vector<SkippedItem> skipped;  // gold SQL failed to execute
};

class DatasetNotFound : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MalformedDataset : public std::runtime_error {
 public:
  MalformedDataset(std::string record, const std::string& message)
      : std::runtime_error("record " + record + ": " + message), record_(std::move(record)) {}
  const std::string& record() const { return record_; }

 private:
  std::string record_;
};

// BIRD layout: <dir>/dev.json (or the single *.json file in <dir>) and
// <dir>/dev_databases/<db_id>/<db_id>.sqlite.
Dataset load_dataset(const std::filesystem::path& dir);

struct EvalOptions {
  pipeline::PipelineConfig pipeline;
  int workers = 1;
  std::chrono::milliseconds item_timeout{120000};
  schema::ScanOptions scan;
  std::shared_ptr<const index::Embedder> embedder;  // builtin when null
};

struct ItemRecord {
  std::string question_id;
  std::string db_id;
  Difficulty difficulty = Difficulty::kSimple;
  std::string question;
  std::string predicted_sql;  // empty when nothing was answered
  bool first_attempt_correct = false;
  bool final_correct = false;
  int iterations_used = 0;
  std::string failure_detail;
};

struct Tally {
  int items = 0;
  int first_attempt_correct = 0;
  int final_correct = 0;

  double first_attempt_accuracy() const;
  double final_accuracy() const;
};

struct BenchReport {
  std::string dataset_path;
  int skipped_count = 0;
  std::vector<ItemRecord> records;  // dataset order

  Tally overall() const;
  std::map<Difficulty, Tally> by_difficulty() const;
};

// Runs every item in a fresh session. Never throws for per-item failures.
BenchReport evaluate(const Dataset& dataset, llm::Gateway& gateway, const EvalOptions& options = {});

// Scripted backend that answers DATA, echoes the gold SQL of the item whose
// question appears in the prompt, and passes every introspection.
std::shared_ptr<llm::ScriptedBackend> gold_echo_backend(const std::vector<BenchItem>& items);

enum class ReportFormat { kText, kJson, kCsv };

std::optional<ReportFormat> parse_report_format(std::string_view text);

std::string render_report(const BenchReport& report, ReportFormat format);
nlohmann::json to_json(const BenchReport& report);

}  // namespace nlq::bench
